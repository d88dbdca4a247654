#include "murl/linear_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

namespace murl {

namespace {

// Acklam's rational approximation to the standard normal quantile.
double inverse_normal_cdf(double p) {
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425;
    if (p < plow) {
        const double q = std::sqrt(-2.0 * std::log(p));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    if (p > 1.0 - plow) {
        const double q = std::sqrt(-2.0 * std::log(1.0 - p));
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    const double q = p - 0.5;
    const double r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

// R_d Kronecker sequence: alpha_j = phi^{-(j+1)} for the root of x^{d+1} = x + 1.
Eigen::VectorXd kronecker_point(int dims, long n) {
    double g = 1.5;
    for (int it = 0; it < 64; ++it) g = std::pow(1.0 + g, 1.0 / (dims + 1));
    Eigen::VectorXd u(dims);
    double alpha = 1.0;
    for (int j = 0; j < dims; ++j) {
        alpha /= g;
        const double val = 0.5 + alpha * static_cast<double>(n + 1);
        u[j] = val - std::floor(val);
    }
    return u;
}

Eigen::VectorXd sphere_from_unit_cube(const Eigen::VectorXd& u) {
    Eigen::VectorXd z(u.size());
    for (int i = 0; i < u.size(); ++i)
        z[i] = inverse_normal_cdf(std::min(1.0 - 1e-12, std::max(1e-12, u[i])));
    const double norm = z.norm();
    if (norm < 1e-12) {
        Eigen::VectorXd e = Eigen::VectorXd::Zero(u.size());
        e[0] = 1.0;
        return e;
    }
    return z / norm;
}

} // namespace

Eigen::VectorXd low_discrepancy_sphere(int d, int n) {
    return sphere_from_unit_cube(kronecker_point(d, n));
}

std::vector<Eigen::VectorXd> direction_set(int d, int extra) {
    std::vector<Eigen::VectorXd> dirs;
    dirs.reserve(2 * d + std::max(extra, 0));
    for (int i = 0; i < d; ++i) {
        Eigen::VectorXd e = Eigen::VectorXd::Zero(d);
        e[i] = 1.0;
        dirs.push_back(e);
        dirs.push_back(-e);
    }
    for (int n = 0; n < extra; ++n) dirs.push_back(low_discrepancy_sphere(d, n));
    return dirs;
}

TabularPolicy SoftmaxPolicy::to_tabular(const LinearMdpSpec& features, int num_states,
                                        int num_actions) const {
    std::vector<Eigen::MatrixXd> kernels;
    kernels.reserve(u.size());
    for (std::size_t h = 0; h < u.size(); ++h) {
        Eigen::MatrixXd k(num_states, num_actions);
        for (int s = 0; s < num_states; ++s) {
            Eigen::VectorXd logits(num_actions);
            for (int a = 0; a < num_actions; ++a) {
                const int pair = s * num_actions + a;
                logits[a] = features.phi.row(pair).dot(u[h]) + features.psi.row(pair).dot(v[h]);
            }
            const double top = logits.maxCoeff();
            Eigen::VectorXd w = (logits.array() - top).exp();
            k.row(s) = (w / w.sum()).transpose();
        }
        kernels.push_back(std::move(k));
    }
    return TabularPolicy(std::move(kernels));
}

double softmax_radius(int d, int horizon, int num_actions, double eta, double c_mu) {
    if (eta <= 0.0) throw std::invalid_argument("softmax_radius: eta must be positive");
    return 2.0 * d * horizon * c_mu * std::log(2.0 * horizon * num_actions / eta) / eta;
}

double tv_upper_bound(double du_l2, double dv_linf) {
    return 0.5 * (std::exp(2.0 * du_l2 + 2.0 * dv_linf) - 1.0);
}

PolicyNet build_policy_net(int d, double eta, double radius, int budget, int probes) {
    if (budget < 1) throw std::invalid_argument("build_policy_net: budget must be positive");
    if (radius < 0.0) throw std::invalid_argument("build_policy_net: negative radius");
    PolicyNet net;
    net.eta = eta;
    net.radius = radius;

    PolicyNetEntry zero;
    zero.u = Eigen::VectorXd::Zero(d);
    zero.v = Eigen::VectorXd::Zero(d);
    net.kernels.push_back(zero);

    const int dims = 2 * d + 2;
    auto ball_pair = [&](long n) {
        const Eigen::VectorXd cube = kronecker_point(dims, n);
        PolicyNetEntry e;
        const Eigen::VectorXd du = sphere_from_unit_cube(cube.head(d));
        const Eigen::VectorXd dv = sphere_from_unit_cube(cube.segment(d, d));
        const double ru = radius * std::pow(cube[2 * d], 1.0 / d);
        const double rv = radius * std::pow(cube[2 * d + 1], 1.0 / d);
        e.u = ru * du;
        e.v = rv * dv;
        return e;
    };

    if (eta < 2.0) {
        for (int n = 0; static_cast<int>(net.kernels.size()) < budget; ++n)
            net.kernels.push_back(ball_pair(n));
    }

    double cover = 0.0;
    for (int p = 0; p < probes; ++p) {
        const PolicyNetEntry probe = ball_pair(budget + p);
        double best = std::numeric_limits<double>::infinity();
        for (const auto& k : net.kernels) {
            const double du = (probe.u - k.u).norm();
            const double dv = (probe.v - k.v).lpNorm<Eigen::Infinity>();
            // total variation never exceeds 1, so the exp bound clamps there
            best = std::min(best, std::min(1.0, tv_upper_bound(du, dv)));
        }
        cover = std::max(cover, best);
    }
    net.covering_radius = cover;
    net.log_card_ratio =
        eta < 1.0 ? std::log(static_cast<double>(net.kernels.size())) / std::log(1.0 / eta) : 0.0;
    return net;
}

long grammian_t_bound(int d, double kappa_sq, double c) {
    if (d <= 0 || kappa_sq <= 0.0) throw std::invalid_argument("grammian_t_bound: bad arguments");
    const double raw = c * d * kappa_sq * std::log1p(d * kappa_sq);
    return static_cast<long>(std::ceil(raw));
}

GrammianData run_well_conditioned_sampler(const TabularMdp& mdp, const LinearMdpSpec& features,
                                          const RfModel& rf, double kappa_sq, long t_budget,
                                          RngStream rng) {
    if (mdp.horizon < 2)
        throw std::invalid_argument("run_well_conditioned_sampler: horizon must be at least 2");
    if (t_budget <= 0) throw std::invalid_argument("run_well_conditioned_sampler: empty budget");
    const int d = features.feature_dim;
    const int S = mdp.num_states;
    const int A = mdp.num_actions;

    GrammianData data;
    for (int hb = 0; hb + 1 < mdp.horizon; ++hb) {
        GrammianBlock block;
        block.phis.resize(t_budget, d);
        block.next_states.resize(t_budget);
        block.init_states.resize(t_budget);
        RngStream block_rng = rng.child(static_cast<std::uint64_t>(hb));

        Eigen::MatrixXd q = Eigen::MatrixXd::Identity(d, d);
        auto plan_on_q = [&](const Eigen::MatrixXd& proj) {
            std::vector<Eigen::MatrixXd> vals(mdp.horizon, Eigen::MatrixXd::Zero(S, A));
            for (int s = 0; s < S; ++s)
                for (int a = 0; a < A; ++a) {
                    const Eigen::VectorXd f = features.phi.row(s * A + a).transpose();
                    vals[hb](s, a) = (proj * f).squaredNorm();
                }
            return rf_plan(rf, RewardFunction(std::move(vals))).policy;
        };
        TabularPolicy policy = plan_on_q(q);

        Eigen::MatrixXd g = Eigen::MatrixXd::Zero(d, d);
        for (long t = 0; t < t_budget; ++t) {
            const Trajectory traj = sample_pair_path(mdp, policy, block_rng);
            const int pair = mdp.pair_index(traj.states[hb], traj.actions[hb]);
            block.phis.row(t) = features.phi.row(pair);
            block.next_states[t] = traj.states[hb + 1];
            block.init_states[t] = traj.states[0];
            g.noalias() +=
                features.phi.row(pair).transpose() * features.phi.row(pair);

            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(g);
            const Eigen::VectorXd& evals = eig.eigenvalues();
            int deficient = 0;
            for (int i = 0; i < d; ++i)
                if (evals[i] < kappa_sq) ++deficient;
            if (deficient > 0) {
                const Eigen::MatrixXd low = eig.eigenvectors().leftCols(deficient);
                Eigen::MatrixXd q_new = low * low.transpose();
                if ((q_new - q).norm() > 1e-12) {
                    q = std::move(q_new);
                    policy = plan_on_q(q);
                    ++block.replans;
                }
            }
        }

        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(g);
        block.grammian = std::move(g);
        block.lambda_min = eig.eigenvalues()[0];
        block.min_direction = eig.eigenvectors().col(0);
        block.well_conditioned = block.lambda_min >= kappa_sq;
        data.blocks.push_back(std::move(block));
    }
    return data;
}

namespace {

// policy-average of a (S*A) x k table: rows become states
Eigen::MatrixXd policy_average(const Eigen::MatrixXd& g, const Eigen::MatrixXd& pi,
                               int num_actions) {
    const int S = static_cast<int>(pi.rows());
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(S, g.cols());
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < num_actions; ++a)
            out.row(s).noalias() += pi(s, a) * g.row(s * num_actions + a);
    return out;
}

} // namespace

Eigen::VectorXd t_exact_initial(const Eigen::MatrixXd& g, const Eigen::MatrixXd& pi,
                                const Eigen::VectorXd& init_dist, int num_actions) {
    return policy_average(g, pi, num_actions).transpose() * init_dist;
}

Eigen::VectorXd t_exact_step(const Eigen::MatrixXd& g, const Eigen::MatrixXd& pi,
                             const Eigen::MatrixXd& mu_prev, const Eigen::VectorXd& nu,
                             int num_actions) {
    const Eigen::MatrixXd avg = policy_average(g, pi, num_actions); // S x k
    return avg.transpose() * (mu_prev.transpose() * nu);
}

Eigen::VectorXd t_hat_initial(const Eigen::MatrixXd& g, const Eigen::MatrixXd& pi,
                              const std::vector<int>& init_states, int num_actions) {
    if (init_states.empty()) throw std::invalid_argument("t_hat_initial: no samples");
    const Eigen::MatrixXd avg = policy_average(g, pi, num_actions);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(g.cols());
    for (int s : init_states) out += avg.row(s).transpose();
    return out / static_cast<double>(init_states.size());
}

Eigen::VectorXd alpha_weights(const GrammianBlock& block, const Eigen::VectorXd& nu) {
    const Eigen::VectorXd w = block.grammian.ldlt().solve(nu);
    return block.phis * w;
}

Eigen::VectorXd t_hat_step(const Eigen::MatrixXd& g, const Eigen::MatrixXd& pi,
                           const GrammianBlock& block, const Eigen::VectorXd& nu,
                           int num_actions) {
    const Eigen::MatrixXd avg = policy_average(g, pi, num_actions);
    const Eigen::VectorXd alpha = alpha_weights(block, nu);
    Eigen::VectorXd state_weights = Eigen::VectorXd::Zero(avg.rows());
    for (long t = 0; t < static_cast<long>(block.next_states.size()); ++t)
        state_weights[block.next_states[t]] += alpha[t];
    return avg.transpose() * state_weights;
}

namespace {

// project onto the unit l2 ball; returns the l1 distance moved
double project_unit_ball(Eigen::VectorXd& v) {
    const double norm = v.norm();
    if (norm <= 1.0) return 0.0;
    const Eigen::VectorXd before = v;
    v /= norm;
    return (before - v).lpNorm<1>();
}

} // namespace

double e_hat(const std::vector<Eigen::MatrixXd>& step_kernels, const LinearMdpSpec& features,
             const GrammianData& data, const Eigen::VectorXd& nu, int level, int num_actions) {
    if (level < 1 || static_cast<std::size_t>(level) > step_kernels.size())
        throw std::invalid_argument("e_hat: level out of range");
    if (level >= 2 && static_cast<std::size_t>(level - 1) > data.blocks.size())
        throw std::invalid_argument("e_hat: missing sampler blocks for level");
    const auto& init_states = data.blocks.front().init_states;
    Eigen::VectorXd chain = t_hat_initial(features.phi, step_kernels[0], init_states, num_actions);
    if (level == 1) return (chain - nu).lpNorm<1>();
    double slack = project_unit_ball(chain);
    for (int j = 2; j < level; ++j) {
        chain = t_hat_step(features.phi, step_kernels[j - 1], data.blocks[j - 2], chain,
                           num_actions);
        slack += project_unit_ball(chain);
    }
    const Eigen::VectorXd last = t_hat_step(features.phi, step_kernels[level - 1],
                                            data.blocks[level - 2], chain, num_actions);
    return slack + (last - nu).lpNorm<1>();
}

double f_eval(const Eigen::VectorXd& x, const Eigen::VectorXd& psi, double xi) {
    const double z = x.dot(psi);
    const double d = static_cast<double>(x.size());
    return std::abs(z) * std::sqrt(d) - xi * d * z * z;
}

namespace {

struct ChainCandidate {
    Eigen::VectorXd nu;
    double slack = 0.0;
    std::vector<int> prefix;
};

std::vector<ChainCandidate> dedup_and_cap(std::vector<ChainCandidate> cands, double resolution,
                                          int cap) {
    std::map<std::vector<long>, ChainCandidate> keep;
    for (auto& c : cands) {
        std::vector<long> key(c.nu.size());
        for (int i = 0; i < c.nu.size(); ++i)
            key[i] = std::lround(c.nu[i] / std::max(resolution, 1e-12));
        auto it = keep.find(key);
        if (it == keep.end() || c.slack < it->second.slack) keep[std::move(key)] = std::move(c);
    }
    std::vector<ChainCandidate> out;
    out.reserve(keep.size());
    for (auto& [key, c] : keep) out.push_back(std::move(c));
    std::sort(out.begin(), out.end(), [](const ChainCandidate& a, const ChainCandidate& b) {
        if (a.slack != b.slack) return a.slack < b.slack;
        return a.prefix < b.prefix;
    });
    if (static_cast<int>(out.size()) > cap) out.resize(cap);
    return out;
}

} // namespace

PolicySearchResult policy_search_fh(int level, const GrammianData& data,
                                    const LinearMdpSpec& features, const PolicyNet& net,
                                    const SearchConfig& cfg, int num_states, int num_actions,
                                    int horizon) {
    if (level < 1 || level > horizon)
        throw std::invalid_argument("policy_search_fh: level out of range");
    if (data.blocks.empty()) throw std::invalid_argument("policy_search_fh: no sampler data");
    const int d = features.feature_dim;
    const auto dirs = direction_set(d, cfg.extra_directions);
    const int pairs = num_states * num_actions;

    Eigen::MatrixXd f_table(pairs, static_cast<int>(dirs.size()));
    for (int p = 0; p < pairs; ++p) {
        const Eigen::VectorXd psi = features.psi.row(p).transpose();
        for (std::size_t xi_idx = 0; xi_idx < dirs.size(); ++xi_idx)
            f_table(p, static_cast<int>(xi_idx)) = f_eval(dirs[xi_idx], psi, cfg.xi);
    }

    // per net kernel: tabular kernel, policy-averaged f table and phi table
    const int K = static_cast<int>(net.kernels.size());
    std::vector<Eigen::MatrixXd> kernel_tab(K), w_table(K), phi_bar(K);
    for (int k = 0; k < K; ++k) {
        SoftmaxPolicy one;
        one.u = {net.kernels[k].u};
        one.v = {net.kernels[k].v};
        kernel_tab[k] = one.to_tabular(features, num_states, num_actions).kernels[0];
        w_table[k] = policy_average(f_table, kernel_tab[k], num_actions);
        phi_bar[k] = policy_average(features.phi, kernel_tab[k], num_actions);
    }

    PolicySearchResult best;
    best.certified = -std::numeric_limits<double>::infinity();

    auto finish = [&](int kernel_idx, const std::vector<int>& prefix, double value,
                      const Eigen::VectorXd& nu, double slack) {
        best.certified = value;
        best.kernel_index = kernel_idx;
        best.prefix_kernels = prefix;
        best.nu = nu;
        best.slack = slack;
        best.policy.u.assign(horizon, Eigen::VectorXd::Zero(d));
        best.policy.v.assign(horizon, Eigen::VectorXd::Zero(d));
        for (std::size_t j = 0; j < prefix.size(); ++j) {
            best.policy.u[j] = net.kernels[prefix[j]].u;
            best.policy.v[j] = net.kernels[prefix[j]].v;
        }
        best.policy.u[level - 1] = net.kernels[kernel_idx].u;
        best.policy.v[level - 1] = net.kernels[kernel_idx].v;
    };

    if (level == 1) {
        const auto& init_states = data.blocks.front().init_states;
        for (int k = 0; k < K; ++k) {
            Eigen::VectorXd mean = Eigen::VectorXd::Zero(f_table.cols());
            for (int s : init_states) mean += w_table[k].row(s).transpose();
            mean /= static_cast<double>(init_states.size());
            const double value = mean.minCoeff();
            if (value > best.certified) finish(k, {}, value, Eigen::VectorXd(), 0.0);
        }
        return best;
    }

    // chain endpoints reachable through net prefixes, deduped on a nu grid
    std::vector<ChainCandidate> cands;
    {
        const auto& init_states = data.blocks.front().init_states;
        for (int k = 0; k < K; ++k) {
            ChainCandidate c;
            Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
            for (int s : init_states) mean += phi_bar[k].row(s).transpose();
            c.nu = mean / static_cast<double>(init_states.size());
            c.slack = project_unit_ball(c.nu);
            c.prefix = {k};
            cands.push_back(std::move(c));
        }
        cands = dedup_and_cap(std::move(cands), cfg.nu_resolution, cfg.beam_cap);
    }
    for (int j = 2; j < level; ++j) {
        std::vector<ChainCandidate> next;
        for (const auto& c : cands) {
            const Eigen::VectorXd alpha = alpha_weights(data.blocks[j - 2], c.nu);
            Eigen::VectorXd state_weights = Eigen::VectorXd::Zero(num_states);
            for (long t = 0; t < static_cast<long>(data.blocks[j - 2].next_states.size()); ++t)
                state_weights[data.blocks[j - 2].next_states[t]] += alpha[t];
            for (int k = 0; k < K; ++k) {
                ChainCandidate n;
                n.nu = phi_bar[k].transpose() * state_weights;
                n.slack = c.slack + project_unit_ball(n.nu);
                n.prefix = c.prefix;
                n.prefix.push_back(k);
                next.push_back(std::move(n));
            }
        }
        cands = dedup_and_cap(std::move(next), cfg.nu_resolution, cfg.beam_cap);
    }

    bool any_feasible = false;
    const GrammianBlock& last_block = data.blocks[level - 2];
    for (const auto& c : cands) {
        if (c.slack > cfg.eta0) continue;
        any_feasible = true;
        const Eigen::VectorXd alpha = alpha_weights(last_block, c.nu);
        Eigen::VectorXd state_weights = Eigen::VectorXd::Zero(num_states);
        for (long t = 0; t < static_cast<long>(last_block.next_states.size()); ++t)
            state_weights[last_block.next_states[t]] += alpha[t];
        for (int k = 0; k < K; ++k) {
            const Eigen::VectorXd objective = w_table[k].transpose() * state_weights;
            const double value = objective.minCoeff();
            if (value > best.certified) finish(k, c.prefix, value, c.nu, c.slack);
        }
    }
    if (!any_feasible)
        throw PhaseError("policy_search_fh: no chain endpoint satisfies the feasibility "
                         "threshold at level " +
                         std::to_string(level));
    return best;
}

double j_functional(const TabularMdp& mdp, const LinearMdpSpec& features,
                    const TabularPolicy& policy, int level, double xi,
                    const std::vector<Eigen::VectorXd>& directions) {
    if (level < 1 || level > mdp.horizon)
        throw std::invalid_argument("j_functional: level out of range");
    const OccupancyProfile occ = occupancy(mdp, policy);
    const Eigen::MatrixXd& dist = occ.pair_dist[level - 1];
    double worst = std::numeric_limits<double>::infinity();
    for (const auto& x : directions) {
        double mass = 0.0;
        for (int s = 0; s < mdp.num_states; ++s)
            for (int a = 0; a < mdp.num_actions; ++a) {
                const double w = dist(s, a);
                if (w == 0.0) continue;
                mass += w * f_eval(x, features.psi.row(mdp.pair_index(s, a)).transpose(), xi);
            }
        worst = std::min(worst, mass);
    }
    return worst;
}

DistPropReport dist_prop_check(const TabularMdp& mdp, const LinearMdpSpec& features,
                               const TabularPolicy& policy, int level, double zeta, double xi,
                               const std::vector<Eigen::VectorXd>& directions) {
    if (zeta <= 0.0 || xi <= 0.0)
        throw std::invalid_argument("dist_prop_check: zeta and xi must be positive");
    const int d = features.feature_dim;
    const OccupancyProfile occ = occupancy(mdp, policy);
    const Eigen::MatrixXd& dist = occ.pair_dist[level - 1];

    Eigen::MatrixXd second = Eigen::MatrixXd::Zero(d, d);
    DistPropReport rep;
    rep.direction_margin = std::numeric_limits<double>::infinity();
    for (int s = 0; s < mdp.num_states; ++s)
        for (int a = 0; a < mdp.num_actions; ++a) {
            const double w = dist(s, a);
            if (w == 0.0) continue;
            const Eigen::VectorXd psi = features.psi.row(mdp.pair_index(s, a)).transpose();
            second.noalias() += w * psi * psi.transpose();
        }
    for (const auto& x : directions) {
        double mean_abs = 0.0;
        for (int s = 0; s < mdp.num_states; ++s)
            for (int a = 0; a < mdp.num_actions; ++a) {
                const double w = dist(s, a);
                if (w == 0.0) continue;
                mean_abs += w * std::abs(x.dot(features.psi.row(mdp.pair_index(s, a)).transpose()));
            }
        const double margin = std::sqrt(static_cast<double>(d)) * mean_abs / zeta;
        if (margin < rep.direction_margin) {
            rep.direction_margin = margin;
            rep.worst_direction = x;
        }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(second);
    const double lmax = eig.eigenvalues().maxCoeff();
    rep.covariance_margin = lmax > 0.0 ? 1.0 / (lmax * d * xi * xi)
                                       : std::numeric_limits<double>::infinity();
    rep.pass = rep.direction_margin >= 1.0 && rep.covariance_margin >= 1.0;
    return rep;
}

std::vector<PlanResult> plan_users_linear(const std::vector<Eigen::MatrixXd>& theta_hat,
                                          const LinearMdpSpec& features, const RfModel& rf,
                                          int num_states, int num_actions, double* max_clip) {
    if (theta_hat.empty()) throw std::invalid_argument("plan_users_linear: no estimates");
    const int num_users = static_cast<int>(theta_hat.front().rows());
    double clip = 0.0;
    std::vector<PlanResult> plans;
    plans.reserve(num_users);
    for (int u = 0; u < num_users; ++u) {
        std::vector<Eigen::MatrixXd> vals;
        vals.reserve(theta_hat.size());
        for (const auto& th : theta_hat) {
            Eigen::MatrixXd v(num_states, num_actions);
            for (int s = 0; s < num_states; ++s)
                for (int a = 0; a < num_actions; ++a) {
                    const double raw =
                        th.row(u).dot(features.psi.row(s * num_actions + a));
                    const double clamped = std::min(1.0, std::max(0.0, raw));
                    clip = std::max(clip, std::abs(raw - clamped));
                    v(s, a) = clamped;
                }
            vals.push_back(std::move(v));
        }
        plans.push_back(rf_plan(rf, RewardFunction(std::move(vals))));
    }
    if (max_clip) *max_clip = clip;
    return plans;
}

LinearPipelineResult run_linear_pipeline(const LinearInstance& inst,
                                         const LinearPipelineConfig& cfg, std::uint64_t seed) {
    const TabularMdp& mdp = inst.mdp;
    if (mdp.horizon < 2)
        throw std::invalid_argument("run_linear_pipeline: horizon must be at least 2");
    const int S = mdp.num_states;
    const int A = mdp.num_actions;
    const int d = inst.features.feature_dim;
    RngStream root(seed);

    LinearPipelineResult out;
    out.rf = rf_fit(mdp, cfg.rf_mode, cfg.rf_budget, root.child("reward-free"));

    const long t_budget =
        cfg.grammian_t > 0 ? cfg.grammian_t : grammian_t_bound(d, cfg.kappa_sq);
    out.grammian = run_well_conditioned_sampler(mdp, inst.features, out.rf, cfg.kappa_sq,
                                                t_budget, root.child("grammian"));
    for (std::size_t hb = 0; hb < out.grammian.blocks.size(); ++hb) {
        const auto& block = out.grammian.blocks[hb];
        if (!block.well_conditioned) {
            std::string dir = "[";
            for (int i = 0; i < block.min_direction.size(); ++i) {
                if (i) dir += ", ";
                dir += std::to_string(block.min_direction[i]);
            }
            dir += "]";
            throw PhaseError("feature direction " + dir + " unreachable at step " +
                             std::to_string(hb + 1) + ": smallest Grammian eigenvalue " +
                             std::to_string(block.lambda_min) + " below threshold " +
                             std::to_string(cfg.kappa_sq));
        }
    }

    const double radius =
        cfg.radius > 0.0 ? cfg.radius : softmax_radius(d, mdp.horizon, A, cfg.eta);
    out.net = build_policy_net(d, cfg.eta, radius, cfg.net_budget);

    const auto dirs = direction_set(d, cfg.search.extra_directions);
    RngStream rowwise_rng = root.child("rowwise");
    for (int level = 1; level <= mdp.horizon; ++level) {
        PolicySearchResult search =
            policy_search_fh(level, out.grammian, inst.features, out.net, cfg.search, S, A,
                             mdp.horizon);
        const TabularPolicy tab = search.policy.to_tabular(inst.features, S, A);

        // exact-occupancy constants for the sample schedule
        const DistPropReport probe = dist_prop_check(mdp, inst.features, tab, level, 1.0, 1.0, dirs);
        const double zeta_hat = probe.direction_margin;
        const double xi_hat = std::sqrt(probe.covariance_margin);
        if (zeta_hat <= 0.0)
            throw PhaseError("searched policy at level " + std::to_string(level) +
                             " leaves a feature direction with zero mass");
        out.searched.push_back(std::move(search));
        out.zeta_measured.push_back(zeta_hat);
        out.xi_measured.push_back(xi_hat);

        MeasurementFn oracle = [&, level](int row, RngStream& rs) {
            const Trajectory traj = sample_pair_path(mdp, tab, rs);
            const int pair = mdp.pair_index(traj.states[level - 1], traj.actions[level - 1]);
            const Eigen::VectorXd psi = inst.features.psi.row(pair).transpose();
            return std::make_pair(psi, inst.rewards.entry(level - 1, row, pair));
        };
        RowwiseConfig rcfg;
        rcfg.num_rows = inst.rewards.num_users;
        rcfg.feature_dim = d;
        rcfg.rank = inst.rank_bound;
        rcfg.zeta = zeta_hat;
        rcfg.xi = xi_hat;
        rcfg.delta = cfg.delta;
        rcfg.c = cfg.kt_c;
        rcfg.verify_k = cfg.verify_k;
        rcfg.restarts = cfg.rowwise_restarts;
        RowwiseResult rres =
            run_estimator(oracle, rcfg, rowwise_rng.child(static_cast<std::uint64_t>(level)));
        out.theta_hat.push_back(rres.theta_hat);
        out.rowwise.push_back(std::move(rres));
    }

    out.user_plans = plan_users_linear(out.theta_hat, inst.features, out.rf, S, A,
                                       &out.max_reward_clip);
    return out;
}

} // namespace murl
