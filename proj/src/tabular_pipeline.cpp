#include "murl/tabular_pipeline.hpp"

#include <cmath>
#include <string>

namespace murl {

MaskRate mask_rate_from_coherence(int num_users, int num_pairs, int rank, double mu0, double mu1,
                                int horizon, double delta, double c) {
    if (num_users <= 0 || num_pairs <= 0 || rank <= 0 || horizon <= 0)
        throw std::invalid_argument("mask_rate_from_coherence: bad dimensions");
    if (delta <= 0.0 || delta >= 1.0)
        throw std::invalid_argument("mask_rate_from_coherence: delta in (0,1) required");
    const double n = num_users;
    const double sa = num_pairs;
    const double incoherence = std::max(mu1 * mu1, mu0);
    const double log_sa = std::log(sa);
    double p = c * incoherence * rank * (n + sa) * log_sa * log_sa *
               std::log(horizon / delta) / (n * sa);
    MaskRate out;
    if (p <= 0.0) {
        out.p = 0.0;
        out.clamped = true;
    } else if (p > 0.5) {
        out.p = 0.5;
        out.clamped = true;
    } else {
        out.p = p;
    }
    return out;
}

namespace {

RewardFunction active_indicator(const std::vector<std::vector<char>>& active, int S, int A) {
    std::vector<Eigen::MatrixXd> vals;
    vals.reserve(active.size());
    for (const auto& cells : active) {
        Eigen::MatrixXd v(S, A);
        for (int s = 0; s < S; ++s)
            for (int a = 0; a < A; ++a) v(s, a) = cells[s * A + a] ? 1.0 : 0.0;
        vals.push_back(std::move(v));
    }
    return RewardFunction(std::move(vals));
}

} // namespace

MaskSamplerResult run_mask_sampler(const TabularMdp& mdp, const RewardMatrixSet& rewards,
                                   const RfModel& rf, double epsilon, double mask_rate,
                                   RngStream rng, int safety_multiplier) {
    if (epsilon <= 0.0) throw std::invalid_argument("run_mask_sampler: epsilon must be positive");
    if (mask_rate <= 0.0 || mask_rate > 0.5)
        throw std::invalid_argument("run_mask_sampler: mask rate outside (0, 1/2]");
    const int S = mdp.num_states;
    const int A = mdp.num_actions;
    const int H = mdp.horizon;
    const int pairs = S * A;
    const int N = rewards.num_users;
    if (static_cast<int>(rewards.matrices.size()) != H)
        throw std::invalid_argument("run_mask_sampler: reward horizon mismatch");

    MaskSamplerResult out;
    out.quota = static_cast<int>(std::ceil(static_cast<double>(N) * mask_rate));
    out.active.assign(H, std::vector<char>(pairs, 1));
    out.counts.assign(H, Eigen::VectorXi::Zero(pairs));
    out.observations.clear();
    for (int h = 0; h < H; ++h) {
        MaskedMatrix m;
        m.values = Eigen::MatrixXd::Zero(N, pairs);
        m.mask.setConstant(N, pairs, false);
        out.observations.push_back(std::move(m));
    }

    if (safety_multiplier < 0)
        throw std::invalid_argument("run_mask_sampler: safety_multiplier must be nonnegative");
    const long cap = static_cast<long>(std::ceil(16.0 * N * mask_rate * pairs * H / epsilon)) *
                     safety_multiplier;

    PlanResult plan = rf_plan(rf, active_indicator(out.active, S, A));
    out.value_at_termination = plan.value;
    while (plan.value > epsilon / 2.0) {
        if (out.trajectories >= cap) {
            long remaining = 0;
            for (const auto& cells : out.active)
                for (char c : cells) remaining += c;
            throw PhaseError("mask sampler exceeded trajectory cap " + std::to_string(cap) +
                             " with " + std::to_string(remaining) +
                             " active cells and planner value " + std::to_string(plan.value));
        }
        const int user = rng.index(N);
        const Trajectory traj = sample_pair_path(mdp, plan.policy, rng);
        ++out.trajectories;
        bool changed = false;
        for (int h = 0; h < H; ++h) {
            const int pair = mdp.pair_index(traj.states[h], traj.actions[h]);
            if (!out.active[h][pair]) continue;
            auto& obs = out.observations[h];
            if (obs.mask(user, pair)) continue;
            obs.values(user, pair) = rewards.entry(h, user, pair);
            obs.mask(user, pair) = true;
            if (++out.counts[h][pair] >= out.quota) {
                out.active[h][pair] = 0;
                changed = true;
            }
        }
        if (changed) {
            plan = rf_plan(rf, active_indicator(out.active, S, A));
            ++out.replans;
            out.value_at_termination = plan.value;
        }
    }
    return out;
}

CompletedRewards complete_rewards(const MaskSamplerResult& sampled, int rank,
                                  const CompletionOptions& opts) {
    CompletedRewards out;
    const int H = static_cast<int>(sampled.observations.size());
    for (int h = 0; h < H; ++h) {
        const auto& obs = sampled.observations[h];
        const int N = obs.rows();
        const int pairs = obs.cols();
        std::vector<int> cols;
        for (int p = 0; p < pairs; ++p)
            if (!sampled.active[h][p]) {
                if (sampled.counts[h][p] != sampled.quota)
                    throw std::invalid_argument(
                        "complete_rewards: retired column lacks exactly quota observations");
                cols.push_back(p);
            }
        Eigen::MatrixXd full = Eigen::MatrixXd::Zero(N, pairs);
        double residual = 0.0;
        if (!cols.empty()) {
            MaskedMatrix sub;
            sub.values.resize(N, static_cast<int>(cols.size()));
            sub.mask.resize(N, static_cast<int>(cols.size()));
            for (std::size_t j = 0; j < cols.size(); ++j) {
                sub.values.col(j) = obs.values.col(cols[j]);
                sub.mask.col(j) = obs.mask.col(cols[j]);
            }
            CompletionOptions local = opts;
            local.seed = opts.seed + static_cast<std::uint64_t>(h) * 0x9E3779B9ULL;
            const CompletionResult cr = complete_fixed_rank(sub, rank, local);
            if (!cr.converged)
                throw PhaseError("reward completion failed at step " + std::to_string(h) +
                                 " with residual " + std::to_string(cr.residual));
            residual = cr.residual;
            for (std::size_t j = 0; j < cols.size(); ++j) {
                for (int i = 0; i < N; ++i) {
                    double v = cr.completed(i, j);
                    const double clipped = std::min(1.0, std::max(0.0, v));
                    out.max_clip = std::max(out.max_clip, std::abs(v - clipped));
                    full(i, cols[j]) = clipped;
                }
            }
        }
        out.full.push_back(std::move(full));
        out.completed_cols.push_back(std::move(cols));
        out.residuals.push_back(residual);
    }
    return out;
}

TabularPipelineResult run_tabular_pipeline(const TabularInstance& inst,
                                           const TabularPipelineConfig& cfg, std::uint64_t seed) {
    TabularPipelineResult out;
    RngStream root(seed);

    out.rf = rf_fit(inst.mdp, cfg.rf_mode, cfg.rf_budget, root.child("reward-free"));

    if (cfg.mask_rate > 0.0) {
        out.rate.p = cfg.mask_rate;
    } else {
        double mu0 = 0.0, mu1 = 0.0;
        for (const auto& rep : inst.coherence) {
            mu0 = std::max(mu0, rep.mu0);
            mu1 = std::max(mu1, rep.mu1);
        }
        out.rate = mask_rate_from_coherence(inst.rewards.num_users, inst.mdp.num_pairs(),
                                          inst.rewards.rank_bound, mu0, mu1, inst.mdp.horizon,
                                          cfg.delta, cfg.mask_rate_c);
        if (out.rate.p <= 0.0)
            throw PhaseError("mask rate degenerated to zero; instance too small for the formula");
    }

    out.sampled = run_mask_sampler(inst.mdp, inst.rewards, out.rf, cfg.epsilon, out.rate.p,
                                   root.child("mask-sampler"), cfg.safety_multiplier);
    out.completed = complete_rewards(out.sampled, inst.rewards.rank_bound, cfg.completion);

    const int S = inst.mdp.num_states;
    const int A = inst.mdp.num_actions;
    for (int u = 0; u < inst.rewards.num_users; ++u) {
        std::vector<Eigen::MatrixXd> vals;
        vals.reserve(inst.mdp.horizon);
        for (int h = 0; h < inst.mdp.horizon; ++h) {
            Eigen::MatrixXd v(S, A);
            for (int s = 0; s < S; ++s)
                for (int a = 0; a < A; ++a) v(s, a) = out.completed.full[h](u, s * A + a);
            vals.push_back(std::move(v));
        }
        out.user_plans.push_back(rf_plan(out.rf, RewardFunction(std::move(vals))));
    }
    return out;
}

std::vector<long> baseline_per_user_budgets(const TabularInstance& inst, double epsilon,
                                            std::uint64_t seed, long initial_budget,
                                            long max_budget) {
    RngStream root(seed);
    std::vector<long> budgets;
    const int N = inst.rewards.num_users;
    for (int u = 0; u < N; ++u) {
        const RewardFunction own =
            inst.rewards.user_rewards(u, inst.mdp.num_states, inst.mdp.num_actions);
        const double best = optimal_policy(inst.mdp, own).value;
        long budget = initial_budget;
        bool done = false;
        while (!done) {
            RngStream run = root.child(static_cast<std::uint64_t>(u)).child(
                static_cast<std::uint64_t>(budget));
            const RfModel model = rf_fit(inst.mdp, RfMode::empirical, budget, run);
            const PlanResult plan = rf_plan(model, own);
            const double achieved = exact_value(inst.mdp, plan.policy, own);
            if (best - achieved <= epsilon) {
                budgets.push_back(budget);
                done = true;
            } else if (budget >= max_budget) {
                throw PhaseError("baseline explorer failed to reach epsilon for user " +
                                 std::to_string(u) + " within " + std::to_string(max_budget) +
                                 " episodes");
            } else {
                budget *= 2;
            }
        }
    }
    return budgets;
}

} // namespace murl
