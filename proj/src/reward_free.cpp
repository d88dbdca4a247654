#include "murl/reward_free.hpp"

#include <limits>
#include <stdexcept>

namespace murl {

namespace {

// visit counts -> empirical rows; unvisited rows become uniform and are listed
TabularMdp model_from_counts(const TabularMdp& shape,
                             const std::vector<Eigen::MatrixXd>& next_counts,
                             const Eigen::VectorXd& init_counts,
                             std::vector<std::array<int, 3>>& unvisited) {
    const int S = shape.num_states;
    const int A = shape.num_actions;
    std::vector<Eigen::MatrixXd> trans;
    for (int h = 0; h + 1 < shape.horizon; ++h) {
        Eigen::MatrixXd t(S * A, S);
        for (int s = 0; s < S; ++s)
            for (int a = 0; a < A; ++a) {
                const int row = shape.pair_index(s, a);
                const double total = next_counts[h].row(row).sum();
                if (total > 0.0) {
                    t.row(row) = next_counts[h].row(row) / total;
                } else {
                    t.row(row).setConstant(1.0 / S);
                    unvisited.push_back({h, s, a});
                }
            }
        trans.push_back(std::move(t));
    }
    Eigen::VectorXd init;
    if (init_counts.sum() > 0.0)
        init = init_counts / init_counts.sum();
    else
        init = Eigen::VectorXd::Constant(S, 1.0 / S);
    return TabularMdp(S, A, shape.horizon, std::move(trans), std::move(init));
}

} // namespace

RfModel rf_fit(const TabularMdp& truth, RfMode mode, long budget, RngStream rng) {
    RfModel out;
    out.mode = mode;
    out.visit_counts.assign(truth.horizon,
                            Eigen::MatrixXi::Zero(truth.num_states, truth.num_actions));
    if (mode == RfMode::exact) {
        out.model = truth;
        return out;
    }
    if (budget < 0) throw std::invalid_argument("rf_fit: negative budget");

    const int S = truth.num_states;
    const int A = truth.num_actions;
    const int H = truth.horizon;
    std::vector<Eigen::MatrixXd> next_counts(std::max(H - 1, 0), Eigen::MatrixXd::Zero(S * A, S));
    Eigen::VectorXd init_counts = Eigen::VectorXd::Zero(S);

    for (long ep = 0; ep < budget; ++ep) {
        // indicator reward on the currently least-visited transition cells
        std::vector<std::array<int, 3>> dummy;
        const TabularMdp current = model_from_counts(truth, next_counts, init_counts, dummy);
        TabularPolicy probe;
        if (H > 1) {
            int min_count = std::numeric_limits<int>::max();
            for (int h = 0; h + 1 < H; ++h)
                min_count = std::min(min_count, out.visit_counts[h].minCoeff());
            std::vector<Eigen::MatrixXd> target(H, Eigen::MatrixXd::Zero(S, A));
            for (int h = 0; h + 1 < H; ++h)
                target[h] = (out.visit_counts[h].array() == min_count).cast<double>();
            probe = rf_plan_on(current, RewardFunction(std::move(target)));
        } else {
            probe = uniform_policy(S, A, H);
        }

        RngStream ep_rng = rng.child(static_cast<std::uint64_t>(ep));
        const Trajectory traj = sample_pair_path(truth, probe, ep_rng);
        init_counts[traj.states[0]] += 1.0;
        for (int h = 0; h < H; ++h) {
            out.visit_counts[h](traj.states[h], traj.actions[h]) += 1;
            if (h + 1 < H)
                next_counts[h](truth.pair_index(traj.states[h], traj.actions[h]),
                               traj.states[h + 1]) += 1.0;
        }
    }
    out.episodes_used = budget;
    out.model = model_from_counts(truth, next_counts, init_counts, out.unvisited);
    out.low_confidence = !out.unvisited.empty() || budget == 0;
    return out;
}

TabularPolicy rf_plan_on(const TabularMdp& model, const RewardFunction& reward) {
    return optimal_policy(model, reward).policy;
}

PlanResult rf_plan(const RfModel& model, const RewardFunction& reward) {
    return optimal_policy(model.model, reward);
}

} // namespace murl
