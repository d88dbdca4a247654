#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "murl/completion.hpp"
#include "murl/instances.hpp"
#include "murl/linear_pipeline.hpp"
#include "murl/mdp.hpp"
#include "murl/report.hpp"
#include "murl/rowwise.hpp"
#include "murl/tabular_pipeline.hpp"

namespace {

using murl::Json;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CommonOpts {
    std::string config_path;
    std::string bundle_path;
    std::string out_dir;
    std::string mode;
    std::uint64_t seed = 1;
    int seeds = 1;
};

std::string resolve_out_dir(const std::string& cli_value) {
    if (!cli_value.empty()) return cli_value;
    if (const char* env = std::getenv("MURL_OUT_DIR"); env && *env) return env;
    return ".";
}

std::string join_path(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

Json load_config(const std::string& path) {
    if (path.empty()) throw ConfigError("--config is required for this command");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config: " + path);
    Json j = Json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config is not valid JSON: " + path);
    if (!j.is_object()) throw ConfigError("config root must be an object");
    return j;
}

void check_keys(const Json& j, std::initializer_list<const char*> allowed, const char* what) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) ok = true;
        if (!ok) throw ConfigError(std::string(what) + ": unknown key '" + it.key() + "'");
    }
}

template <typename T>
T get_or(const Json& j, const char* key, T fallback) {
    auto it = j.find(key);
    if (it == j.end()) return fallback;
    try {
        return it->get<T>();
    } catch (const Json::exception&) {
        throw ConfigError(std::string("config key '") + key + "' has the wrong type");
    }
}

const Json& section(const Json& cfg, const char* name) {
    static const Json empty = Json::object();
    auto it = cfg.find(name);
    if (it == cfg.end()) return empty;
    if (!it->is_object()) throw ConfigError(std::string("config section '") + name +
                                            "' must be an object");
    return *it;
}

std::string mode_of(const Json& cfg, const CommonOpts& opts) {
    std::string mode = opts.mode.empty() ? get_or<std::string>(cfg, "mode", "") : opts.mode;
    if (mode.empty()) throw ConfigError("mode missing: set config \"mode\" or pass --mode");
    return mode;
}

murl::RfMode rf_mode_from(const std::string& s) {
    if (s == "exact") return murl::RfMode::exact;
    if (s == "empirical") return murl::RfMode::empirical;
    throw ConfigError("rf_mode must be \"exact\" or \"empirical\", got \"" + s + "\"");
}

murl::TabularGenParams tabular_gen_params(const Json& inst) {
    check_keys(inst,
               {"num_users", "num_states", "num_actions", "horizon", "rank", "coherence_target",
                "max_redraws", "redundant_fraction"},
               "instance");
    murl::TabularGenParams p;
    p.num_users = get_or<int>(inst, "num_users", 0);
    p.num_states = get_or<int>(inst, "num_states", 0);
    p.num_actions = get_or<int>(inst, "num_actions", 0);
    p.horizon = get_or<int>(inst, "horizon", 0);
    p.rank = get_or<int>(inst, "rank", 0);
    p.coherence_target = get_or<double>(inst, "coherence_target", p.coherence_target);
    p.max_redraws = get_or<int>(inst, "max_redraws", p.max_redraws);
    p.redundant_fraction = get_or<double>(inst, "redundant_fraction", p.redundant_fraction);
    return p;
}

murl::LinearGenParams linear_gen_params(const Json& inst) {
    check_keys(inst,
               {"num_users", "feature_dim", "num_states", "num_actions", "horizon", "rank",
                "plant_deficient_direction", "color_weight", "psi_offset", "psi_radius",
                "max_redraws"},
               "instance");
    murl::LinearGenParams p;
    p.num_users = get_or<int>(inst, "num_users", 0);
    p.feature_dim = get_or<int>(inst, "feature_dim", 0);
    p.num_states = get_or<int>(inst, "num_states", 0);
    p.num_actions = get_or<int>(inst, "num_actions", 0);
    p.horizon = get_or<int>(inst, "horizon", 0);
    p.rank = get_or<int>(inst, "rank", 0);
    p.plant_deficient_direction =
        get_or<bool>(inst, "plant_deficient_direction", p.plant_deficient_direction);
    p.color_weight = get_or<double>(inst, "color_weight", p.color_weight);
    p.psi_offset = get_or<double>(inst, "psi_offset", p.psi_offset);
    p.psi_radius = get_or<double>(inst, "psi_radius", p.psi_radius);
    p.max_redraws = get_or<int>(inst, "max_redraws", p.max_redraws);
    return p;
}

murl::CompletionOptions completion_options(const Json& j) {
    check_keys(j, {"max_iters", "restarts", "interp_tol", "ridge", "seed"}, "completion options");
    murl::CompletionOptions o;
    o.max_iters = get_or<int>(j, "max_iters", o.max_iters);
    o.restarts = get_or<int>(j, "restarts", o.restarts);
    o.interp_tol = get_or<double>(j, "interp_tol", o.interp_tol);
    o.ridge = get_or<double>(j, "ridge", o.ridge);
    o.seed = get_or<std::uint64_t>(j, "seed", o.seed);
    return o;
}

murl::TabularPipelineConfig tabular_pipeline_config(const Json& pipe) {
    check_keys(pipe,
               {"epsilon", "delta", "mask_rate", "mask_rate_c", "rf_mode", "rf_budget",
                "safety_multiplier", "completion"},
               "pipeline");
    murl::TabularPipelineConfig c;
    c.epsilon = get_or<double>(pipe, "epsilon", c.epsilon);
    c.delta = get_or<double>(pipe, "delta", c.delta);
    c.mask_rate = get_or<double>(pipe, "mask_rate", c.mask_rate);
    c.mask_rate_c = get_or<double>(pipe, "mask_rate_c", c.mask_rate_c);
    c.rf_mode = rf_mode_from(get_or<std::string>(pipe, "rf_mode", "exact"));
    c.rf_budget = get_or<long>(pipe, "rf_budget", c.rf_budget);
    c.safety_multiplier = get_or<int>(pipe, "safety_multiplier", c.safety_multiplier);
    c.completion = completion_options(section(pipe, "completion"));
    return c;
}

murl::LinearPipelineConfig linear_pipeline_config(const Json& pipe) {
    check_keys(pipe,
               {"epsilon", "delta", "rf_mode", "rf_budget", "kappa_sq", "grammian_t", "eta",
                "radius", "net_budget", "kt_c", "verify_k", "rowwise_restarts", "search"},
               "pipeline");
    murl::LinearPipelineConfig c;
    c.epsilon = get_or<double>(pipe, "epsilon", c.epsilon);
    c.delta = get_or<double>(pipe, "delta", c.delta);
    c.rf_mode = rf_mode_from(get_or<std::string>(pipe, "rf_mode", "exact"));
    c.rf_budget = get_or<long>(pipe, "rf_budget", c.rf_budget);
    c.kappa_sq = get_or<double>(pipe, "kappa_sq", c.kappa_sq);
    c.grammian_t = get_or<long>(pipe, "grammian_t", c.grammian_t);
    c.eta = get_or<double>(pipe, "eta", c.eta);
    c.radius = get_or<double>(pipe, "radius", c.radius);
    c.net_budget = get_or<int>(pipe, "net_budget", c.net_budget);
    c.kt_c = get_or<double>(pipe, "kt_c", c.kt_c);
    c.verify_k = get_or<int>(pipe, "verify_k", c.verify_k);
    c.rowwise_restarts = get_or<int>(pipe, "rowwise_restarts", c.rowwise_restarts);
    const Json& s = section(pipe, "search");
    check_keys(s, {"xi", "extra_directions", "eta0", "nu_resolution", "beam_cap"}, "search");
    c.search.xi = get_or<double>(s, "xi", c.search.xi);
    c.search.extra_directions = get_or<int>(s, "extra_directions", c.search.extra_directions);
    c.search.eta0 = get_or<double>(s, "eta0", c.search.eta0);
    c.search.nu_resolution = get_or<double>(s, "nu_resolution", c.search.nu_resolution);
    c.search.beam_cap = get_or<int>(s, "beam_cap", c.search.beam_cap);
    return c;
}

std::string config_hash(const Json& cfg) {
    return murl::hex64(murl::fnv1a(cfg.dump()));
}

long wall_ms_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::steady_clock::now() - start)
        .count();
}

// per-user gap to the DP optimum on the true instance
struct SuboptSummary {
    std::vector<double> per_user;
    double max_value = 0.0;
    double mean_value = 0.0;
};

SuboptSummary suboptimality(const murl::TabularMdp& mdp, const murl::RewardMatrixSet& rewards,
                            const std::vector<murl::PlanResult>& plans) {
    SuboptSummary s;
    double total = 0.0;
    for (int u = 0; u < rewards.num_users; ++u) {
        const murl::RewardFunction ru =
            rewards.user_rewards(u, mdp.num_states, mdp.num_actions);
        const double opt = murl::optimal_policy(mdp, ru).value;
        const double got = murl::exact_value(mdp, plans[u].policy, ru);
        const double gap = opt - got;
        s.per_user.push_back(gap);
        s.max_value = std::max(s.max_value, gap);
        total += gap;
    }
    s.mean_value = total / std::max<std::size_t>(1, s.per_user.size());
    return s;
}

void emit_and_print(const std::string& path, const Json& doc) {
    murl::save_json_file(path, doc);
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::cout << "wrote " << path << " fnv1a=" << murl::hex64(murl::fnv1a(bytes)) << "\n";
}

// ------------------------------------------------------------------ gen

int cmd_gen(const CommonOpts& opts) {
    const Json cfg = load_config(opts.config_path);
    const std::string mode = mode_of(cfg, opts);
    const std::string out = resolve_out_dir(opts.out_dir);
    std::filesystem::create_directories(out);
    Json bundle;
    if (mode == "tabular") {
        bundle = murl::bundle_from(
            murl::gen_tabular_instance(tabular_gen_params(section(cfg, "instance")), opts.seed));
    } else if (mode == "linear") {
        bundle = murl::bundle_from(
            murl::gen_linear_instance(linear_gen_params(section(cfg, "instance")), opts.seed));
    } else {
        throw ConfigError("gen supports modes tabular and linear, got \"" + mode + "\"");
    }
    emit_and_print(join_path(out, "bundle_" + mode + "_seed" + std::to_string(opts.seed) +
                                      ".json"),
                   bundle);
    return 0;
}

// ------------------------------------------------------------------ run

Json tabular_run_report(const murl::TabularInstance& inst,
                        const murl::TabularPipelineResult& res, std::uint64_t seed,
                        const std::string& cfg_hash, long rf_ms, long total_ms) {
    const int horizon = inst.mdp.horizon;
    SuboptSummary subopt = suboptimality(inst.mdp, inst.rewards, res.user_plans);

    double max_residual = 0.0;
    for (double r : res.completed.residuals) max_residual = std::max(max_residual, r);
    Json active = Json::array();
    long active_total = 0;
    for (int h = 0; h < horizon; ++h) {
        long n = 0;
        for (char c : res.sampled.active[h]) n += c ? 1 : 0;
        active.push_back(n);
        active_total += n;
    }

    Json j;
    j["schema"] = "murl.run.v1";
    j["kind"] = "tabular";
    j["seed"] = seed;
    j["config_hash"] = cfg_hash;
    j["completed"] = true;
    j["mask_rate"] = {{"p", res.rate.p}, {"clamped", res.rate.clamped}};
    j["quota"] = res.sampled.quota;
    j["phases"] = {{"reward_free_trajectories", res.rf.episodes_used},
                   {"mask_sampler_trajectories", res.sampled.trajectories},
                   {"replans", res.sampled.replans},
                   {"total_trajectories", res.rf.episodes_used + res.sampled.trajectories}};
    j["value_at_termination"] = res.sampled.value_at_termination;
    j["active_remaining"] = std::move(active);
    Json residuals = Json::array();
    for (double r : res.completed.residuals) residuals.push_back(r);
    j["recovery_residuals"] = std::move(residuals);
    j["max_completion_clip"] = res.completed.max_clip;
    Json per_user = Json::array();
    for (double v : subopt.per_user) per_user.push_back(v);
    j["users"] = {{"max_suboptimality", subopt.max_value},
                  {"mean_suboptimality", subopt.mean_value},
                  {"suboptimality", std::move(per_user)}};
    j["independent_learning_trajectories"] =
        static_cast<long>(inst.rewards.num_users) * res.rf.episodes_used;
    j["reward_queries"] = inst.rewards.access_count;
    j["wall_ms"] = {{"reward_free", rf_ms}, {"total", total_ms}};
    j["metrics"] = {
        {"reward_free_trajectories", static_cast<double>(res.rf.episodes_used)},
        {"mask_sampler_trajectories", static_cast<double>(res.sampled.trajectories)},
        {"total_trajectories",
         static_cast<double>(res.rf.episodes_used + res.sampled.trajectories)},
        {"replans", static_cast<double>(res.sampled.replans)},
        {"quota", static_cast<double>(res.sampled.quota)},
        {"max_user_suboptimality", subopt.max_value},
        {"mean_user_suboptimality", subopt.mean_value},
        {"max_recovery_residual", max_residual},
        {"active_remaining_total", static_cast<double>(active_total)},
        {"reward_queries", static_cast<double>(inst.rewards.access_count)},
    };
    return j;
}

void tabular_run_csvs(const std::string& out, std::uint64_t seed, const Json& report,
                      int horizon, bool with_wall) {
    murl::CsvTable t;
    t.header = {"seed", "phase", "trajectories", "max_user_subopt", "mean_user_subopt"};
    for (int h = 1; h <= horizon; ++h) t.header.push_back("recovery_residual_h" + std::to_string(h));
    if (with_wall) t.header.push_back("wall_ms");
    const auto& m = report.at("metrics");
    const auto& residuals = report.at("recovery_residuals");
    auto row = [&](const std::string& phase, double traj, long wall) {
        std::vector<std::string> r = {std::to_string(seed), phase, murl::g17(traj),
                                      murl::g17(m.at("max_user_suboptimality").get<double>()),
                                      murl::g17(m.at("mean_user_suboptimality").get<double>())};
        for (int h = 0; h < horizon; ++h)
            r.push_back(murl::g17(h < static_cast<int>(residuals.size())
                                      ? residuals[h].get<double>()
                                      : 0.0));
        if (with_wall) r.push_back(std::to_string(wall));
        t.rows.push_back(std::move(r));
    };
    const auto& wall = report.at("wall_ms");
    row("reward_free", m.at("reward_free_trajectories").get<double>(),
        wall.at("reward_free").get<long>());
    row("mask_sampler", m.at("mask_sampler_trajectories").get<double>(),
        wall.at("total").get<long>() - wall.at("reward_free").get<long>());
    const std::string stem = with_wall ? "run_tabular_seed" : "metrics_tabular_seed";
    murl::write_csv_file(join_path(out, stem + std::to_string(seed) + ".csv"), t);
}

Json linear_run_report(const murl::LinearInstance& inst, const murl::LinearPipelineResult& res,
                       std::uint64_t seed, const std::string& cfg_hash, long total_ms) {
    SuboptSummary subopt = suboptimality(inst.mdp, inst.rewards, res.user_plans);

    double min_lambda = std::numeric_limits<double>::infinity();
    Json blocks = Json::array();
    for (const auto& b : res.grammian.blocks) {
        min_lambda = std::min(min_lambda, b.lambda_min);
        blocks.push_back({{"lambda_min", b.lambda_min},
                          {"replans", b.replans},
                          {"well_conditioned", b.well_conditioned}});
    }
    double max_theta_err = 0.0;
    for (std::size_t h = 0; h < res.theta_hat.size(); ++h)
        max_theta_err = std::max(
            max_theta_err, (res.theta_hat[h] - inst.theta[h]).array().abs().maxCoeff());
    long rowwise_total = 0;
    long max_iters = 0;
    Json rowwise = Json::array();
    for (std::size_t h = 0; h < res.rowwise.size(); ++h) {
        rowwise_total += res.rowwise[h].total_measurements;
        max_iters = std::max(max_iters, static_cast<long>(res.rowwise[h].iterations.size()));
        rowwise.push_back({{"level", h + 1},
                           {"iterations", res.rowwise[h].iterations.size()},
                           {"total_measurements", res.rowwise[h].total_measurements},
                           {"converged", res.rowwise[h].converged}});
    }
    double min_certified = std::numeric_limits<double>::infinity();
    Json search = Json::array();
    for (std::size_t h = 0; h < res.searched.size(); ++h) {
        min_certified = std::min(min_certified, res.searched[h].certified);
        search.push_back({{"level", h + 1},
                          {"certified", res.searched[h].certified},
                          {"slack", res.searched[h].slack},
                          {"kernel_index", res.searched[h].kernel_index},
                          {"zeta_hat", res.zeta_measured[h]},
                          {"xi_hat", res.xi_measured[h]}});
    }

    Json j;
    j["schema"] = "murl.run.v1";
    j["kind"] = "linear";
    j["seed"] = seed;
    j["config_hash"] = cfg_hash;
    j["completed"] = true;
    j["grammian"] = {{"blocks", std::move(blocks)}};
    j["net"] = {{"size", res.net.kernels.size()},
                {"eta", res.net.eta},
                {"radius", res.net.radius},
                {"covering_radius", res.net.covering_radius},
                {"log_card_ratio", res.net.log_card_ratio}};
    j["search"] = std::move(search);
    j["rowwise"] = std::move(rowwise);
    j["max_theta_err"] = max_theta_err;
    j["max_reward_clip"] = res.max_reward_clip;
    Json per_user = Json::array();
    for (double v : subopt.per_user) per_user.push_back(v);
    j["users"] = {{"max_suboptimality", subopt.max_value},
                  {"mean_suboptimality", subopt.mean_value},
                  {"suboptimality", std::move(per_user)}};
    j["reward_queries"] = inst.rewards.access_count;
    j["wall_ms"] = {{"total", total_ms}};
    j["metrics"] = {
        {"min_lambda_min", min_lambda},
        {"net_size", static_cast<double>(res.net.kernels.size())},
        {"covering_radius", res.net.covering_radius},
        {"min_certified", min_certified},
        {"rowwise_total_measurements", static_cast<double>(rowwise_total)},
        {"max_rowwise_iterations", static_cast<double>(max_iters)},
        {"max_theta_err", max_theta_err},
        {"max_user_suboptimality", subopt.max_value},
        {"mean_user_suboptimality", subopt.mean_value},
        {"max_reward_clip", res.max_reward_clip},
        {"reward_queries", static_cast<double>(inst.rewards.access_count)},
    };
    return j;
}

void linear_run_csvs(const std::string& out, std::uint64_t seed, const Json& report,
                     const murl::LinearPipelineResult& res, int extra_directions, int d) {
    {
        murl::CsvTable t;
        t.header = {"h", "certified_value", "zeta_over_2_target", "constraint_value",
                    "net_size", "x_directions"};
        for (std::size_t h = 0; h < res.searched.size(); ++h) {
            t.rows.push_back({std::to_string(h + 1), murl::g17(res.searched[h].certified),
                              murl::g17(res.zeta_measured[h] / 2.0),
                              murl::g17(res.searched[h].slack),
                              std::to_string(res.net.kernels.size()),
                              std::to_string(2 * d + extra_directions)});
        }
        murl::write_csv_file(join_path(out, "search_linear_seed" + std::to_string(seed) + ".csv"),
                             t);
    }
    {
        murl::CsvTable t;
        t.header = {"level", "t", "unknown_rows", "K_t", "fit_loss", "verified", "rejected",
                    "cumulative_samples"};
        for (std::size_t h = 0; h < res.rowwise.size(); ++h) {
            long cum = 0;
            for (std::size_t i = 0; i < res.rowwise[h].iterations.size(); ++i) {
                const auto& it = res.rowwise[h].iterations[i];
                cum += it.kt * it.unknown_before;
                t.rows.push_back({std::to_string(h + 1), std::to_string(i + 1),
                                  std::to_string(it.unknown_before), std::to_string(it.kt),
                                  murl::g17(it.fit_loss), std::to_string(it.verified),
                                  std::to_string(it.unknown_before - it.verified),
                                  std::to_string(cum)});
            }
        }
        murl::write_csv_file(
            join_path(out, "rowwise_linear_seed" + std::to_string(seed) + ".csv"), t);
    }
    {
        murl::CsvTable t;
        t.header = {"seed", "metric", "value"};
        for (auto it = report.at("metrics").begin(); it != report.at("metrics").end(); ++it)
            t.rows.push_back({std::to_string(seed), it.key(), murl::g17(it->get<double>())});
        murl::write_csv_file(
            join_path(out, "metrics_linear_seed" + std::to_string(seed) + ".csv"), t);
    }
}

int cmd_run(const CommonOpts& opts) {
    const Json cfg = load_config(opts.config_path);
    const std::string out = resolve_out_dir(opts.out_dir);
    std::filesystem::create_directories(out);
    const std::string hash = config_hash(cfg);

    std::optional<Json> bundle;
    std::string kind;
    if (!opts.bundle_path.empty()) {
        bundle = murl::load_json_file(opts.bundle_path);
        kind = murl::bundle_kind(*bundle);
        const std::string mode = opts.mode.empty() ? get_or<std::string>(cfg, "mode", kind)
                                                   : opts.mode;
        if (mode != kind)
            throw ConfigError("bundle kind '" + kind + "' does not match mode '" + mode + "'");
    } else {
        kind = mode_of(cfg, opts);
        if (kind != "tabular" && kind != "linear")
            throw ConfigError("run supports modes tabular and linear, got \"" + kind + "\"");
    }

    for (int k = 0; k < opts.seeds; ++k) {
        const std::uint64_t seed = opts.seed + static_cast<std::uint64_t>(k);
        const auto t0 = std::chrono::steady_clock::now();
        if (kind == "tabular") {
            murl::TabularInstance inst =
                bundle ? murl::tabular_from_bundle(*bundle)
                       : murl::gen_tabular_instance(tabular_gen_params(section(cfg, "instance")),
                                                    seed);
            const murl::TabularPipelineConfig pc =
                tabular_pipeline_config(section(cfg, "pipeline"));
            const std::string report_path =
                join_path(out, "run_tabular_seed" + std::to_string(seed) + ".json");
            try {
                murl::TabularPipelineResult res = murl::run_tabular_pipeline(inst, pc, seed);
                const long total_ms = wall_ms_since(t0);
                Json report = tabular_run_report(inst, res, seed, hash, 0, total_ms);
                emit_and_print(report_path, report);
                tabular_run_csvs(out, seed, report, inst.mdp.horizon, true);
                tabular_run_csvs(out, seed, report, inst.mdp.horizon, false);
            } catch (const std::runtime_error& e) {
                Json partial;
                partial["schema"] = "murl.run.v1";
                partial["kind"] = "tabular";
                partial["seed"] = seed;
                partial["config_hash"] = hash;
                partial["completed"] = false;
                partial["phase_error"] = e.what();
                partial["wall_ms"] = {{"total", wall_ms_since(t0)}};
                emit_and_print(report_path, partial);
                throw;
            }
        } else {
            murl::LinearInstance inst =
                bundle ? murl::linear_from_bundle(*bundle)
                       : murl::gen_linear_instance(linear_gen_params(section(cfg, "instance")),
                                                   seed);
            const murl::LinearPipelineConfig pc = linear_pipeline_config(section(cfg, "pipeline"));
            const std::string report_path =
                join_path(out, "run_linear_seed" + std::to_string(seed) + ".json");
            try {
                murl::LinearPipelineResult res = murl::run_linear_pipeline(inst, pc, seed);
                const long total_ms = wall_ms_since(t0);
                Json report = linear_run_report(inst, res, seed, hash, total_ms);
                emit_and_print(report_path, report);
                linear_run_csvs(out, seed, report, res, pc.search.extra_directions,
                                inst.features.feature_dim);
            } catch (const std::runtime_error& e) {
                Json partial;
                partial["schema"] = "murl.run.v1";
                partial["kind"] = "linear";
                partial["seed"] = seed;
                partial["config_hash"] = hash;
                partial["completed"] = false;
                partial["phase_error"] = e.what();
                partial["wall_ms"] = {{"total", wall_ms_since(t0)}};
                emit_and_print(report_path, partial);
                throw;
            }
        }
    }
    return 0;
}

// ------------------------------------------------------------------ baseline

int cmd_baseline(const CommonOpts& opts) {
    const Json cfg = load_config(opts.config_path);
    const std::string out = resolve_out_dir(opts.out_dir);
    std::filesystem::create_directories(out);
    const std::string hash = config_hash(cfg);
    if (opts.bundle_path.empty()) throw ConfigError("baseline requires --bundle");
    const Json bundle = murl::load_json_file(opts.bundle_path);
    if (murl::bundle_kind(bundle) != "tabular")
        throw ConfigError("baseline requires a tabular bundle");
    const murl::TabularInstance inst = murl::tabular_from_bundle(bundle);
    const Json& base = section(cfg, "baseline");
    check_keys(base, {"initial_budget", "max_budget"}, "baseline");
    const double epsilon = get_or<double>(section(cfg, "pipeline"), "epsilon", 0.05);
    const long initial = get_or<long>(base, "initial_budget", 64);
    const long max_budget = get_or<long>(base, "max_budget", 1L << 22);

    for (int k = 0; k < opts.seeds; ++k) {
        const std::uint64_t seed = opts.seed + static_cast<std::uint64_t>(k);
        const auto t0 = std::chrono::steady_clock::now();
        const std::vector<long> budgets =
            murl::baseline_per_user_budgets(inst, epsilon, seed, initial, max_budget);
        long total = 0;
        long maxb = 0;
        for (long b : budgets) {
            total += b;
            maxb = std::max(maxb, b);
        }
        Json j;
        j["schema"] = "murl.run.v1";
        j["kind"] = "baseline";
        j["seed"] = seed;
        j["config_hash"] = hash;
        j["completed"] = true;
        j["epsilon"] = epsilon;
        j["budgets"] = budgets;
        j["wall_ms"] = {{"total", wall_ms_since(t0)}};
        j["metrics"] = {{"total_trajectories", static_cast<double>(total)},
                        {"max_budget", static_cast<double>(maxb)},
                        {"mean_budget", static_cast<double>(total) /
                                            static_cast<double>(budgets.size())}};
        emit_and_print(join_path(out, "run_baseline_seed" + std::to_string(seed) + ".json"), j);
        murl::CsvTable t;
        t.header = {"seed", "user", "budget"};
        for (std::size_t u = 0; u < budgets.size(); ++u)
            t.rows.push_back({std::to_string(seed), std::to_string(u),
                              std::to_string(budgets[u])});
        murl::write_csv_file(
            join_path(out, "run_baseline_seed" + std::to_string(seed) + ".csv"), t);
    }
    return 0;
}

// ------------------------------------------------------------------ completion-curve

int cmd_completion_curve(const CommonOpts& opts) {
    const Json cfg = load_config(opts.config_path);
    const std::string out = resolve_out_dir(opts.out_dir);
    std::filesystem::create_directories(out);
    const Json& cc = section(cfg, "completion_curve");
    check_keys(cc, {"n1", "n2", "rank", "rates", "trials", "success_tol", "solver"},
               "completion_curve");
    const int n1 = get_or<int>(cc, "n1", 30);
    const int n2 = get_or<int>(cc, "n2", 30);
    const int rank = get_or<int>(cc, "rank", 1);
    const int trials = get_or<int>(cc, "trials", 50);
    const double tol = get_or<double>(cc, "success_tol", 1e-6);
    std::vector<double> rates =
        get_or<std::vector<double>>(cc, "rates", {0.07, 0.15, 0.25, 0.4, 0.6, 0.8, 1.0});

    const std::vector<murl::RecoveryCurvePoint> curve =
        murl::recovery_curve(n1, n2, rank, rates, trials, opts.seed, tol);

    Json j;
    j["schema"] = "murl.run.v1";
    j["kind"] = "completion-curve";
    j["seed"] = opts.seed;
    j["config_hash"] = config_hash(cfg);
    j["completed"] = true;
    Json points = Json::array();
    Json metrics = Json::object();
    murl::CsvTable t;
    t.header = {"rate", "successes", "trials"};
    std::vector<std::pair<double, double>> xy;
    for (std::size_t i = 0; i < curve.size(); ++i) {
        const auto& pt = curve[i];
        const double frac =
            pt.trials > 0 ? static_cast<double>(pt.successes) / pt.trials : 0.0;
        points.push_back({{"rate", pt.rate},
                          {"successes", pt.successes},
                          {"trials", pt.trials},
                          {"success_fraction", frac},
                          {"median_max_err", pt.median_max_err}});
        t.rows.push_back({murl::g17(pt.rate), std::to_string(pt.successes),
                          std::to_string(pt.trials)});
        xy.emplace_back(pt.rate, frac);
        metrics["success_fraction_" + std::to_string(i)] = frac;
    }
    j["curve"] = std::move(points);
    j["metrics"] = std::move(metrics);
    emit_and_print(join_path(out, "run_completion_seed" + std::to_string(opts.seed) + ".json"),
                   j);
    murl::write_csv_file(
        join_path(out, "completion_curve_seed" + std::to_string(opts.seed) + ".csv"), t);
    murl::write_plot_data(
        join_path(out, "completion_curve_seed" + std::to_string(opts.seed) + ".dat"), xy);
    return 0;
}

// ------------------------------------------------------------------ rowwise

int cmd_rowwise(const CommonOpts& opts) {
    const Json cfg = load_config(opts.config_path);
    const std::string out = resolve_out_dir(opts.out_dir);
    std::filesystem::create_directories(out);
    const Json& rw = section(cfg, "rowwise");
    check_keys(rw,
               {"num_rows", "feature_dim", "rank", "delta", "c", "verify_k", "measure_trials",
                "extra_directions", "restarts"},
               "rowwise");
    murl::RowwiseConfig rc;
    rc.num_rows = get_or<int>(rw, "num_rows", 100);
    rc.feature_dim = get_or<int>(rw, "feature_dim", 20);
    rc.rank = get_or<int>(rw, "rank", 3);
    rc.delta = get_or<double>(rw, "delta", rc.delta);
    rc.c = get_or<double>(rw, "c", rc.c);
    rc.verify_k = get_or<int>(rw, "verify_k", rc.verify_k);
    rc.restarts = get_or<int>(rw, "restarts", rc.restarts);
    const int measure_trials = get_or<int>(rw, "measure_trials", 2000);
    const int extra_directions = get_or<int>(rw, "extra_directions", 128);
    if (rc.rank < 1 || 2 * rc.rank > std::min(rc.num_rows, rc.feature_dim))
        throw ConfigError("rowwise: need 1 <= rank and 2*rank <= min(num_rows, feature_dim)");

    for (int k = 0; k < opts.seeds; ++k) {
        const std::uint64_t seed = opts.seed + static_cast<std::uint64_t>(k);
        const auto t0 = std::chrono::steady_clock::now();
        murl::RngStream root(seed);

        murl::RngStream gen = root.child("theta");
        Eigen::MatrixXd a(rc.num_rows, rc.rank), b(rc.feature_dim, rc.rank);
        for (int i = 0; i < a.rows(); ++i)
            for (int q = 0; q < a.cols(); ++q) a(i, q) = gen.normal();
        for (int i = 0; i < b.rows(); ++i)
            for (int q = 0; q < b.cols(); ++q) b(i, q) = gen.normal();
        Eigen::MatrixXd theta_star = a * b.transpose();
        theta_star /= theta_star.rowwise().norm().maxCoeff();

        auto psi_sampler = [&](murl::RngStream& rs) {
            Eigen::VectorXd v(rc.feature_dim);
            for (int i = 0; i < v.size(); ++i) v[i] = rs.normal();
            const double n = v.norm();
            return n > 0 ? Eigen::VectorXd(v / n) : Eigen::VectorXd::Unit(rc.feature_dim, 0).eval();
        };
        const auto dirs = murl::direction_set(rc.feature_dim, extra_directions);
        const auto [zeta_hat, xi_hat] = murl::measure_dist_constants(
            psi_sampler, rc.feature_dim, measure_trials, dirs, root.child("measure"));
        rc.zeta = zeta_hat;
        rc.xi = xi_hat;

        murl::MeasurementFn oracle = [&](int row, murl::RngStream& rs) {
            const Eigen::VectorXd psi = psi_sampler(rs);
            return std::make_pair(psi, theta_star.row(row).dot(psi));
        };
        const murl::RowwiseResult res = murl::run_estimator(oracle, rc, root.child("estimate"));
        const double max_err = (res.theta_hat - theta_star).array().abs().maxCoeff();

        Json j;
        j["schema"] = "murl.run.v1";
        j["kind"] = "rowwise";
        j["seed"] = seed;
        j["config_hash"] = config_hash(cfg);
        j["completed"] = true;
        j["zeta_hat"] = zeta_hat;
        j["xi_hat"] = xi_hat;
        j["iterations"] = res.iterations.size();
        j["total_measurements"] = res.total_measurements;
        j["max_abs_error"] = max_err;
        j["wall_ms"] = {{"total", wall_ms_since(t0)}};
        j["metrics"] = {
            {"iterations", static_cast<double>(res.iterations.size())},
            {"total_measurements", static_cast<double>(res.total_measurements)},
            {"max_abs_error", max_err},
            {"zeta_hat", zeta_hat},
            {"xi_hat", xi_hat},
            {"k1", res.iterations.empty() ? 0.0 : static_cast<double>(res.iterations[0].kt)}};
        emit_and_print(join_path(out, "run_rowwise_seed" + std::to_string(seed) + ".json"), j);

        murl::CsvTable t;
        t.header = {"t", "unknown_rows", "K_t", "fit_loss", "verified", "rejected",
                    "cumulative_samples"};
        long cum = 0;
        for (std::size_t i = 0; i < res.iterations.size(); ++i) {
            const auto& it = res.iterations[i];
            cum += it.kt * it.unknown_before;
            t.rows.push_back({std::to_string(i + 1), std::to_string(it.unknown_before),
                              std::to_string(it.kt), murl::g17(it.fit_loss),
                              std::to_string(it.verified),
                              std::to_string(it.unknown_before - it.verified),
                              std::to_string(cum)});
        }
        murl::write_csv_file(
            join_path(out, "rowwise_iterations_seed" + std::to_string(seed) + ".csv"), t);
    }
    return 0;
}

// ------------------------------------------------------------------ report

int cmd_report(const CommonOpts& opts, const std::vector<std::string>& inputs) {
    if (inputs.empty()) throw murl::SchemaError("report: no input run files");
    const std::string out = resolve_out_dir(opts.out_dir);
    std::filesystem::create_directories(out);

    std::string kind;
    std::map<std::string, std::vector<double>> metrics;
    std::map<std::string, std::vector<std::pair<double, double>>> series;
    for (const auto& path : inputs) {
        const Json j = murl::load_json_file(path);
        if (!j.is_object() || !j.contains("schema") || j["schema"] != "murl.run.v1")
            throw murl::SchemaError("not a run report: " + path);
        if (!j.contains("kind") || !j["kind"].is_string())
            throw murl::SchemaError("run report missing kind: " + path);
        const std::string k = j["kind"].get<std::string>();
        if (kind.empty())
            kind = k;
        else if (k != kind)
            throw murl::SchemaError("mixed run kinds: " + kind + " vs " + k);
        if (!j.contains("metrics") || !j["metrics"].is_object())
            throw murl::SchemaError("run report missing metrics: " + path);
        const double seed = j.contains("seed") ? j["seed"].get<double>() : 0.0;
        for (auto it = j["metrics"].begin(); it != j["metrics"].end(); ++it) {
            if (!it->is_number())
                throw murl::SchemaError("non-numeric metric " + it.key() + " in " + path);
            metrics[it.key()].push_back(it->get<double>());
            series[it.key()].emplace_back(seed, it->get<double>());
        }
    }

    murl::CsvTable t;
    t.header = {"metric", "count", "median", "q25", "q75", "min", "max"};
    for (const auto& [name, values] : metrics) {
        std::vector<double> v = values;
        std::sort(v.begin(), v.end());
        t.rows.push_back({name, std::to_string(values.size()), murl::g17(murl::median(values)),
                          murl::g17(murl::quantile(values, 0.25)),
                          murl::g17(murl::quantile(values, 0.75)), murl::g17(v.front()),
                          murl::g17(v.back())});
    }
    murl::write_csv_file(join_path(out, "aggregate_" + kind + ".csv"), t);
    for (auto& [name, xy] : series) {
        std::sort(xy.begin(), xy.end());
        murl::write_plot_data(join_path(out, "plot_" + kind + "_" + name + ".dat"), xy);
    }
    std::cout << "aggregated " << inputs.size() << " " << kind << " run(s) into "
              << join_path(out, "aggregate_" + kind + ".csv") << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-user low-rank reward benchmark harness"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::vector<std::string> report_inputs;

    auto add_common = [&](CLI::App* sub, bool with_bundle, bool with_seeds) {
        sub->add_option("--config", opts.config_path, "JSON experiment config");
        if (with_bundle) sub->add_option("--bundle", opts.bundle_path, "instance bundle file");
        sub->add_option("--seed", opts.seed, "base seed");
        if (with_seeds) sub->add_option("--seeds", opts.seeds, "number of consecutive seeds")
            ->check(CLI::PositiveNumber);
        sub->add_option("--out", opts.out_dir, "output directory (default $MURL_OUT_DIR or .)");
        sub->add_option("--mode", opts.mode, "tabular|linear override");
    };

    CLI::App* gen = app.add_subcommand("gen", "generate an instance bundle");
    add_common(gen, false, false);
    CLI::App* run = app.add_subcommand("run", "run a pipeline and emit reports");
    add_common(run, true, true);
    CLI::App* baseline = app.add_subcommand("baseline", "independent per-user learning baseline");
    add_common(baseline, true, true);
    CLI::App* curve = app.add_subcommand("completion-curve", "recovery success vs sample rate");
    add_common(curve, false, false);
    CLI::App* rowwise = app.add_subcommand("rowwise", "synthetic row-wise estimator run");
    add_common(rowwise, false, true);
    CLI::App* report = app.add_subcommand("report", "aggregate run reports across seeds");
    report->add_option("--out", opts.out_dir, "output directory");
    report->add_option("inputs", report_inputs, "run report JSON files");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_gen(opts);
        if (run->parsed()) return cmd_run(opts);
        if (baseline->parsed()) return cmd_baseline(opts);
        if (curve->parsed()) return cmd_completion_curve(opts);
        if (rowwise->parsed()) return cmd_rowwise(opts);
        if (report->parsed()) return cmd_report(opts, report_inputs);
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const murl::GenerationError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const murl::SchemaError& e) {
        std::cerr << "schema error: " << e.what() << "\n";
        return 3;
    } catch (const murl::PhaseError& e) {
        std::cerr << "phase failure: " << e.what() << "\n";
        return 4;
    } catch (const murl::EstimatorStall& e) {
        std::cerr << "phase failure: " << e.what() << "\n";
        return 4;
    } catch (const murl::FitError& e) {
        std::cerr << "phase failure: " << e.what() << "\n";
        return 4;
    } catch (const murl::CompletionDivergence& e) {
        std::cerr << "phase failure: " << e.what() << "\n";
        return 4;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
