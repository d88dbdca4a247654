#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include <doctest.h>

#include "murl/report.hpp"

#ifndef MURL_CLI_PATH
#error "MURL_CLI_PATH must point at the CLI binary"
#endif

namespace {

namespace fs = std::filesystem;

std::string fresh_dir(const std::string& stem) {
    static const auto tag = std::chrono::steady_clock::now().time_since_epoch().count();
    static int counter = 0;
    const fs::path dir = fs::temp_directory_path() /
                         ("murl_cli_" + std::to_string(tag) + "_" + std::to_string(counter++) +
                          "_" + stem);
    fs::create_directories(dir);
    return dir.string();
}

struct CliResult {
    int code = -1;
    std::string output;
};

CliResult run_cli(const std::string& args, const std::string& dir) {
    static int counter = 0;
    const std::string capture = (fs::path(dir) / ("cli_" + std::to_string(counter++) + ".log"))
                                    .string();
    const std::string cmd = std::string("\"") + MURL_CLI_PATH + "\" " + args + " > \"" + capture +
                            "\" 2>&1";
    const int rc = std::system(cmd.c_str());
    REQUIRE(rc != -1);
    CliResult res;
    res.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    std::ifstream in(capture, std::ios::binary);
    res.output.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    return res;
}

std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(bool(in));
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::string drop_last_column(const std::string& csv) {
    std::istringstream in(csv);
    std::string line, out;
    while (std::getline(in, line)) {
        const auto pos = line.rfind(',');
        REQUIRE(pos != std::string::npos);
        out += line.substr(0, pos);
        out += '\n';
    }
    return out;
}

std::string write_config(const std::string& dir, const murl::Json& cfg) {
    const std::string path = (fs::path(dir) / "config.json").string();
    murl::save_json_file(path, cfg);
    return path;
}

murl::Json tabular_config() {
    return murl::Json{
        {"mode", "tabular"},
        {"instance",
         {{"num_users", 12}, {"num_states", 4}, {"num_actions", 3}, {"horizon", 3}, {"rank", 2}}},
        {"pipeline", {{"epsilon", 0.1}, {"mask_rate", 0.5}, {"rf_mode", "exact"}}}};
}

} // namespace

TEST_CASE("cli gen writes byte-identical bundles for a fixed seed") {
    const std::string dir_a = fresh_dir("gen_a");
    const std::string dir_b = fresh_dir("gen_b");
    const std::string cfg = write_config(dir_a, tabular_config());

    const CliResult a = run_cli("gen --config " + cfg + " --out " + dir_a + " --seed 3", dir_a);
    REQUIRE(a.code == 0);
    CHECK(a.output.find("fnv1a=") != std::string::npos);
    const CliResult b = run_cli("gen --config " + cfg + " --out " + dir_b + " --seed 3", dir_b);
    REQUIRE(b.code == 0);

    const std::string bundle_a = read_bytes(dir_a + "/bundle_tabular_seed3.json");
    CHECK(bundle_a == read_bytes(dir_b + "/bundle_tabular_seed3.json"));

    const CliResult c = run_cli("gen --config " + cfg + " --out " + dir_b + " --seed 4", dir_b);
    REQUIRE(c.code == 0);
    CHECK(bundle_a != read_bytes(dir_b + "/bundle_tabular_seed4.json"));
}

TEST_CASE("cli run emits deterministic reports; wall time only in the run csv") {
    const std::string dir_a = fresh_dir("run_a");
    const std::string dir_b = fresh_dir("run_b");
    const std::string cfg = write_config(dir_a, tabular_config());

    const CliResult a = run_cli("run --config " + cfg + " --out " + dir_a + " --seed 2", dir_a);
    REQUIRE(a.code == 0);
    const CliResult b = run_cli("run --config " + cfg + " --out " + dir_b + " --seed 2", dir_b);
    REQUIRE(b.code == 0);

    const std::string metrics_a = read_bytes(dir_a + "/metrics_tabular_seed2.csv");
    CHECK(metrics_a == read_bytes(dir_b + "/metrics_tabular_seed2.csv"));

    const std::string run_a = read_bytes(dir_a + "/run_tabular_seed2.csv");
    const std::string run_b = read_bytes(dir_b + "/run_tabular_seed2.csv");
    CHECK(drop_last_column(run_a) == drop_last_column(run_b));
    CHECK(drop_last_column(run_a) == metrics_a);

    const murl::Json report = murl::load_json_file(dir_a + "/run_tabular_seed2.json");
    CHECK(report.at("schema") == "murl.run.v1");
    CHECK(report.at("kind") == "tabular");
    CHECK(report.at("completed") == true);
    CHECK(report.at("metrics").at("max_user_suboptimality").get<double>() <= 0.1);
    CHECK(report.at("metrics").at("max_recovery_residual").get<double>() <= 1e-6);
}

TEST_CASE("cli run accepts a pre-generated bundle and rejects a mode mismatch") {
    const std::string dir = fresh_dir("run_bundle");
    const std::string cfg = write_config(dir, tabular_config());
    REQUIRE(run_cli("gen --config " + cfg + " --out " + dir + " --seed 5", dir).code == 0);
    const std::string bundle = dir + "/bundle_tabular_seed5.json";

    const CliResult ok = run_cli(
        "run --config " + cfg + " --bundle " + bundle + " --out " + dir + " --seed 5", dir);
    CHECK(ok.code == 0);
    CHECK(fs::exists(dir + "/run_tabular_seed5.json"));

    const CliResult bad = run_cli("run --config " + cfg + " --bundle " + bundle + " --out " + dir +
                                      " --seed 5 --mode linear",
                                  dir);
    CHECK(bad.code == 2);
}

TEST_CASE("cli rejects infeasible instance ranks and unknown config keys") {
    const std::string dir = fresh_dir("badcfg");
    murl::Json cfg = tabular_config();
    cfg["instance"]["rank"] = 7; // needs 2*rank <= min(num_users, num_pairs)
    const CliResult rank = run_cli("gen --config " + write_config(dir, cfg) + " --out " + dir, dir);
    CHECK(rank.code == 2);

    cfg = tabular_config();
    cfg["instance"]["num_userz"] = 8;
    const CliResult key = run_cli("gen --config " + write_config(dir, cfg) + " --out " + dir, dir);
    CHECK(key.code == 2);
    CHECK(key.output.find("unknown key") != std::string::npos);
}

TEST_CASE("cli baseline requires a tabular bundle and writes per-user budgets") {
    const std::string dir = fresh_dir("baseline");
    murl::Json cfg = tabular_config();
    cfg["instance"]["num_users"] = 4;
    cfg["pipeline"]["epsilon"] = 0.2;
    const std::string cfg_path = write_config(dir, cfg);
    REQUIRE(run_cli("gen --config " + cfg_path + " --out " + dir + " --seed 1", dir).code == 0);

    const CliResult missing = run_cli("baseline --config " + cfg_path + " --out " + dir, dir);
    CHECK(missing.code == 2);

    const CliResult ok = run_cli("baseline --config " + cfg_path + " --bundle " + dir +
                                     "/bundle_tabular_seed1.json --out " + dir + " --seed 1",
                                 dir);
    REQUIRE(ok.code == 0);
    const murl::Json rep = murl::load_json_file(dir + "/run_baseline_seed1.json");
    CHECK(rep.at("kind") == "baseline");
    CHECK(rep.at("budgets").size() == 4);
    const std::string csv = read_bytes(dir + "/run_baseline_seed1.csv");
    CHECK(csv.rfind("seed,user,budget\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
}

TEST_CASE("cli completion-curve writes the curve table and plot series") {
    const std::string dir = fresh_dir("curve");
    const murl::Json cfg = {{"completion_curve",
                             {{"n1", 8}, {"n2", 8}, {"rank", 1}, {"rates", {0.3, 1.0}},
                              {"trials", 3}}}};
    const CliResult res = run_cli(
        "completion-curve --config " + write_config(dir, cfg) + " --out " + dir + " --seed 6",
        dir);
    REQUIRE(res.code == 0);
    const std::string csv = read_bytes(dir + "/completion_curve_seed6.csv");
    CHECK(csv.rfind("rate,successes,trials\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
    const std::string dat = read_bytes(dir + "/completion_curve_seed6.dat");
    CHECK(std::count(dat.begin(), dat.end(), '\n') == 2);
    const murl::Json rep = murl::load_json_file(dir + "/run_completion_seed6.json");
    CHECK(rep.at("curve").size() == 2);
    CHECK(rep.at("curve")[1].at("successes").get<int>() == 3); // full observation always recovers
}

TEST_CASE("cli rowwise recovers a synthetic low-rank matrix") {
    const std::string dir = fresh_dir("rowwise");
    const murl::Json cfg = {{"rowwise",
                             {{"num_rows", 8}, {"feature_dim", 4}, {"rank", 1},
                              {"measure_trials", 500}, {"extra_directions", 16}}}};
    const CliResult res = run_cli(
        "rowwise --config " + write_config(dir, cfg) + " --out " + dir + " --seed 1", dir);
    REQUIRE(res.code == 0);
    const murl::Json rep = murl::load_json_file(dir + "/run_rowwise_seed1.json");
    CHECK(rep.at("max_abs_error").get<double>() <= 1e-6);
    CHECK(rep.at("zeta_hat").get<double>() > 0.0);
    CHECK(fs::exists(dir + "/rowwise_iterations_seed1.csv"));
}

TEST_CASE("cli report exits with the schema code on empty or junk input") {
    const std::string dir = fresh_dir("report_bad");
    CHECK(run_cli("report --out " + dir, dir).code == 3);

    const std::string junk = (fs::path(dir) / "junk.json").string();
    {
        std::ofstream out(junk, std::ios::binary);
        out << "{ nope";
    }
    CHECK(run_cli("report --out " + dir + " " + junk, dir).code == 3);

    murl::save_json_file((fs::path(dir) / "wrong.json").string(),
                         murl::Json{{"schema", "other"}, {"kind", "tabular"}});
    CHECK(run_cli("report --out " + dir + " " + dir + "/wrong.json", dir).code == 3);
}

TEST_CASE("cli report aggregates metric quantiles across seeds") {
    const std::string dir = fresh_dir("report_agg");
    const std::vector<double> values = {5.0, 1.0, 4.0, 2.0, 3.0};
    std::string inputs;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const std::string path = (fs::path(dir) / ("fake" + std::to_string(i) + ".json")).string();
        murl::save_json_file(path, murl::Json{{"schema", "murl.run.v1"},
                                              {"kind", "tabular"},
                                              {"seed", i + 1},
                                              {"metrics", {{"value", values[i]}}}});
        inputs += " " + path;
    }
    const CliResult res = run_cli("report --out " + dir + inputs, dir);
    REQUIRE(res.code == 0);
    CHECK(read_bytes(dir + "/aggregate_tabular.csv") ==
          "metric,count,median,q25,q75,min,max\nvalue,5,3,2,4,1,5\n");
    CHECK(read_bytes(dir + "/plot_tabular_value.dat") == "1 5\n2 1\n3 4\n4 2\n5 3\n");
}

TEST_CASE("cli report matches the metrics of a single run exactly") {
    const std::string dir = fresh_dir("report_single");
    const std::string cfg = write_config(dir, tabular_config());
    REQUIRE(run_cli("run --config " + cfg + " --out " + dir + " --seed 7", dir).code == 0);

    const std::string agg_dir = fresh_dir("report_single_out");
    REQUIRE(run_cli("report --out " + agg_dir + " " + dir + "/run_tabular_seed7.json", dir).code ==
            0);

    const murl::Json report = murl::load_json_file(dir + "/run_tabular_seed7.json");
    std::string expected = "metric,count,median,q25,q75,min,max\n";
    for (auto it = report.at("metrics").begin(); it != report.at("metrics").end(); ++it) {
        const std::string v = murl::g17(it->get<double>());
        expected += it.key() + ",1," + v + "," + v + "," + v + "," + v + "," + v + "\n";
    }
    CHECK(read_bytes(agg_dir + "/aggregate_tabular.csv") == expected);
}

TEST_CASE("cli rejects mixed run kinds in one report invocation") {
    const std::string dir = fresh_dir("report_mixed");
    murl::save_json_file((fs::path(dir) / "a.json").string(),
                         murl::Json{{"schema", "murl.run.v1"},
                                    {"kind", "tabular"},
                                    {"seed", 1},
                                    {"metrics", {{"v", 1.0}}}});
    murl::save_json_file((fs::path(dir) / "b.json").string(),
                         murl::Json{{"schema", "murl.run.v1"},
                                    {"kind", "linear"},
                                    {"seed", 2},
                                    {"metrics", {{"v", 2.0}}}});
    CHECK(run_cli("report --out " + dir + " " + dir + "/a.json " + dir + "/b.json", dir).code ==
          3);
}
