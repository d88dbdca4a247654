#include "murl/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace murl {

namespace {

Json matrix_rows(const Eigen::MatrixXd& m) {
    Json arr = Json::array();
    for (int i = 0; i < m.rows(); ++i)
        for (int j = 0; j < m.cols(); ++j) arr.push_back(m(i, j));
    return arr;
}

Eigen::MatrixXd matrix_from(const Json& arr, long rows, long cols, const char* what) {
    if (!arr.is_array() || static_cast<long>(arr.size()) != rows * cols)
        throw SchemaError(std::string(what) + ": expected " + std::to_string(rows * cols) +
                          " numbers");
    Eigen::MatrixXd m(rows, cols);
    long k = 0;
    for (const auto& v : arr) {
        if (!v.is_number()) throw SchemaError(std::string(what) + ": non-numeric entry");
        m(k / cols, k % cols) = v.get<double>();
        ++k;
    }
    return m;
}

Json vector_json(const Eigen::VectorXd& v) {
    Json arr = Json::array();
    for (int i = 0; i < v.size(); ++i) arr.push_back(v[i]);
    return arr;
}

Eigen::VectorXd vector_from(const Json& arr, long n, const char* what) {
    return matrix_from(arr, n, 1, what).col(0);
}

const Json& field(const Json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end()) throw SchemaError(std::string("missing field: ") + key);
    return *it;
}

int int_field(const Json& j, const char* key) {
    const Json& v = field(j, key);
    if (!v.is_number_integer()) throw SchemaError(std::string(key) + ": expected integer");
    return v.get<int>();
}

} // namespace

Json mdp_to_json(const TabularMdp& mdp) {
    Json j;
    j["num_states"] = mdp.num_states;
    j["num_actions"] = mdp.num_actions;
    j["horizon"] = mdp.horizon;
    j["init_dist"] = vector_json(mdp.init_dist);
    Json trans = Json::array();
    for (const auto& t : mdp.transitions) trans.push_back(matrix_rows(t));
    j["transitions"] = std::move(trans);
    return j;
}

TabularMdp mdp_from_json(const Json& j) {
    const int s = int_field(j, "num_states");
    const int a = int_field(j, "num_actions");
    const int h = int_field(j, "horizon");
    if (s <= 0 || a <= 0 || h <= 0) throw SchemaError("mdp: dimensions must be positive");
    const Json& trans = field(j, "transitions");
    if (!trans.is_array() || static_cast<int>(trans.size()) != h - 1)
        throw SchemaError("mdp: expected horizon-1 transition blocks");
    std::vector<Eigen::MatrixXd> ts;
    ts.reserve(trans.size());
    for (const auto& t : trans)
        ts.push_back(matrix_from(t, static_cast<long>(s) * a, s, "mdp transition"));
    Eigen::VectorXd init = vector_from(field(j, "init_dist"), s, "mdp init_dist");
    try {
        return TabularMdp(s, a, h, std::move(ts), std::move(init));
    } catch (const std::invalid_argument& e) {
        throw SchemaError(std::string("mdp: ") + e.what());
    }
}

namespace {

Json coherence_json(const std::vector<CoherenceReport>& reps) {
    Json arr = Json::array();
    for (const auto& r : reps) {
        Json j;
        j["rank"] = r.rank;
        j["mu_row"] = r.mu_row;
        j["mu_col"] = r.mu_col;
        j["mu0"] = r.mu0;
        j["mu1"] = r.mu1;
        arr.push_back(std::move(j));
    }
    return arr;
}

std::vector<CoherenceReport> coherence_from(const Json& arr) {
    if (!arr.is_array()) throw SchemaError("coherence: expected array");
    std::vector<CoherenceReport> reps;
    for (const auto& j : arr) {
        CoherenceReport r;
        r.rank = int_field(j, "rank");
        r.mu_row = field(j, "mu_row").get<double>();
        r.mu_col = field(j, "mu_col").get<double>();
        r.mu0 = field(j, "mu0").get<double>();
        r.mu1 = field(j, "mu1").get<double>();
        reps.push_back(r);
    }
    return reps;
}

} // namespace

Json bundle_from(const TabularInstance& inst) {
    Json j;
    j["schema"] = "murl.bundle.v1";
    j["kind"] = "tabular";
    j["mdp"] = mdp_to_json(inst.mdp);
    j["num_users"] = inst.rewards.num_users;
    j["rank"] = inst.rewards.rank_bound;
    Json rs = Json::array();
    for (const auto& m : inst.rewards.matrices) rs.push_back(matrix_rows(m));
    j["rewards"] = std::move(rs);
    j["coherence"] = coherence_json(inst.coherence);
    j["seed"] = inst.seed;
    j["redundant_states"] = inst.redundant_states;
    return j;
}

Json bundle_from(const LinearInstance& inst) {
    Json j;
    j["schema"] = "murl.bundle.v1";
    j["kind"] = "linear";
    j["mdp"] = mdp_to_json(inst.mdp);
    j["feature_dim"] = inst.features.feature_dim;
    j["phi"] = matrix_rows(inst.features.phi);
    j["psi"] = matrix_rows(inst.features.psi);
    Json mus = Json::array();
    for (const auto& m : inst.features.mu) mus.push_back(matrix_rows(m));
    j["mu"] = std::move(mus);
    j["num_users"] = inst.rewards.num_users;
    j["rank"] = inst.rank_bound;
    Json ths = Json::array();
    for (const auto& t : inst.theta) ths.push_back(matrix_rows(t));
    j["theta"] = std::move(ths);
    j["seed"] = inst.seed;
    if (inst.planted_deficient_direction)
        j["planted_deficient_direction"] = vector_json(*inst.planted_deficient_direction);
    else
        j["planted_deficient_direction"] = nullptr;
    return j;
}

std::string bundle_kind(const Json& bundle) {
    const Json& schema = field(bundle, "schema");
    if (!schema.is_string() || schema.get<std::string>() != "murl.bundle.v1")
        throw SchemaError("unrecognized bundle schema");
    const Json& kind = field(bundle, "kind");
    if (!kind.is_string()) throw SchemaError("bundle kind must be a string");
    const std::string k = kind.get<std::string>();
    if (k != "tabular" && k != "linear") throw SchemaError("unknown bundle kind: " + k);
    return k;
}

TabularInstance tabular_from_bundle(const Json& bundle) {
    if (bundle_kind(bundle) != "tabular") throw SchemaError("bundle is not tabular");
    TabularInstance inst;
    inst.mdp = mdp_from_json(field(bundle, "mdp"));
    inst.rewards.num_users = int_field(bundle, "num_users");
    inst.rewards.rank_bound = int_field(bundle, "rank");
    if (inst.rewards.num_users <= 0 || inst.rewards.rank_bound <= 0)
        throw SchemaError("bundle: users and rank must be positive");
    const Json& rs = field(bundle, "rewards");
    if (!rs.is_array() || static_cast<int>(rs.size()) != inst.mdp.horizon)
        throw SchemaError("bundle: expected one reward matrix per step");
    for (const auto& m : rs)
        inst.rewards.matrices.push_back(
            matrix_from(m, inst.rewards.num_users, inst.mdp.num_pairs(), "reward matrix"));
    for (const auto& m : inst.rewards.matrices)
        if ((m.array() < 0.0).any() || (m.array() > 1.0).any())
            throw SchemaError("bundle: reward entries escape [0,1]");
    inst.coherence = coherence_from(field(bundle, "coherence"));
    inst.seed = field(bundle, "seed").get<std::uint64_t>();
    if (bundle.contains("redundant_states"))
        inst.redundant_states = bundle["redundant_states"].get<std::vector<int>>();
    return inst;
}

LinearInstance linear_from_bundle(const Json& bundle) {
    if (bundle_kind(bundle) != "linear") throw SchemaError("bundle is not linear");
    LinearInstance inst;
    inst.mdp = mdp_from_json(field(bundle, "mdp"));
    const int pairs = inst.mdp.num_pairs();
    inst.features.feature_dim = int_field(bundle, "feature_dim");
    const int d = inst.features.feature_dim;
    if (d <= 0) throw SchemaError("bundle: feature_dim must be positive");
    inst.features.phi = matrix_from(field(bundle, "phi"), pairs, d, "phi");
    inst.features.psi = matrix_from(field(bundle, "psi"), pairs, d, "psi");
    const Json& mus = field(bundle, "mu");
    if (!mus.is_array() || static_cast<int>(mus.size()) != inst.mdp.horizon - 1)
        throw SchemaError("bundle: expected horizon-1 mu blocks");
    for (const auto& m : mus)
        inst.features.mu.push_back(matrix_from(m, d, inst.mdp.num_states, "mu"));
    inst.features.init_dist = inst.mdp.init_dist;
    inst.rank_bound = int_field(bundle, "rank");
    inst.rewards.num_users = int_field(bundle, "num_users");
    inst.rewards.rank_bound = inst.rank_bound;
    const Json& ths = field(bundle, "theta");
    if (!ths.is_array() || static_cast<int>(ths.size()) != inst.mdp.horizon)
        throw SchemaError("bundle: expected one theta matrix per step");
    for (const auto& t : ths)
        inst.theta.push_back(matrix_from(t, inst.rewards.num_users, d, "theta"));
    for (const auto& t : inst.theta) {
        Eigen::MatrixXd r = t * inst.features.psi.transpose();
        if ((r.array() < -1e-9).any() || (r.array() > 1.0 + 1e-9).any())
            throw SchemaError("bundle: theta produces rewards outside [0,1]");
        inst.rewards.matrices.push_back(r.array().max(0.0).min(1.0).matrix());
    }
    inst.seed = field(bundle, "seed").get<std::uint64_t>();
    const Json& planted = field(bundle, "planted_deficient_direction");
    if (!planted.is_null())
        inst.planted_deficient_direction = vector_from(planted, d, "planted direction");
    try {
        inst.features.validate(inst.mdp.num_states, inst.mdp.num_actions, inst.mdp.horizon);
    } catch (const std::invalid_argument& e) {
        throw SchemaError(std::string("bundle features: ") + e.what());
    }
    return inst;
}

void save_json_file(const std::string& path, const Json& doc) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << doc.dump(2) << "\n";
    if (!out) throw std::runtime_error("write failed: " + path);
}

Json load_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw SchemaError("cannot open: " + path);
    Json j = Json::parse(in, nullptr, false);
    if (j.is_discarded()) throw SchemaError("malformed document: " + path);
    return j;
}

void write_csv_file(const std::string& path, const CsvTable& table) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    for (std::size_t i = 0; i < table.header.size(); ++i)
        out << (i ? "," : "") << table.header[i];
    out << "\n";
    for (const auto& row : table.rows) {
        if (row.size() != table.header.size())
            throw std::invalid_argument("csv row width mismatch");
        for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
        out << "\n";
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

void write_plot_data(const std::string& path,
                     const std::vector<std::pair<double, double>>& xy) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    for (const auto& [x, y] : xy) out << g17(x) << " " << g17(y) << "\n";
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::string g17(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

double median(std::vector<double> values) {
    return quantile(std::move(values), 0.5);
}

double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw std::invalid_argument("quantile of empty set");
    if (q < 0.0 || q > 1.0) throw std::invalid_argument("quantile level outside [0,1]");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = static_cast<std::size_t>(std::ceil(pos));
    const double frac = pos - static_cast<double>(lo);
    return values[lo] * (1.0 - frac) + values[hi] * frac;
}

} // namespace murl
