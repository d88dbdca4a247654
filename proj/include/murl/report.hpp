#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "murl/instances.hpp"

namespace murl {

struct SchemaError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Json = nlohmann::json;

// --- instance bundles ----------------------------------------------------
// Bundle documents carry {"schema", "kind", "mdp", ...}; doubles survive a
// save/load cycle bit-for-bit.

Json mdp_to_json(const TabularMdp& mdp);
TabularMdp mdp_from_json(const Json& j);

Json bundle_from(const TabularInstance& inst);
Json bundle_from(const LinearInstance& inst);

// "tabular" or "linear"; throws SchemaError on anything else
std::string bundle_kind(const Json& bundle);

TabularInstance tabular_from_bundle(const Json& bundle);
LinearInstance linear_from_bundle(const Json& bundle);

// --- files ---------------------------------------------------------------

void save_json_file(const std::string& path, const Json& doc);

// throws SchemaError on missing files or malformed documents
Json load_json_file(const std::string& path);

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

void write_csv_file(const std::string& path, const CsvTable& table);

// two-column whitespace-separated series for plotting tools
void write_plot_data(const std::string& path, const std::vector<std::pair<double, double>>& xy);

// 17-significant-digit decimal rendering, round-trip exact for doubles
std::string g17(double x);

std::uint64_t fnv1a(const std::string& bytes);
std::string hex64(std::uint64_t v);

// --- cross-seed aggregation ----------------------------------------------

double median(std::vector<double> values);
double quantile(std::vector<double> values, double q);

} // namespace murl
