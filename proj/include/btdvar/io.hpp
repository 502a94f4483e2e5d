#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "btdvar/gc.hpp"
#include "btdvar/sampler.hpp"
#include "btdvar/var_process.hpp"

namespace btdvar {

namespace fs = std::filesystem;

/// Malformed configuration or command line.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Missing, unreadable or malformed input files.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);
/// Full-string parse; std::nullopt on anything else.
std::optional<double> parse_double(const std::string& s);

// ---------------------------------------------------------------------------
// CSV tables

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

/// Comma separated, first line is the header. Throws IoError naming the file
/// and line for ragged rows.
Table read_table(const fs::path& path);
void write_table(const fs::path& path, const Table& table);

/// Numeric matrix with a header line of column names.
struct NamedMatrix {
    std::vector<std::string> names;
    Matrix values;
};

NamedMatrix read_matrix_csv(const fs::path& path);
void write_matrix_csv(const fs::path& path, const Matrix& m, const std::vector<std::string>& names);

/// One CSV per subject (T rows x K columns, header of series names). All
/// files must share header and length.
PanelData read_panel(const std::vector<fs::path>& files, Index holdout);
/// Writes subject_01.csv, subject_02.csv, ... into `dir`; returns the paths.
std::vector<fs::path> write_panel(const fs::path& dir, const PanelData& data);
/// Sorted *.csv files of a directory.
std::vector<fs::path> list_csv(const fs::path& dir);

// ---------------------------------------------------------------------------
// Networks

/// Rows lag,target,source,probability,edge with one-based indices.
void write_network_csv(const fs::path& path, const InclusionTensor& v, const EdgeSet& edges);
struct NetworkFile {
    InclusionTensor probability;
    EdgeSet edges;
};
NetworkFile read_network_csv(const fs::path& path);

/// K x K composite adjacency (target rows, source columns) with names.
void write_composite_csv(const fs::path& path, const EdgeSet& edges, const std::vector<std::string>& names);

/// Directed graph source -> target of the composite network; every series
/// appears as a node even without edges.
std::string to_dot(const EdgeSet& edges, const std::vector<std::string>& names, const std::string& graph_name);

// ---------------------------------------------------------------------------
// Configuration

/// Flat `key = value` text. '#' starts a comment; blank lines are ignored.
std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& origin);

struct RunConfig {
    std::string mode;
    std::uint64_t seed = 1;

    // simulate
    std::string scenario = "block";
    Index k = 10;
    Index lags_true = 4;
    std::size_t subjects = 1;
    Index t = 150;
    Index holdout = 30;
    Index sim_burn_in = kDefaultBurnIn;
    double random_scale = 0.1;
    double alpha_scale = 1.0;

    // fit
    std::string data_dir;
    SamplerConfig sampler;
    int checkpoint_every = 500;

    // gc / metrics
    std::string draws;
    std::string truth;
    std::string network;
    DecisionConfig decision;

    /// Keys explicitly given (the rest are defaults).
    std::map<std::string, std::string> given;

    /// Mode-specific required fields and value ranges; throws ConfigError.
    void validate() const;
    /// Every key with its resolved value, for the run manifest.
    [[nodiscard]] std::vector<std::pair<std::string, std::string>> resolved() const;
};

/// Unknown keys and unparsable values raise ConfigError.
RunConfig parse_run_config(const std::map<std::string, std::string>& kv, const std::string& mode);
RunConfig load_run_config(const fs::path& path, const std::string& mode);

// ---------------------------------------------------------------------------
// Binary containers

constexpr std::uint32_t kContainerVersion = 1;

enum class ContainerKind : std::uint32_t { chain = 1, draws = 2 };

void save_chain(const fs::path& path, const ChainState& chain);
ChainState load_chain(const fs::path& path);
void save_draws(const fs::path& path, const PosteriorDraws& draws);
PosteriorDraws load_draws(const fs::path& path);

// ---------------------------------------------------------------------------
// Commands

/// Prints "key = value" lines of cfg.resolved() plus extras as result.<key>;
/// the file parses back as a config for the same mode.
void write_manifest(const fs::path& path, const RunConfig& cfg,
                    const std::vector<std::pair<std::string, std::string>>& extra);

struct FitQuality {
    std::optional<double> r2_in;
    std::optional<double> r2_out;
};

/// Posterior-mean one-step fits, averaged across subjects. The out-of-sample
/// value is empty without holdout rows.
FitQuality posterior_fit_quality(const PosteriorDraws& draws, const PanelData& data);
/// Same for an OLS fit of each subject; empty when OLS is not computable.
FitQuality ols_fit_quality(const PanelData& data, Index lags);

void run_simulate(const RunConfig& cfg, const fs::path& out);
void run_fit(const RunConfig& cfg, const fs::path& out, const std::optional<fs::path>& resume);
void run_gc(const RunConfig& cfg, const fs::path& out);
void run_metrics(const RunConfig& cfg, const fs::path& out);

std::string version_string();

}  // namespace btdvar
