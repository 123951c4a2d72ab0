#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ptuner/importance.hpp"
#include "ptuner/metrics.hpp"
#include "ptuner/nsga2.hpp"
#include "ptuner/surrogate.hpp"

namespace ptuner::cli {

enum ExitCode : int {
    exit_ok = 0,
    exit_usage = 1,
    exit_config = 2,
    exit_evaluator = 3,
    exit_io = 4,
    exit_data = 5,
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class EvaluatorFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class OutputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr const char* kBackendEnv = "PARETO_TUNER_BACKEND";

struct EvaluatorSpec {
    enum class Kind { surrogate, external } kind = Kind::surrogate;
    SurrogateConfig surrogate{};
    std::vector<std::string> command;
    std::chrono::milliseconds handshake_timeout{120000};
    std::chrono::milliseconds request_timeout{300000};
};

struct ExperimentConfig {
    std::string base_prompt = "two people and a bus";
    NsgaConfig nsga{};
    std::size_t repeats = 15;
    EvaluatorSpec evaluator{};
    std::size_t parallelism = 1;
    std::size_t retries = 1;
    std::optional<std::filesystem::path> cache_dir;
    RefPoint hv_ref{};
    SearchSpace space = SearchSpace::default_space();
    std::filesystem::path output_dir = "runs";
};

/// JSON config; every key is optional and unknown keys are rejected.
/// Relative paths resolve against `base_dir`. Throws ConfigError.
ExperimentConfig parse_experiment_config(const std::string& text, const std::filesystem::path& base_dir = ".");
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
std::string experiment_config_to_json(const ExperimentConfig& cfg);

/// Seed of repeat `index`.
std::uint64_t run_seed(std::uint64_t master_seed, std::size_t index);

std::string archive_file_name(std::size_t index);

struct RunSummary {
    std::vector<std::filesystem::path> archives;
    std::filesystem::path manifest;
    bool all_complete = true;
};

/// Runs `cfg.repeats` independent optimizations into cfg.output_dir: one
/// run-NNN.archive per repeat plus manifest.json (the only file holding
/// wall-clock times). Throws ConfigError, EvaluatorFailure or OutputError;
/// an incomplete run is reported through RunSummary::all_complete.
RunSummary cmd_run(const ExperimentConfig& cfg, std::ostream& log);

/// Applies PARETO_TUNER_BACKEND when set.
void apply_backend_env(ExperimentConfig& cfg);

struct CompareOptions {
    std::filesystem::path dir_a;
    std::filesystem::path dir_b;
    std::optional<RefPoint> ref;
    std::filesystem::path out_dir;
};

/// Writes comparison.json, comparison.tsv and comparison.txt.
ComparisonReport cmd_compare(const CompareOptions& opts, std::ostream& out);

struct ImportanceCliOptions {
    std::filesystem::path in_dir;
    Target target = Target::time;
    ImportanceOptions analysis{};
    std::filesystem::path out_dir;
};

/// Writes importance-<target>.tsv, importance-<target>-groups.tsv and
/// importance-<target>.txt (the bar chart).
ImportanceReport cmd_importance(const ImportanceCliOptions& opts, std::ostream& out);

/// Full argument handling; returns the process exit code.
int main_entry(int argc, char** argv);

} // namespace ptuner::cli
