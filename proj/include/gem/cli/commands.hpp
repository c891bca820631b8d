#pragma once

#include "gem/cli/config.hpp"

#include <map>
#include <string>
#include <vector>

namespace gem::cli {

enum ExitCode : int { kSuccess = 0, kUsageError = 1, kReproMismatch = 2, kDivergence = 3 };

enum class OutputFormat { json, csv, table };

/// Everything a command produces. Nothing here depends on wall-clock time.
struct CommandOutput {
    Json json;                                  // machine-readable report
    std::vector<Json> json_lines;               // line-delimited records, emitted before `json` when present
    std::string csv;
    std::string table;
    std::map<std::string, std::string> files;  // written under --out
    int exit_code = kSuccess;

    /// Text for standard output in the requested format.
    std::string render(OutputFormat format) const;
};

CommandOutput cmd_reproduce(const ExperimentConfig& config);
CommandOutput cmd_route(const ExperimentConfig& config);
CommandOutput cmd_scar(const ExperimentConfig& config);
CommandOutput cmd_quantize(const ExperimentConfig& config);
CommandOutput cmd_metrics(const ExperimentConfig& config);
CommandOutput cmd_cost(const ExperimentConfig& config);
CommandOutput cmd_train(const ExperimentConfig& config);
CommandOutput cmd_forget(const ExperimentConfig& config);

/// Synthetic clustered embeddings for the scar command: `n` points around
/// `source_clusters` random directions with Gaussian noise.
Matrix synthetic_embeddings(const ScarSettings& settings, std::uint64_t seed);

/// Parses argv and runs one subcommand. Returns the process exit code.
int run_cli(int argc, char** argv);

}  // namespace gem::cli
