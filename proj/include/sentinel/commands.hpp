#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "sentinel/corpus.hpp"
#include "sentinel/run_config.hpp"

namespace sentinel {

struct ValidationReport {
  bool ok = true;
  Index records = 0;
  Index bad_record = -1;
  std::string rule;     // name of the violated rule
  std::string message;  // human-readable detail
};

/// Re-checks every sentinel-pipeline and attention-mask rule per record,
/// stopping at the first violation.
ValidationReport validate_dataset(const std::filesystem::path& path, const Vocab& vocab);

/// Subcommands. Each returns a process exit code, prints results to `out`
/// and progress to `log`, and writes its artifacts under out_dir.
int cmd_prepare(const RunConfig& config, std::ostream& out, std::ostream& log);
int cmd_validate(const RunConfig& config, std::ostream& out, std::ostream& log);
int cmd_train(const RunConfig& config, std::ostream& out, std::ostream& log);
int cmd_eval(const RunConfig& config, std::ostream& out, std::ostream& log);
int cmd_sweep(const RunConfig& config, std::ostream& out, std::ostream& log);
int cmd_probe(const RunConfig& config, std::ostream& out, std::ostream& log);
int cmd_synth(const RunConfig& config, std::ostream& out, std::ostream& log);

/// Dispatches by name; throws std::invalid_argument for an unknown command.
int run_command(const std::string& name, const RunConfig& config, std::ostream& out, std::ostream& log);

}  // namespace sentinel
