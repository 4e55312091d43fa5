#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sentinel/evaluation.hpp"

namespace sentinel {

enum class RunMode { kOrigin, kSentinel, kLora };

/// Flat key=value settings shared by every command. Unknown keys are
/// rejected; every key has a default.
class RunConfig {
 public:
  RunConfig();

  /// Parses "key = value" lines; '#' starts a comment.
  static RunConfig from_text(const std::string& text);
  static RunConfig from_file(const std::filesystem::path& path);

  static const std::map<std::string, std::string>& defaults();

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  long get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;
  std::vector<std::filesystem::path> get_paths(const std::string& key) const;

  /// Replaces "auto" values with concrete ones and type-checks every key.
  RunConfig resolved() const;

  /// Sorted key=value lines.
  std::string to_text() const;

  /// Hash of the resolved settings, excluding the output directory.
  std::uint64_t hash() const;
  std::string hash_hex() const;

  RunMode mode() const;
  PipelineMode pipeline() const { return mode() == RunMode::kOrigin ? PipelineMode::kOrigin : PipelineMode::kSentinel; }
  ModelConfig model_config(Index vocab_size) const;
  TrainConfig train_config() const;
  ExperimentConfig experiment() const;
  std::filesystem::path out_dir() const { return get("out_dir"); }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace sentinel
