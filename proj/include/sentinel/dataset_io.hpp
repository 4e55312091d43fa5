#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "sentinel/pipeline.hpp"

namespace sentinel {

/// Wire value of kIgnoreLabel in dataset records.
inline constexpr int kWireIgnoreLabel = -100;
static_assert(kWireIgnoreLabel == kIgnoreLabel);

struct DatasetRecord {
  SentinelSequence sequence;
  Index doc = 0;  // source document index
};

/// Malformed JSON or a schema violation, tagged with the 0-based record index.
class DatasetError : public std::runtime_error {
 public:
  DatasetError(Index record, const std::string& what)
      : std::runtime_error("record " + std::to_string(record) + ": " + what), record_(record) {}
  Index record() const { return record_; }

 private:
  Index record_;
};

nlohmann::json record_to_json(const DatasetRecord& record, const std::string& config_hash);
DatasetRecord record_from_json(const nlohmann::json& j, Index index);

/// One compact JSON object per line.
void write_dataset(const std::filesystem::path& path, const std::vector<DatasetRecord>& records,
                   const std::string& config_hash);
std::vector<DatasetRecord> read_dataset(const std::filesystem::path& path);

std::vector<SentinelSequence> sequences(const std::vector<DatasetRecord>& records);

}  // namespace sentinel
