#include "sentinel/dataset_io.hpp"

#include <fstream>

namespace sentinel {

nlohmann::json record_to_json(const DatasetRecord& record, const std::string& config_hash) {
  const auto& s = record.sequence;
  std::vector<int> flags(s.is_sentinel.begin(), s.is_sentinel.end());
  return {{"tokens", s.tokens},
          {"sentinel_flags", flags},
          {"position_ids", s.position_ids},
          {"labels", s.labels},
          {"chunk_ids", s.chunk_ids},
          {"doc", record.doc},
          {"config_hash", config_hash}};
}

namespace {

template <typename T>
std::vector<T> int_array(const nlohmann::json& j, const char* key, Index index) {
  if (!j.contains(key)) throw DatasetError(index, std::string("missing field '") + key + "'");
  const auto& a = j.at(key);
  if (!a.is_array()) throw DatasetError(index, std::string("field '") + key + "' is not an array");
  std::vector<T> out;
  out.reserve(a.size());
  for (const auto& v : a) {
    if (!v.is_number_integer()) throw DatasetError(index, std::string("field '") + key + "' holds a non-integer");
    out.push_back(v.get<T>());
  }
  return out;
}

}  // namespace

DatasetRecord record_from_json(const nlohmann::json& j, Index index) {
  if (!j.is_object()) throw DatasetError(index, "record is not a JSON object");
  DatasetRecord r;
  auto& s = r.sequence;
  s.tokens = int_array<TokenId>(j, "tokens", index);
  for (int f : int_array<int>(j, "sentinel_flags", index)) {
    if (f != 0 && f != 1) throw DatasetError(index, "sentinel_flags must be 0 or 1");
    s.is_sentinel.push_back(static_cast<std::uint8_t>(f));
  }
  s.position_ids = int_array<Index>(j, "position_ids", index);
  s.labels = int_array<TokenId>(j, "labels", index);
  s.chunk_ids = int_array<Index>(j, "chunk_ids", index);
  if (j.contains("doc")) {
    if (!j.at("doc").is_number_integer()) throw DatasetError(index, "field 'doc' is not an integer");
    r.doc = j.at("doc").get<Index>();
  }
  return r;
}

void write_dataset(const std::filesystem::path& path, const std::vector<DatasetRecord>& records,
                   const std::string& config_hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : records) out << record_to_json(r, config_hash).dump() << '\n';
}

std::vector<DatasetRecord> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<DatasetRecord> out;
  std::string line;
  Index index = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DatasetError(index, std::string("malformed JSON: ") + e.what());
    }
    out.push_back(record_from_json(j, index));
    ++index;
  }
  return out;
}

std::vector<SentinelSequence> sequences(const std::vector<DatasetRecord>& records) {
  std::vector<SentinelSequence> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.sequence);
  return out;
}

}  // namespace sentinel
