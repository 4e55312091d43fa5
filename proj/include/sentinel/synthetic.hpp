#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace sentinel {

/// Encyclopedia-style paragraphs from a small template grammar. Each document
/// keeps one subject and place so later sentences depend on earlier ones.
/// Generates documents until their total size reaches `target_bytes`.
std::vector<std::string> synthetic_text_corpus(std::uint64_t seed, std::size_t target_bytes);

struct KvTaskConfig {
  int facts_per_doc = 6;
  int key_pool = 24;
  int value_pool = 24;
};

/// One key-value retrieval instance: facts "key_i is val_j ." (distinct keys),
/// a question "key_g ?" about fact `gold`, and its answer value.
struct KvExample {
  std::vector<std::string> facts;
  std::string question;
  std::string answer;
  int gold = 0;

  /// Facts, question and answer as one training document.
  std::string training_text() const;
};

KvExample make_kv_example(std::mt19937_64& rng, const KvTaskConfig& config);

std::vector<std::string> synthetic_kv_corpus(std::uint64_t seed, int documents, const KvTaskConfig& config);

}  // namespace sentinel
