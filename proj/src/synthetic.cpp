#include "sentinel/synthetic.hpp"

#include <algorithm>
#include <array>
#include <numeric>
#include <stdexcept>
#include <string_view>

namespace sentinel {

namespace {

constexpr std::array<std::string_view, 24> kNames = {
    "Aldor", "Brenna", "Caius", "Delmar", "Elspeth", "Fenwick", "Galen", "Hollis",
    "Isolde", "Jareth", "Kestrel", "Lorcan", "Maren", "Niall", "Orla", "Perrin",
    "Quill", "Rowena", "Soren", "Tamsin", "Ulric", "Vesna", "Wendel", "Yara"};

constexpr std::array<std::string_view, 16> kPlaces = {
    "Ashford", "Briarwood", "Coldwater", "Dunmore", "Eastmarch", "Fairhaven", "Glenrock", "Highcliff",
    "Ironvale", "Kingsbridge", "Larkspur", "Millbrook", "Northwick", "Oakridge", "Redmoor", "Stonehall"};

constexpr std::array<std::string_view, 24> kNouns = {
    "river", "bridge", "museum", "harbor", "library", "castle", "railway", "market",
    "school", "church", "garden", "tower", "mill", "theatre", "college", "farm",
    "road", "fortress", "village", "council", "army", "company", "newspaper", "festival"};

constexpr std::array<std::string_view, 20> kAdjectives = {
    "ancient", "small", "large", "famous", "northern", "southern", "royal", "wooden",
    "stone", "busy", "quiet", "modern", "old", "new", "wealthy", "local",
    "national", "coastal", "western", "eastern"};

constexpr std::array<std::string_view, 16> kVerbs = {
    "built", "visited", "founded", "described", "opened", "restored", "governed", "defended",
    "crossed", "painted", "studied", "expanded", "destroyed", "named", "praised", "joined"};

constexpr std::array<std::string_view, 6> kRoles = {"writer", "soldier", "merchant", "architect", "painter",
                                                    "scholar"};

template <typename Pool>
std::string pick(std::mt19937_64& rng, const Pool& pool) {
  return std::string(pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)]);
}

std::string year(std::mt19937_64& rng) {
  return std::to_string(std::uniform_int_distribution<int>(18, 19)(rng) * 100 +
                        std::uniform_int_distribution<int>(0, 9)(rng) * 10);
}

}  // namespace

std::vector<std::string> synthetic_text_corpus(std::uint64_t seed, std::size_t target_bytes) {
  std::mt19937_64 rng(seed);
  std::vector<std::string> docs;
  std::size_t total = 0;
  while (total < target_bytes) {
    const std::string name = pick(rng, kNames);
    const std::string place = pick(rng, kPlaces);
    const std::string role = pick(rng, kRoles);
    const std::string landmark = pick(rng, kNouns);
    const int sentences = std::uniform_int_distribution<int>(5, 10)(rng);
    std::string doc = name + " was a " + pick(rng, kAdjectives) + " " + role + " from " + place + " .";
    for (int s = 1; s < sentences; ++s) {
      std::string line;
      switch (std::uniform_int_distribution<int>(0, 6)(rng)) {
        case 0:
          line = "In " + year(rng) + " , " + name + " " + pick(rng, kVerbs) + " the " + pick(rng, kAdjectives) + " " +
                 landmark + " of " + place + " .";
          break;
        case 1:
          line = "The " + landmark + " was " + pick(rng, kVerbs) + " by the " + pick(rng, kNouns) + " .";
          break;
        case 2:
          line = "As a " + role + " , " + name + " " + pick(rng, kVerbs) + " many " + pick(rng, kNouns) + "s in " +
                 pick(rng, kPlaces) + " .";
          break;
        case 3:
          line = "Later the " + pick(rng, kAdjectives) + " " + pick(rng, kNouns) + " of " + place + " " +
                 pick(rng, kVerbs) + " the " + landmark + " .";
          break;
        case 4:
          line = "It is said that " + name + " " + pick(rng, kVerbs) + " a " + pick(rng, kNouns) + " near the " +
                 landmark + " .";
          break;
        case 5:
          line = "The " + role + " " + name + " died in " + place + " in " + year(rng) + " .";
          break;
        default:
          line = "Today the " + landmark + " of " + place + " is " + pick(rng, kAdjectives) + " and " +
                 pick(rng, kAdjectives) + " .";
          break;
      }
      doc += ' ' + line;
    }
    total += doc.size() + 2;
    docs.push_back(std::move(doc));
  }
  return docs;
}

std::string KvExample::training_text() const {
  std::string text;
  for (const auto& f : facts) text += f + ' ';
  return text + question + ' ' + answer + " .";
}

KvExample make_kv_example(std::mt19937_64& rng, const KvTaskConfig& config) {
  if (config.facts_per_doc < 1 || config.value_pool < 1)
    throw std::invalid_argument("key-value task needs at least one fact and one value");
  if (config.key_pool < config.facts_per_doc)
    throw std::invalid_argument("key pool smaller than facts per document; keys must be distinct");
  std::vector<int> keys(static_cast<std::size_t>(config.key_pool));
  std::iota(keys.begin(), keys.end(), 0);
  std::shuffle(keys.begin(), keys.end(), rng);
  std::uniform_int_distribution<int> value(0, config.value_pool - 1);
  KvExample ex;
  std::vector<std::string> values;
  for (int i = 0; i < config.facts_per_doc; ++i) {
    values.push_back("val_" + std::to_string(value(rng)));
    ex.facts.push_back("key_" + std::to_string(keys[static_cast<std::size_t>(i)]) + " is " + values.back() + " .");
  }
  ex.gold = std::uniform_int_distribution<int>(0, config.facts_per_doc - 1)(rng);
  ex.question = "key_" + std::to_string(keys[static_cast<std::size_t>(ex.gold)]) + " ?";
  ex.answer = values[static_cast<std::size_t>(ex.gold)];
  return ex;
}

std::vector<std::string> synthetic_kv_corpus(std::uint64_t seed, int documents, const KvTaskConfig& config) {
  std::mt19937_64 rng(seed);
  std::vector<std::string> docs;
  for (int d = 0; d < documents; ++d) docs.push_back(make_kv_example(rng, config).training_text());
  return docs;
}

}  // namespace sentinel
