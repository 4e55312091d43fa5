#pragma once

#include <string>
#include <vector>

#include "sentinel/corpus.hpp"
#include "sentinel/types.hpp"

namespace sentinel {

/// Model input after sentinel injection. All arrays share one length.
struct SentinelSequence {
  std::vector<TokenId> tokens;
  std::vector<std::uint8_t> is_sentinel;
  std::vector<Index> position_ids;
  std::vector<TokenId> labels;
  std::vector<Index> chunk_ids;

  Index size() const { return static_cast<Index>(tokens.size()); }
  Index sentinel_count() const;
  bool operator==(const SentinelSequence&) const = default;
};

/// Appends one <sr> after the last token of every chunk. Only tokens, flags
/// and chunk ids are filled; positions and labels are left empty.
SentinelSequence inject_sentinels(const TokenSequence& seq, const Vocab& vocab);

/// Ordinary tokens are numbered 0, 1, ...; a sentinel repeats the id of the
/// nearest preceding ordinary token. Throws if a sentinel has no predecessor.
void assign_position_ids(SentinelSequence& seq);

/// Next-token labels that skip over sentinels; sentinel positions and
/// positions with no ordinary successor get kIgnoreLabel.
void assign_labels(SentinelSequence& seq);

/// Drops sentinel positions and rebuilds chunk spans from chunk ids.
TokenSequence strip_sentinels(const SentinelSequence& seq);

/// inject_sentinels + assign_position_ids + assign_labels.
SentinelSequence make_sentinel_sequence(const TokenSequence& seq, const Vocab& vocab);

/// Baseline input: no sentinels, plain next-token labels, positions 0..N-1.
SentinelSequence make_origin_sequence(const TokenSequence& seq);

enum class PipelineMode { kOrigin, kSentinel };

/// Splits a document into windows at chunk boundaries. The budget counts one
/// sentinel per chunk in both modes, so origin and sentinel windows cover the
/// same tokens. Throws if a single chunk plus its sentinel exceeds the budget.
std::vector<TokenSequence> window_document(const TokenSequence& seq, Index max_length);

SentinelSequence make_sequence(const TokenSequence& seq, const Vocab& vocab, PipelineMode mode);

/// Checks every injection/position/label rule. Returns the name of the first
/// violated rule, or an empty string.
std::string check_sentinel_rules(const SentinelSequence& seq, const Vocab& vocab);

}  // namespace sentinel
