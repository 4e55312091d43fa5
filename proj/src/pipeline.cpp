#include "sentinel/pipeline.hpp"

#include <algorithm>
#include <stdexcept>

namespace sentinel {

Index SentinelSequence::sentinel_count() const {
  return std::count(is_sentinel.begin(), is_sentinel.end(), std::uint8_t{1});
}

SentinelSequence inject_sentinels(const TokenSequence& seq, const Vocab& vocab) {
  validate_token_sequence(seq, vocab);
  SentinelSequence out;
  const auto total = static_cast<std::size_t>(seq.size()) + seq.chunks.size();
  out.tokens.reserve(total);
  out.is_sentinel.reserve(total);
  out.chunk_ids.reserve(total);
  for (std::size_t k = 0; k < seq.chunks.size(); ++k) {
    const auto& span = seq.chunks[k];
    for (Index i = span.begin; i < span.end; ++i) {
      out.tokens.push_back(seq.tokens[static_cast<std::size_t>(i)]);
      out.is_sentinel.push_back(0);
      out.chunk_ids.push_back(static_cast<Index>(k));
    }
    out.tokens.push_back(vocab.sr_id());
    out.is_sentinel.push_back(1);
    out.chunk_ids.push_back(static_cast<Index>(k));
  }
  return out;
}

void assign_position_ids(SentinelSequence& seq) {
  const auto m = seq.tokens.size();
  seq.position_ids.assign(m, 0);
  Index next = 0;
  for (std::size_t i = 0; i < m; ++i) {
    if (seq.is_sentinel[i]) {
      if (next == 0) throw std::invalid_argument("sentinel without a preceding ordinary token");
      seq.position_ids[i] = next - 1;
    } else {
      seq.position_ids[i] = next++;
    }
  }
}

void assign_labels(SentinelSequence& seq) {
  const auto m = seq.tokens.size();
  seq.labels.assign(m, kIgnoreLabel);
  // Scan right to left carrying the first ordinary token strictly after i.
  TokenId next_ordinary = kIgnoreLabel;
  for (std::size_t i = m; i-- > 0;) {
    if (seq.is_sentinel[i]) continue;
    seq.labels[i] = next_ordinary;
    next_ordinary = seq.tokens[i];
  }
}

TokenSequence strip_sentinels(const SentinelSequence& seq) {
  TokenSequence out;
  Index current_chunk = -1;
  for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
    if (seq.is_sentinel[i]) continue;
    if (seq.chunk_ids[i] != current_chunk) {
      if (!out.chunks.empty()) out.chunks.back().end = out.size();
      out.chunks.push_back({out.size(), out.size()});
      current_chunk = seq.chunk_ids[i];
    }
    out.tokens.push_back(seq.tokens[i]);
  }
  if (!out.chunks.empty()) out.chunks.back().end = out.size();
  return out;
}

SentinelSequence make_sentinel_sequence(const TokenSequence& seq, const Vocab& vocab) {
  auto out = inject_sentinels(seq, vocab);
  assign_position_ids(out);
  assign_labels(out);
  return out;
}

SentinelSequence make_origin_sequence(const TokenSequence& seq) {
  SentinelSequence out;
  out.tokens = seq.tokens;
  out.is_sentinel.assign(seq.tokens.size(), 0);
  out.chunk_ids.assign(seq.tokens.size(), 0);
  for (std::size_t k = 0; k < seq.chunks.size(); ++k)
    for (Index i = seq.chunks[k].begin; i < seq.chunks[k].end; ++i)
      out.chunk_ids[static_cast<std::size_t>(i)] = static_cast<Index>(k);
  assign_position_ids(out);
  assign_labels(out);
  return out;
}

std::vector<TokenSequence> window_document(const TokenSequence& seq, Index max_length) {
  std::vector<TokenSequence> windows;
  TokenSequence current;
  Index used = 0;
  for (const auto& span : seq.chunks) {
    const Index cost = span.size() + 1;
    if (cost > max_length)
      throw std::invalid_argument("chunk of " + std::to_string(span.size()) +
                                  " tokens does not fit a window of " +
                                  std::to_string(max_length));
    if (used + cost > max_length) {
      windows.push_back(std::move(current));
      current = {};
      used = 0;
    }
    const Index begin = current.size();
    current.tokens.insert(current.tokens.end(), seq.tokens.begin() + span.begin,
                          seq.tokens.begin() + span.end);
    current.chunks.push_back({begin, current.size()});
    used += cost;
  }
  if (!current.tokens.empty()) windows.push_back(std::move(current));
  return windows;
}

SentinelSequence make_sequence(const TokenSequence& seq, const Vocab& vocab, PipelineMode mode) {
  return mode == PipelineMode::kSentinel ? make_sentinel_sequence(seq, vocab)
                                         : make_origin_sequence(seq);
}

std::string check_sentinel_rules(const SentinelSequence& seq, const Vocab& vocab) {
  const auto m = seq.tokens.size();
  if (seq.is_sentinel.size() != m || seq.position_ids.size() != m || seq.labels.size() != m ||
      seq.chunk_ids.size() != m)
    return "array-lengths";
  if (m == 0) return "non-empty";

  for (std::size_t i = 0; i < m; ++i) {
    if (seq.tokens[i] < 0 || seq.tokens[i] >= vocab.size()) return "token-range";
    if (seq.labels[i] != kIgnoreLabel && (seq.labels[i] < 0 || seq.labels[i] >= vocab.size()))
      return "label-range";
    if (seq.is_sentinel[i] > 1) return "flag-binary";
    if ((seq.tokens[i] == vocab.sr_id()) != (seq.is_sentinel[i] == 1)) return "flag-matches-token";
  }

  // Chunk ids start at 0 and step by one at chunk boundaries.
  if (seq.chunk_ids[0] != 0) return "chunk-ids-contiguous";
  for (std::size_t i = 1; i < m; ++i) {
    const Index d = seq.chunk_ids[i] - seq.chunk_ids[i - 1];
    if (d != 0 && d != 1) return "chunk-ids-contiguous";
  }

  const bool has_sentinels = seq.sentinel_count() > 0;
  if (has_sentinels) {
    // Exactly one sentinel per chunk, at its end, after at least one ordinary token.
    for (std::size_t i = 0; i < m; ++i) {
      const bool last_of_chunk = i + 1 == m || seq.chunk_ids[i + 1] != seq.chunk_ids[i];
      if (seq.is_sentinel[i] != (last_of_chunk ? 1 : 0)) return "sentinel-at-chunk-end";
      const bool first_of_chunk = i == 0 || seq.chunk_ids[i - 1] != seq.chunk_ids[i];
      if (seq.is_sentinel[i] && first_of_chunk) return "chunk-non-empty";
    }
  }

  Index next = 0;
  for (std::size_t i = 0; i < m; ++i) {
    if (seq.is_sentinel[i]) {
      if (i == 0 || seq.position_ids[i] != seq.position_ids[i - 1]) return "sentinel-position-congruence";
    } else {
      if (seq.position_ids[i] != next++) return "ordinary-positions-consecutive";
    }
  }

  TokenId next_ordinary = kIgnoreLabel;
  for (std::size_t i = m; i-- > 0;) {
    if (seq.labels[i] == vocab.sr_id()) return "label-not-sentinel";
    if (seq.is_sentinel[i]) {
      if (seq.labels[i] != kIgnoreLabel) return "sentinel-label-ignored";
      continue;
    }
    if (seq.labels[i] != next_ordinary) return "label-next-ordinary";
    next_ordinary = seq.tokens[i];
  }
  return {};
}

}  // namespace sentinel
