#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "sentinel/pipeline.hpp"

namespace sentinel {

using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Query-to-key permission matrix in compact block form.
///
/// Every row allows one contiguous run of keys ending at the diagonal:
/// an ordinary row r sees its causal prefix [0, r], a sentinel row sees the
/// ordinary tokens of its own chunk plus itself. `row(r)` is that run.
class AttentionMask {
 public:
  enum class RowKind : std::uint8_t { kOrdinary, kSentinel };

  struct Row {
    RowKind kind = RowKind::kOrdinary;
    Span keys;  // allowed key columns

    bool operator==(const Row&) const = default;
  };

  AttentionMask() = default;
  explicit AttentionMask(std::vector<Row> rows);

  /// Plain lower-triangular mask.
  static AttentionMask causal(Index size);

  Index size() const { return static_cast<Index>(rows_.size()); }
  const Row& row(Index r) const { return rows_[static_cast<std::size_t>(r)]; }
  const std::vector<Row>& rows() const { return rows_; }

  bool allowed(Index r, Index c) const {
    const auto& k = row(r).keys;
    return c >= k.begin && c < k.end;
  }

  BoolMatrix dense() const;

  bool operator==(const AttentionMask&) const = default;

 private:
  std::vector<Row> rows_;
};

/// Causal rows for ordinary tokens; chunk-local rows for sentinels.
AttentionMask build_mask(const SentinelSequence& seq);

/// Fraction of allowed cells.
double mask_density(const AttentionMask& mask);

/// One line of '0'/'1' per query row.
std::string dump_mask(const BoolMatrix& dense);

/// Returns the name of the first violated mask invariant, or an empty string.
std::string check_mask_rules(const AttentionMask& mask, const SentinelSequence& seq);

}  // namespace sentinel
