#include "sentinel/attention_mask.hpp"

#include <stdexcept>

namespace sentinel {

AttentionMask::AttentionMask(std::vector<Row> rows) : rows_(std::move(rows)) {
  for (Index r = 0; r < size(); ++r) {
    const auto& k = row(r).keys;
    if (k.end != r + 1 || k.begin < 0 || k.begin > r)
      throw std::invalid_argument("mask row must be a non-empty run ending at the diagonal");
  }
}

AttentionMask AttentionMask::causal(Index size) {
  std::vector<Row> rows(static_cast<std::size_t>(size));
  for (Index r = 0; r < size; ++r) rows[static_cast<std::size_t>(r)] = {RowKind::kOrdinary, {0, r + 1}};
  return AttentionMask(std::move(rows));
}

BoolMatrix AttentionMask::dense() const {
  BoolMatrix out = BoolMatrix::Constant(size(), size(), false);
  for (Index r = 0; r < size(); ++r) {
    const auto& k = row(r).keys;
    out.row(r).segment(k.begin, k.size()).setConstant(true);
  }
  return out;
}

AttentionMask build_mask(const SentinelSequence& seq) {
  const Index m = seq.size();
  std::vector<AttentionMask::Row> rows(static_cast<std::size_t>(m));
  Index chunk_start = 0;
  for (Index r = 0; r < m; ++r) {
    const auto i = static_cast<std::size_t>(r);
    if (r > 0 && seq.chunk_ids[i] != seq.chunk_ids[i - 1]) chunk_start = r;
    if (seq.is_sentinel[i]) {
      // The sentinel closes its chunk, so chunk tokens and self are contiguous.
      rows[i] = {AttentionMask::RowKind::kSentinel, {chunk_start, r + 1}};
    } else {
      rows[i] = {AttentionMask::RowKind::kOrdinary, {0, r + 1}};
    }
  }
  return AttentionMask(std::move(rows));
}

double mask_density(const AttentionMask& mask) {
  if (mask.size() == 0) return 0.0;
  double allowed = 0;
  for (const auto& row : mask.rows()) allowed += static_cast<double>(row.keys.size());
  const auto m = static_cast<double>(mask.size());
  return allowed / (m * m);
}

std::string dump_mask(const BoolMatrix& dense) {
  std::string out;
  out.reserve(static_cast<std::size_t>(dense.rows() * (dense.cols() + 1)));
  for (Index r = 0; r < dense.rows(); ++r) {
    for (Index c = 0; c < dense.cols(); ++c) out += dense(r, c) ? '1' : '0';
    out += '\n';
  }
  return out;
}

std::string check_mask_rules(const AttentionMask& mask, const SentinelSequence& seq) {
  if (mask.size() != seq.size()) return "mask-size";
  for (Index r = 0; r < mask.size(); ++r) {
    const auto i = static_cast<std::size_t>(r);
    if (!mask.allowed(r, r)) return "mask-self";
    for (Index c = 0; c < mask.size(); ++c) {
      const auto j = static_cast<std::size_t>(c);
      const bool a = mask.allowed(r, c);
      if (a && c > r) return "mask-causal";
      if (!seq.is_sentinel[i]) {
        if (c <= r && !a) return "mask-ordinary-prefix";
      } else if (c != r) {
        const bool local = !seq.is_sentinel[j] && seq.chunk_ids[j] == seq.chunk_ids[i];
        if (a != local) return "mask-sentinel-locality";
      }
    }
  }
  return {};
}

}  // namespace sentinel
