#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace sentinel {

using Index = Eigen::Index;
using TokenId = std::int32_t;

/// Label marker excluded from the loss and from perplexity. Shares its value
/// with the dataset wire encoding and never collides with a vocabulary id.
inline constexpr TokenId kIgnoreLabel = -100;

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// Half-open index interval [begin, end).
struct Span {
  Index begin = 0;
  Index end = 0;

  Index size() const { return end - begin; }
  bool operator==(const Span&) const = default;
};

}  // namespace sentinel
