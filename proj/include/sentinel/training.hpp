#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sentinel/attention_mask.hpp"
#include "sentinel/model.hpp"
#include "sentinel/pipeline.hpp"

namespace sentinel {

struct CrossEntropy {
  double loss_sum = 0;
  Index count = 0;
};

/// Sum of -log softmax(logits[i])[labels[i]] over positions whose label is not
/// kIgnoreLabel. If `dlogits` is given it receives scale * dloss/dlogits.
template <typename Scalar>
CrossEntropy cross_entropy_ignoring(const Mat<Scalar>& logits, const std::vector<TokenId>& labels,
                                    Mat<Scalar>* dlogits = nullptr, double scale = 1.0) {
  if (static_cast<Index>(labels.size()) != logits.rows())
    throw std::invalid_argument("labels and logits disagree in length");
  CrossEntropy out;
  if (dlogits) dlogits->setZero(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const TokenId y = labels[static_cast<std::size_t>(i)];
    if (y == kIgnoreLabel) continue;
    if (y < 0 || y >= logits.cols()) throw std::out_of_range("label outside the vocabulary");
    const auto row = logits.row(i).template cast<double>();
    const double top = row.maxCoeff();
    const double lse = top + std::log((row.array() - top).exp().sum());
    out.loss_sum += lse - row(y);
    ++out.count;
    if (dlogits) {
      auto d = dlogits->row(i);
      d = ((row.array() - lse).exp() * scale).matrix().template cast<Scalar>();
      d(y) -= static_cast<Scalar>(scale);
    }
  }
  return out;
}

struct AdamWConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Decoupled weight decay Adam. Moments are laid out in parameter order and
/// sized on the first step.
template <typename Scalar>
class AdamW {
 public:
  explicit AdamW(AdamWConfig config) : config_(config) {}

  void step(const std::vector<ParamRef<Scalar>>& params) {
    if (first_.empty()) {
      for (const auto& p : params) {
        first_.push_back(Mat<Scalar>::Zero(p.value->rows(), p.value->cols()));
        second_.push_back(Mat<Scalar>::Zero(p.value->rows(), p.value->cols()));
      }
    }
    if (first_.size() != params.size()) throw std::invalid_argument("parameter list changed between steps");
    ++step_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& p = params[i];
      if (!p.trainable) continue;
      if (p.grad->rows() != p.value->rows() || p.grad->cols() != p.value->cols() ||
          first_[i].rows() != p.value->rows() || first_[i].cols() != p.value->cols())
        throw std::invalid_argument("gradient shape mismatch for " + p.name);
      const Index r0 = p.only_row >= 0 ? p.only_row : 0;
      const Index r1 = p.only_row >= 0 ? p.only_row + 1 : p.value->rows();
      for (Index c = 0; c < p.value->cols(); ++c) {
        for (Index r = r0; r < r1; ++r) {
          const double g = static_cast<double>((*p.grad)(r, c));
          double m = config_.beta1 * static_cast<double>(first_[i](r, c)) + (1.0 - config_.beta1) * g;
          double v = config_.beta2 * static_cast<double>(second_[i](r, c)) + (1.0 - config_.beta2) * g * g;
          first_[i](r, c) = static_cast<Scalar>(m);
          second_[i](r, c) = static_cast<Scalar>(v);
          const double mhat = m / bc1;
          const double vhat = v / bc2;
          const double w = static_cast<double>((*p.value)(r, c));
          (*p.value)(r, c) = static_cast<Scalar>(
              w - config_.lr * (mhat / (std::sqrt(vhat) + config_.eps) + config_.weight_decay * w));
        }
      }
    }
  }

  long steps() const { return step_; }
  const AdamWConfig& config() const { return config_; }

 private:
  AdamWConfig config_;
  std::vector<Mat<Scalar>> first_, second_;
  long step_ = 0;
};

/// Throws if any position with a counted label holds a sentinel token.
inline void check_no_sentinel_loss(const std::vector<SentinelSequence>& data) {
  for (std::size_t s = 0; s < data.size(); ++s)
    for (std::size_t i = 0; i < data[s].tokens.size(); ++i)
      if (data[s].is_sentinel[i] && data[s].labels[i] != kIgnoreLabel)
        throw std::invalid_argument("sequence " + std::to_string(s) +
                                    " scores a sentinel position at " + std::to_string(i));
}

/// Forward + backward for one sequence; gradients scaled by `scale` are added to `grads`.
template <typename Scalar>
CrossEntropy accumulate_gradients(const Model<Scalar>& model, const SentinelSequence& seq,
                                  const AttentionMask& mask, Weights<Scalar>& grads, double scale) {
  ForwardCache<Scalar> cache;
  Mat<Scalar> logits = forward(model, seq.tokens, seq.position_ids, mask, cache);
  Mat<Scalar> dlogits;
  const auto ce = cross_entropy_ignoring(logits, seq.labels, &dlogits, scale);
  if (!std::isfinite(ce.loss_sum)) {
    std::ostringstream msg;
    msg << "non-finite loss (" << ce.loss_sum << ") on a sequence of " << seq.size()
        << " tokens; max |logit| = " << logits.cwiseAbs().maxCoeff();
    throw std::runtime_error(msg.str());
  }
  if (ce.count > 0) backward(model, cache, dlogits, grads);
  return ce;
}

/// Mean cross-entropy of one sequence (no gradients).
template <typename Scalar>
double sequence_loss(const Model<Scalar>& model, const SentinelSequence& seq, const AttentionMask& mask) {
  ForwardCache<Scalar> cache;
  const auto ce = cross_entropy_ignoring(forward(model, seq.tokens, seq.position_ids, mask, cache), seq.labels);
  return ce.count ? ce.loss_sum / static_cast<double>(ce.count) : 0.0;
}

struct TrainConfig {
  int epochs = 5;
  int batch_size = 12;
  AdamWConfig optimizer;
  std::uint64_t seed = 0;
  double max_grad_norm = 0;  // 0 disables clipping
};

struct TrainReport {
  std::vector<double> epoch_loss;  // mean per counted token
  std::vector<Index> epoch_tokens;
  long steps = 0;
  double wall_seconds = 0;
  std::uint64_t seed = 0;
};

/// Order in which one epoch visits the dataset.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch)};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

using EpochCallback = std::function<void(int epoch, double mean_loss, Index tokens)>;

/// Shuffled mini-batch training; each batch's loss is the mean over its counted tokens.
template <typename Scalar>
TrainReport train(Model<Scalar>& model, const std::vector<SentinelSequence>& data,
                  const TrainConfig& config, const EpochCallback& on_epoch = {}) {
  if (data.empty()) throw std::invalid_argument("empty training dataset");
  if (config.batch_size < 1 || config.epochs < 0) throw std::invalid_argument("bad batch size or epoch count");
  check_no_sentinel_loss(data);

  const auto start = std::chrono::steady_clock::now();
  std::vector<AttentionMask> masks;
  masks.reserve(data.size());
  for (const auto& s : data) masks.push_back(build_mask(s));

  auto grads = zeros_like(model.weights);
  auto params = model.parameters(grads);
  AdamW<Scalar> opt(config.optimizer);
  TrainReport report;
  report.seed = config.seed;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = epoch_order(data.size(), config.seed, epoch);
    double epoch_loss = 0;
    Index epoch_tokens = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(config.batch_size));
      Index batch_tokens = 0;
      for (std::size_t i = b; i < e; ++i)
        for (TokenId y : data[order[i]].labels) batch_tokens += y != kIgnoreLabel;
      if (batch_tokens == 0) continue;

      for (auto& p : params) p.grad->setZero();
      const double scale = 1.0 / static_cast<double>(batch_tokens);
      for (std::size_t i = b; i < e; ++i) {
        const auto ce = accumulate_gradients(model, data[order[i]], masks[order[i]], grads, scale);
        epoch_loss += ce.loss_sum;
        epoch_tokens += ce.count;
      }
      if (config.max_grad_norm > 0) {
        double sq = 0;
        for (const auto& p : params)
          if (p.trainable) sq += p.grad->template cast<double>().squaredNorm();
        const double norm = std::sqrt(sq);
        if (norm > config.max_grad_norm) {
          const auto f = static_cast<Scalar>(config.max_grad_norm / norm);
          for (auto& p : params) *p.grad *= f;
        }
      }
      opt.step(params);
    }
    const double mean = epoch_tokens ? epoch_loss / static_cast<double>(epoch_tokens) : 0.0;
    report.epoch_loss.push_back(mean);
    report.epoch_tokens.push_back(epoch_tokens);
    if (on_epoch) on_epoch(epoch, mean, epoch_tokens);
  }
  report.steps = opt.steps();
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

struct GradcheckResult {
  double max_rel_error = 0;
  Index checked = 0;
  std::string worst;  // "tensor[row,col]" with the largest error
};

inline constexpr double kGradcheckStep = 1e-5;
/// Relative error denominator floor; absolute errors below ~1e-10 are noise.
inline constexpr double kGradcheckFloor = 1e-6;

/// Compares analytic gradients of the mean cross-entropy on `seq` with
/// central finite differences at `samples` randomly chosen trainable entries.
inline GradcheckResult gradcheck(Model<double>& model, const SentinelSequence& seq, Index samples,
                                 std::uint64_t seed) {
  const auto mask = build_mask(seq);
  auto grads = zeros_like(model.weights);
  Index count = 0;
  for (TokenId y : seq.labels) count += y != kIgnoreLabel;
  if (count == 0) throw std::invalid_argument("gradcheck needs at least one counted label");
  accumulate_gradients(model, seq, mask, grads, 1.0 / static_cast<double>(count));

  std::vector<ParamRef<double>> params;
  for (auto& p : model.parameters(grads))
    if (p.trainable) params.push_back(p);

  std::mt19937_64 rng(seed);
  GradcheckResult out;
  for (Index s = 0; s < samples; ++s) {
    auto& p = params[std::uniform_int_distribution<std::size_t>(0, params.size() - 1)(rng)];
    const Index row = p.only_row >= 0 ? p.only_row
                                      : std::uniform_int_distribution<Index>(0, p.value->rows() - 1)(rng);
    const Index col = std::uniform_int_distribution<Index>(0, p.value->cols() - 1)(rng);
    double& w = (*p.value)(row, col);
    const double saved = w;
    w = saved + kGradcheckStep;
    const double up = sequence_loss(model, seq, mask);
    w = saved - kGradcheckStep;
    const double down = sequence_loss(model, seq, mask);
    w = saved;
    const double numeric = (up - down) / (2 * kGradcheckStep);
    const double analytic = (*p.grad)(row, col);
    const double denom = std::max({std::abs(numeric), std::abs(analytic), kGradcheckFloor});
    const double rel = std::abs(numeric - analytic) / denom;
    if (rel >= out.max_rel_error) {
      out.max_rel_error = rel;
      out.worst = p.name + "[" + std::to_string(row) + "," + std::to_string(col) + "]";
    }
    ++out.checked;
  }
  return out;
}

}  // namespace sentinel
