#pragma once

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Core>

#include "sentinel/attention_mask.hpp"
#include "sentinel/pipeline.hpp"
#include "sentinel/types.hpp"

namespace sentinel {

enum class PositionalMode : std::uint8_t { kLearned = 0, kRotary = 1 };

struct ModelConfig {
  Index vocab_size = 0;
  Index context = 256;
  Index layers = 2;
  Index heads = 4;
  Index width = 64;
  Index ff = 256;
  PositionalMode positional = PositionalMode::kLearned;
  std::uint64_t seed = 0;

  Index head_dim() const { return width / heads; }

  void validate() const {
    if (vocab_size <= 0 || context <= 0 || layers <= 0 || heads <= 0 || width <= 0 || ff <= 0)
      throw std::invalid_argument("model dimensions must be positive");
    if (width % heads != 0) throw std::invalid_argument("width must be divisible by heads");
    if (positional == PositionalMode::kRotary && head_dim() % 2 != 0)
      throw std::invalid_argument("rotary mode needs an even head dimension");
  }

  bool operator==(const ModelConfig&) const = default;
};

/// Dense projection y = x W^T with an optional low-rank delta scale * B A.
template <typename Scalar>
struct Linear {
  Mat<Scalar> weight;  // out x in
  Mat<Scalar> lora_a;  // rank x in
  Mat<Scalar> lora_b;  // out x rank
  Scalar lora_scale = 0;

  bool has_lora() const { return lora_a.size() > 0; }
};

template <typename Scalar>
struct LayerWeights {
  Mat<Scalar> ln1_gain, ln1_bias;
  Linear<Scalar> q, k, v, o;
  Mat<Scalar> ln2_gain, ln2_bias;
  Mat<Scalar> ff_in, ff_in_bias;    // F x D, 1 x F
  Mat<Scalar> ff_out, ff_out_bias;  // D x F, 1 x D
};

template <typename Scalar>
struct Weights {
  Mat<Scalar> tok_emb;  // V x D, includes the <sr> row
  Mat<Scalar> pos_emb;  // context x D, learned mode only (else empty)
  std::vector<LayerWeights<Scalar>> layers;
  Mat<Scalar> lnf_gain, lnf_bias;
  Mat<Scalar> head, head_bias;  // V x D, 1 x V
};

/// Calls f(name, tensor...) for every non-empty tensor, walking the given
/// weight sets in lockstep. All sets must share one layout.
template <typename F, typename First, typename... Rest>
void visit_tensors(F&& f, First& first, Rest&... rest) {
  using W = std::remove_cvref_t<First>;
  auto emit = [&](const std::string& name, auto member) {
    if ((first.*member).size() == 0) return;
    f(name, first.*member, rest.*member...);
  };
  emit("tok_emb", &W::tok_emb);
  emit("pos_emb", &W::pos_emb);
  for (std::size_t l = 0; l < first.layers.size(); ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    auto layer = [&](const std::string& name, auto&& get) {
      auto& t = get(first.layers[l]);
      if (t.size() == 0) return;
      f(p + name, t, get(rest.layers[l])...);
    };
    layer("ln1.gain", [](auto& w) -> auto& { return w.ln1_gain; });
    layer("ln1.bias", [](auto& w) -> auto& { return w.ln1_bias; });
    auto linear = [&](const std::string& name, auto&& get) {
      layer(name + ".weight", [&](auto& w) -> auto& { return get(w).weight; });
      layer(name + ".lora_a", [&](auto& w) -> auto& { return get(w).lora_a; });
      layer(name + ".lora_b", [&](auto& w) -> auto& { return get(w).lora_b; });
    };
    linear("attn.q", [](auto& w) -> auto& { return w.q; });
    linear("attn.k", [](auto& w) -> auto& { return w.k; });
    linear("attn.v", [](auto& w) -> auto& { return w.v; });
    linear("attn.o", [](auto& w) -> auto& { return w.o; });
    layer("ln2.gain", [](auto& w) -> auto& { return w.ln2_gain; });
    layer("ln2.bias", [](auto& w) -> auto& { return w.ln2_bias; });
    layer("ff.in.weight", [](auto& w) -> auto& { return w.ff_in; });
    layer("ff.in.bias", [](auto& w) -> auto& { return w.ff_in_bias; });
    layer("ff.out.weight", [](auto& w) -> auto& { return w.ff_out; });
    layer("ff.out.bias", [](auto& w) -> auto& { return w.ff_out_bias; });
  }
  emit("lnf.gain", &W::lnf_gain);
  emit("lnf.bias", &W::lnf_bias);
  emit("head.weight", &W::head);
  emit("head.bias", &W::head_bias);
}

/// Same layout as `w`, all zeros.
template <typename Scalar>
Weights<Scalar> zeros_like(const Weights<Scalar>& w) {
  Weights<Scalar> z = w;
  visit_tensors([](const std::string&, Mat<Scalar>& t) { t.setZero(); }, z);
  return z;
}

/// One trainable (or frozen) tensor with its gradient buffer. When
/// `only_row` is non-negative, only that row is trainable.
template <typename Scalar>
struct ParamRef {
  std::string name;
  Mat<Scalar>* value = nullptr;
  Mat<Scalar>* grad = nullptr;
  bool trainable = false;
  Index only_row = -1;
};

template <typename Scalar>
class Model {
 public:
  ModelConfig config;
  Weights<Scalar> weights;
  TokenId sentinel_id = -1;
  Index lora_rank = 0;
  double lora_alpha = 0;

  /// Normal(0, 0.02) matrices, unit norm gains, zero biases; deterministic in config.seed.
  static Model init(const ModelConfig& config, TokenId sentinel_id) {
    config.validate();
    if (sentinel_id < 0 || sentinel_id >= config.vocab_size)
      throw std::invalid_argument("sentinel id outside the vocabulary");
    Model m;
    m.config = config;
    m.sentinel_id = sentinel_id;
    const Index d = config.width, f = config.ff, v = config.vocab_size;
    auto& w = m.weights;
    w.tok_emb.resize(v, d);
    if (config.positional == PositionalMode::kLearned) w.pos_emb.resize(config.context, d);
    w.layers.resize(static_cast<std::size_t>(config.layers));
    for (auto& l : w.layers) {
      l.ln1_gain = Mat<Scalar>::Ones(1, d);
      l.ln1_bias = Mat<Scalar>::Zero(1, d);
      for (auto* lin : {&l.q, &l.k, &l.v, &l.o}) lin->weight.resize(d, d);
      l.ln2_gain = Mat<Scalar>::Ones(1, d);
      l.ln2_bias = Mat<Scalar>::Zero(1, d);
      l.ff_in.resize(f, d);
      l.ff_in_bias = Mat<Scalar>::Zero(1, f);
      l.ff_out.resize(d, f);
      l.ff_out_bias = Mat<Scalar>::Zero(1, d);
    }
    w.lnf_gain = Mat<Scalar>::Ones(1, d);
    w.lnf_bias = Mat<Scalar>::Zero(1, d);
    w.head.resize(v, d);
    w.head_bias = Mat<Scalar>::Zero(1, v);

    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> normal(0.0, kInitStd);
    visit_tensors(
        [&](const std::string& name, Mat<Scalar>& t) {
          if (name.ends_with("gain") || name.ends_with("bias")) return;
          for (Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<Scalar>(normal(rng));
        },
        w);
    return m;
  }

  static constexpr double kInitStd = 0.02;

  bool lora_attached() const { return lora_rank > 0; }

  /// Adds adapters to q/k/v/o of every layer and freezes all base tensors
  /// except the <sr> embedding row. B starts at zero.
  void attach_lora(Index rank, double alpha, std::uint64_t seed) {
    if (lora_attached()) throw std::logic_error("LoRA already attached");
    if (rank <= 0 || rank > config.width) throw std::invalid_argument("LoRA rank must be in [1, width]");
    lora_rank = rank;
    lora_alpha = alpha;
    std::mt19937_64 rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(config.width));
    std::uniform_real_distribution<double> uniform(-bound, bound);
    for (auto& l : weights.layers) {
      for (auto* lin : {&l.q, &l.k, &l.v, &l.o}) {
        lin->lora_a.resize(rank, config.width);
        for (Index i = 0; i < lin->lora_a.size(); ++i)
          lin->lora_a.data()[i] = static_cast<Scalar>(uniform(rng));
        lin->lora_b = Mat<Scalar>::Zero(config.width, rank);
        lin->lora_scale = static_cast<Scalar>(alpha / static_cast<double>(rank));
      }
    }
  }

  bool is_lora_tensor(const std::string& name) const {
    return name.ends_with(".lora_a") || name.ends_with(".lora_b");
  }

  std::vector<ParamRef<Scalar>> parameters(Weights<Scalar>& grads) {
    std::vector<ParamRef<Scalar>> out;
    visit_tensors(
        [&](const std::string& name, Mat<Scalar>& value, Mat<Scalar>& grad) {
          ParamRef<Scalar> p{name, &value, &grad, true, -1};
          if (lora_attached() && !is_lora_tensor(name)) {
            p.trainable = name == "tok_emb";
            if (p.trainable) p.only_row = sentinel_id;
          }
          out.push_back(std::move(p));
        },
        weights, grads);
    return out;
  }

  Index trainable_parameter_count() {
    Weights<Scalar> scratch = zeros_like(weights);
    Index n = 0;
    for (const auto& p : parameters(scratch)) {
      if (!p.trainable) continue;
      n += p.only_row >= 0 ? p.value->cols() : p.value->size();
    }
    return n;
  }

  template <typename Other>
  Model<Other> cast() const {
    Model<Other> m;
    m.config = config;
    m.sentinel_id = sentinel_id;
    m.lora_rank = lora_rank;
    m.lora_alpha = lora_alpha;
    m.weights.layers.resize(weights.layers.size());
    auto& src = weights;
    auto& dst = m.weights;
    dst.tok_emb = src.tok_emb.template cast<Other>();
    dst.pos_emb = src.pos_emb.template cast<Other>();
    for (std::size_t i = 0; i < src.layers.size(); ++i) {
      const auto& s = src.layers[i];
      auto& d = dst.layers[i];
      d.ln1_gain = s.ln1_gain.template cast<Other>();
      d.ln1_bias = s.ln1_bias.template cast<Other>();
      auto lin = [](const Linear<Scalar>& a, Linear<Other>& b) {
        b.weight = a.weight.template cast<Other>();
        b.lora_a = a.lora_a.template cast<Other>();
        b.lora_b = a.lora_b.template cast<Other>();
        b.lora_scale = static_cast<Other>(a.lora_scale);
      };
      lin(s.q, d.q);
      lin(s.k, d.k);
      lin(s.v, d.v);
      lin(s.o, d.o);
      d.ln2_gain = s.ln2_gain.template cast<Other>();
      d.ln2_bias = s.ln2_bias.template cast<Other>();
      d.ff_in = s.ff_in.template cast<Other>();
      d.ff_in_bias = s.ff_in_bias.template cast<Other>();
      d.ff_out = s.ff_out.template cast<Other>();
      d.ff_out_bias = s.ff_out_bias.template cast<Other>();
    }
    dst.lnf_gain = src.lnf_gain.template cast<Other>();
    dst.lnf_bias = src.lnf_bias.template cast<Other>();
    dst.head = src.head.template cast<Other>();
    dst.head_bias = src.head_bias.template cast<Other>();
    return m;
  }
};

namespace detail {

template <typename Scalar>
using ColVec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kRotaryBase = 10000.0;

template <typename Scalar>
struct NormCache {
  Mat<Scalar> xhat;
  ColVec<Scalar> rstd;
};

template <typename Scalar>
Mat<Scalar> layer_norm(const Mat<Scalar>& x, const Mat<Scalar>& gain, const Mat<Scalar>& bias,
                       NormCache<Scalar>& cache) {
  const Index d = x.cols();
  ColVec<Scalar> mean = x.rowwise().mean();
  Mat<Scalar> centered = x.colwise() - mean;
  ColVec<Scalar> var = centered.array().square().rowwise().sum() / static_cast<Scalar>(d);
  cache.rstd = (var.array() + static_cast<Scalar>(kLayerNormEps)).rsqrt();
  cache.xhat = centered.array().colwise() * cache.rstd.array();
  Mat<Scalar> y = cache.xhat.array().rowwise() * gain.row(0).array();
  y.rowwise() += bias.row(0);
  return y;
}

template <typename Scalar>
Mat<Scalar> layer_norm_backward(const Mat<Scalar>& dy, const Mat<Scalar>& gain,
                                const NormCache<Scalar>& cache, Mat<Scalar>* dgain,
                                Mat<Scalar>* dbias) {
  if (dgain) *dgain += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  if (dbias) *dbias += dy.colwise().sum();
  Mat<Scalar> dxhat = dy.array().rowwise() * gain.row(0).array();
  ColVec<Scalar> mean_dxhat = dxhat.rowwise().mean();
  ColVec<Scalar> mean_dxhat_xhat = (dxhat.array() * cache.xhat.array()).rowwise().mean();
  Mat<Scalar> dx = dxhat.colwise() - mean_dxhat;
  dx -= (cache.xhat.array().colwise() * mean_dxhat_xhat.array()).matrix();
  return dx.array().colwise() * cache.rstd.array();
}

template <typename Scalar>
Mat<Scalar> linear_forward(const Linear<Scalar>& lin, const Mat<Scalar>& x, Mat<Scalar>& lora_mid) {
  Mat<Scalar> y = x * lin.weight.transpose();
  if (lin.has_lora()) {
    lora_mid = x * lin.lora_a.transpose();
    y.noalias() += lin.lora_scale * (lora_mid * lin.lora_b.transpose());
  }
  return y;
}

template <typename Scalar>
Mat<Scalar> linear_backward(const Linear<Scalar>& lin, const Mat<Scalar>& x,
                            const Mat<Scalar>& lora_mid, const Mat<Scalar>& dy,
                            Linear<Scalar>& grad, bool base_trainable) {
  Mat<Scalar> dx = dy * lin.weight;
  if (base_trainable) grad.weight.noalias() += dy.transpose() * x;
  if (lin.has_lora()) {
    grad.lora_b.noalias() += lin.lora_scale * (dy.transpose() * lora_mid);
    Mat<Scalar> dy_b = dy * lin.lora_b;
    grad.lora_a.noalias() += lin.lora_scale * (dy_b.transpose() * x);
    dx.noalias() += lin.lora_scale * (dy_b * lin.lora_a);
  }
  return dx;
}

template <typename Scalar>
Scalar gelu(Scalar x) {
  const Scalar c = static_cast<Scalar>(0.7978845608028654);  // sqrt(2/pi)
  const Scalar u = c * (x + static_cast<Scalar>(0.044715) * x * x * x);
  return static_cast<Scalar>(0.5) * x * (static_cast<Scalar>(1) + std::tanh(u));
}

template <typename Scalar>
Scalar gelu_derivative(Scalar x) {
  const Scalar c = static_cast<Scalar>(0.7978845608028654);
  const Scalar a = static_cast<Scalar>(0.044715);
  const Scalar t = std::tanh(c * (x + a * x * x * x));
  return static_cast<Scalar>(0.5) * (static_cast<Scalar>(1) + t) +
         static_cast<Scalar>(0.5) * x * (static_cast<Scalar>(1) - t * t) * c *
             (static_cast<Scalar>(1) + static_cast<Scalar>(3) * a * x * x);
}

/// Rotates each (2i, 2i+1) pair of every head by position * base^(-2i/head_dim).
/// `direction` -1 applies the inverse rotation (used for gradients).
template <typename Scalar>
void apply_rotary(Mat<Scalar>& x, const std::vector<Index>& positions, Index heads, int direction) {
  const Index head_dim = x.cols() / heads;
  for (Index r = 0; r < x.rows(); ++r) {
    const double pos = static_cast<double>(positions[static_cast<std::size_t>(r)]);
    for (Index i = 0; i < head_dim / 2; ++i) {
      const double freq = std::pow(kRotaryBase, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
      const double angle = pos * freq;
      const auto c = static_cast<Scalar>(std::cos(angle));
      const auto s = static_cast<Scalar>(direction * std::sin(angle));
      for (Index h = 0; h < heads; ++h) {
        const Index j = h * head_dim + 2 * i;
        const Scalar a = x(r, j), b = x(r, j + 1);
        x(r, j) = a * c - b * s;
        x(r, j + 1) = a * s + b * c;
      }
    }
  }
}

}  // namespace detail

template <typename Scalar>
struct LayerCache {
  Mat<Scalar> x_in;
  detail::NormCache<Scalar> ln1;
  Mat<Scalar> h1;
  Mat<Scalar> q_mid, k_mid, v_mid, o_mid;
  Mat<Scalar> q, k, v;  // q and k after rotation
  std::vector<Mat<Scalar>> probs;  // per head, M x M, exactly zero where disallowed
  Mat<Scalar> ctx;
  Mat<Scalar> x_mid;
  detail::NormCache<Scalar> ln2;
  Mat<Scalar> h2;
  Mat<Scalar> ff_pre, ff_act;
};

template <typename Scalar>
struct ForwardCache {
  std::vector<TokenId> tokens;
  std::vector<Index> positions;
  const AttentionMask* mask = nullptr;
  std::vector<LayerCache<Scalar>> layers;
  detail::NormCache<Scalar> lnf;
  Mat<Scalar> hf;
};

/// Logits (M x V). Fills `cache` with every activation backward needs and the
/// per-layer, per-head attention probabilities.
template <typename Scalar>
Mat<Scalar> forward(const Model<Scalar>& model, const std::vector<TokenId>& tokens,
                    const std::vector<Index>& positions, const AttentionMask& mask,
                    ForwardCache<Scalar>& cache) {
  const auto& cfg = model.config;
  const auto& w = model.weights;
  const Index m = static_cast<Index>(tokens.size());
  if (static_cast<Index>(positions.size()) != m || mask.size() != m)
    throw std::invalid_argument("tokens, position ids and mask disagree in length");
  for (Index i = 0; i < m; ++i) {
    const auto t = tokens[static_cast<std::size_t>(i)];
    const auto p = positions[static_cast<std::size_t>(i)];
    if (t < 0 || t >= cfg.vocab_size) throw std::out_of_range("token id outside the vocabulary");
    if (p < 0 || p >= cfg.context) throw std::out_of_range("position id exceeds the context length");
  }

  cache.tokens = tokens;
  cache.positions = positions;
  cache.mask = &mask;
  cache.layers.resize(w.layers.size());

  const Index d = cfg.width, heads = cfg.heads, dh = cfg.head_dim();
  const Scalar scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(dh)));

  Mat<Scalar> x(m, d);
  for (Index i = 0; i < m; ++i) {
    x.row(i) = w.tok_emb.row(tokens[static_cast<std::size_t>(i)]);
    if (cfg.positional == PositionalMode::kLearned)
      x.row(i) += w.pos_emb.row(positions[static_cast<std::size_t>(i)]);
  }

  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const auto& lw = w.layers[l];
    auto& c = cache.layers[l];
    c.x_in = x;
    c.h1 = detail::layer_norm(x, lw.ln1_gain, lw.ln1_bias, c.ln1);
    c.q = detail::linear_forward(lw.q, c.h1, c.q_mid);
    c.k = detail::linear_forward(lw.k, c.h1, c.k_mid);
    c.v = detail::linear_forward(lw.v, c.h1, c.v_mid);
    if (cfg.positional == PositionalMode::kRotary) {
      detail::apply_rotary(c.q, positions, heads, +1);
      detail::apply_rotary(c.k, positions, heads, +1);
    }
    c.probs.assign(static_cast<std::size_t>(heads), Mat<Scalar>());
    c.ctx.resize(m, d);
    for (Index h = 0; h < heads; ++h) {
      Mat<Scalar> scores = (c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose()) * scale;
      Mat<Scalar>& p = c.probs[static_cast<std::size_t>(h)];
      p = Mat<Scalar>::Zero(m, m);
      for (Index r = 0; r < m; ++r) {
        const Span keys = mask.row(r).keys;
        auto seg = scores.row(r).segment(keys.begin, keys.size());
        const Scalar top = seg.maxCoeff();
        auto out = p.row(r).segment(keys.begin, keys.size());
        out = (seg.array() - top).exp().matrix();
        out /= out.sum();
      }
      c.ctx.middleCols(h * dh, dh).noalias() = p * c.v.middleCols(h * dh, dh);
    }
    x += detail::linear_forward(lw.o, c.ctx, c.o_mid);
    c.x_mid = x;
    c.h2 = detail::layer_norm(x, lw.ln2_gain, lw.ln2_bias, c.ln2);
    c.ff_pre = c.h2 * lw.ff_in.transpose();
    c.ff_pre.rowwise() += lw.ff_in_bias.row(0);
    c.ff_act = c.ff_pre.unaryExpr([](Scalar v) { return detail::gelu(v); });
    Mat<Scalar> ff = c.ff_act * lw.ff_out.transpose();
    ff.rowwise() += lw.ff_out_bias.row(0);
    x += ff;
  }

  cache.hf = detail::layer_norm(x, w.lnf_gain, w.lnf_bias, cache.lnf);
  Mat<Scalar> logits = cache.hf * w.head.transpose();
  logits.rowwise() += w.head_bias.row(0);
  return logits;
}

template <typename Scalar>
struct ForwardResult {
  Mat<Scalar> logits;
  /// [layer][head] -> M x M attention weights; empty unless captured.
  std::vector<std::vector<Mat<Scalar>>> attention;
};

template <typename Scalar>
ForwardResult<Scalar> forward(const Model<Scalar>& model, const SentinelSequence& seq,
                              const AttentionMask& mask, bool capture_attention) {
  ForwardCache<Scalar> cache;
  ForwardResult<Scalar> out;
  out.logits = forward(model, seq.tokens, seq.position_ids, mask, cache);
  if (capture_attention)
    for (auto& layer : cache.layers) out.attention.push_back(std::move(layer.probs));
  return out;
}

/// Accumulates parameter gradients for dL/dlogits into `grads`. Frozen
/// tensors are skipped, so their buffers stay as they were.
template <typename Scalar>
void backward(const Model<Scalar>& model, const ForwardCache<Scalar>& cache,
              const Mat<Scalar>& dlogits, Weights<Scalar>& grads) {
  const auto& cfg = model.config;
  const auto& w = model.weights;
  const bool base = !model.lora_attached();
  const Index m = static_cast<Index>(cache.tokens.size());
  const Index heads = cfg.heads, dh = cfg.head_dim();
  const Scalar scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(dh)));
  if (dlogits.rows() != m || dlogits.cols() != cfg.vocab_size)
    throw std::invalid_argument("dlogits shape does not match the forward pass");

  if (base) {
    grads.head.noalias() += dlogits.transpose() * cache.hf;
    grads.head_bias += dlogits.colwise().sum();
  }
  Mat<Scalar> dx = detail::layer_norm_backward<Scalar>(dlogits * w.head, w.lnf_gain, cache.lnf,
                                                       base ? &grads.lnf_gain : nullptr,
                                                       base ? &grads.lnf_bias : nullptr);

  for (std::size_t l = w.layers.size(); l-- > 0;) {
    const auto& lw = w.layers[l];
    const auto& c = cache.layers[l];
    auto& g = grads.layers[l];

    // Feed-forward block.
    if (base) {
      g.ff_out.noalias() += dx.transpose() * c.ff_act;
      g.ff_out_bias += dx.colwise().sum();
    }
    Mat<Scalar> dpre = (dx * lw.ff_out).cwiseProduct(
        c.ff_pre.unaryExpr([](Scalar v) { return detail::gelu_derivative(v); }));
    if (base) {
      g.ff_in.noalias() += dpre.transpose() * c.h2;
      g.ff_in_bias += dpre.colwise().sum();
    }
    dx += detail::layer_norm_backward<Scalar>(dpre * lw.ff_in, lw.ln2_gain, c.ln2,
                                              base ? &g.ln2_gain : nullptr,
                                              base ? &g.ln2_bias : nullptr);

    // Attention block.
    Mat<Scalar> dctx = detail::linear_backward(lw.o, c.ctx, c.o_mid, dx, g.o, base);
    Mat<Scalar> dq(m, cfg.width), dk(m, cfg.width), dv(m, cfg.width);
    for (Index h = 0; h < heads; ++h) {
      const auto& p = c.probs[static_cast<std::size_t>(h)];
      auto dctx_h = dctx.middleCols(h * dh, dh);
      Mat<Scalar> dp = dctx_h * c.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh).noalias() = p.transpose() * dctx_h;
      detail::ColVec<Scalar> row_dot = p.cwiseProduct(dp).rowwise().sum();
      Mat<Scalar> ds = p.cwiseProduct(dp.colwise() - row_dot) * scale;
      dq.middleCols(h * dh, dh).noalias() = ds * c.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh).noalias() = ds.transpose() * c.q.middleCols(h * dh, dh);
    }
    if (cfg.positional == PositionalMode::kRotary) {
      detail::apply_rotary(dq, cache.positions, heads, -1);
      detail::apply_rotary(dk, cache.positions, heads, -1);
    }
    Mat<Scalar> dh1 = detail::linear_backward(lw.q, c.h1, c.q_mid, dq, g.q, base);
    dh1 += detail::linear_backward(lw.k, c.h1, c.k_mid, dk, g.k, base);
    dh1 += detail::linear_backward(lw.v, c.h1, c.v_mid, dv, g.v, base);
    dx += detail::layer_norm_backward<Scalar>(dh1, lw.ln1_gain, c.ln1, base ? &g.ln1_gain : nullptr,
                                              base ? &g.ln1_bias : nullptr);
  }

  for (Index i = 0; i < m; ++i) {
    const auto t = cache.tokens[static_cast<std::size_t>(i)];
    if (base || t == model.sentinel_id) grads.tok_emb.row(t) += dx.row(i);
    if (base && cfg.positional == PositionalMode::kLearned)
      grads.pos_emb.row(cache.positions[static_cast<std::size_t>(i)]) += dx.row(i);
  }
}

/// Argmax continuation of `prompt`. Generated tokens are ordinary, take the
/// next ordinary position ids, and the <sr> logit is never selected.
template <typename Scalar>
std::vector<TokenId> greedy_decode(const Model<Scalar>& model, const SentinelSequence& prompt,
                                   Index max_new) {
  std::vector<TokenId> generated;
  if (max_new <= 0) return generated;
  SentinelSequence seq = prompt;
  Index next_pos = 0;
  for (std::size_t i = 0; i < seq.tokens.size(); ++i)
    if (!seq.is_sentinel[i]) next_pos = seq.position_ids[i] + 1;
  const Index open_chunk = seq.chunk_ids.empty() ? 0 : seq.chunk_ids.back() + 1;

  for (Index step = 0; step < max_new; ++step) {
    if (next_pos >= model.config.context) throw std::out_of_range("decoding overflows the context");
    const auto mask = build_mask(seq);
    ForwardCache<Scalar> cache;
    Mat<Scalar> logits = forward(model, seq.tokens, seq.position_ids, mask, cache);
    RowVec<Scalar> last = logits.row(logits.rows() - 1);
    last(model.sentinel_id) = -std::numeric_limits<Scalar>::infinity();
    Index best = 0;
    last.maxCoeff(&best);
    const auto token = static_cast<TokenId>(best);
    generated.push_back(token);
    seq.tokens.push_back(token);
    seq.is_sentinel.push_back(0);
    seq.position_ids.push_back(next_pos++);
    seq.labels.push_back(kIgnoreLabel);
    seq.chunk_ids.push_back(open_chunk);
  }
  return generated;
}

}  // namespace sentinel
