#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "sentinel/checkpoint.hpp"
#include "sentinel/evaluation.hpp"
#include "sentinel/synthetic.hpp"
#include "sentinel/training.hpp"
#include "test_support.hpp"

using namespace sentinel;

namespace {

const Vocab kVocab = test::letter_vocab();

SentinelSequence sample_sequence(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return make_sentinel_sequence(test::random_token_sequence(rng, kVocab, 4, 4), kVocab);
}

double naive_nll(const Mat<double>& logits, Index row, TokenId y) {
  double z = 0;
  for (Index c = 0; c < logits.cols(); ++c) z += std::exp(logits(row, c));
  return std::log(z) - logits(row, y);
}

// Small deterministic text model setup shared by the training runs below.
struct SmallRun {
  Vocab vocab;
  std::vector<SentinelSequence> data;
  Model<float> model;
};

SmallRun small_run(PipelineMode mode) {
  const auto docs = synthetic_text_corpus(3, 3000);
  SmallRun r{build_vocab(docs, 1), {}, {}};
  r.data = prepare_documents(docs, r.vocab, 1, 64, mode);
  ModelConfig c;
  c.vocab_size = r.vocab.size();
  c.context = 64;
  c.layers = 1;
  c.heads = 2;
  c.width = 16;
  c.ff = 32;
  c.seed = 12;
  r.model = Model<float>::init(c, r.vocab.sr_id());
  return r;
}

}  // namespace

TEST_CASE("cross entropy ignores the ignore label") {
  Mat<double> logits = Mat<double>::Random(4, 6);
  Mat<double> d;
  const auto none = cross_entropy_ignoring(logits, {kIgnoreLabel, kIgnoreLabel, kIgnoreLabel, kIgnoreLabel}, &d);
  CHECK(none.count == 0);
  CHECK(none.loss_sum == 0.0);
  CHECK(d.isZero());

  const auto uniform = cross_entropy_ignoring<double>(Mat<double>::Zero(3, 7), {1, 2, kIgnoreLabel});
  CHECK(uniform.count == 2);
  CHECK(uniform.loss_sum == doctest::Approx(2 * std::log(7.0)).epsilon(1e-12));

  CHECK_THROWS_AS(cross_entropy_ignoring(logits, {0, 1}), std::invalid_argument);
  CHECK_THROWS_AS(cross_entropy_ignoring(logits, {0, 1, 2, 6}), std::out_of_range);
}

TEST_CASE("cross entropy matches a plain log-sum-exp") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0, 3);
  for (int trial = 0; trial < 50; ++trial) {
    Mat<double> logits(5, 9);
    for (Index i = 0; i < logits.size(); ++i) logits.data()[i] = n(rng);
    std::vector<TokenId> labels = {0, 8, kIgnoreLabel, static_cast<TokenId>(trial % 9), 3};
    double want = 0;
    for (Index r = 0; r < 5; ++r)
      if (labels[static_cast<std::size_t>(r)] != kIgnoreLabel) want += naive_nll(logits, r, labels[static_cast<std::size_t>(r)]);
    Mat<double> d;
    const auto got = cross_entropy_ignoring(logits, labels, &d, 0.25);
    CHECK(got.loss_sum == doctest::Approx(want).epsilon(1e-6));
    // Gradient rows are scale * (softmax - onehot) and sum to zero.
    for (Index r = 0; r < 5; ++r) CHECK(d.row(r).sum() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(d.row(2).isZero());
  }
}

TEST_CASE("AdamW") {
  Mat<double> w(1, 1), g(1, 1);
  auto params = [&](bool trainable = true, Index only_row = -1) {
    return std::vector<ParamRef<double>>{{"w", &w, &g, trainable, only_row}};
  };

  SUBCASE("zero gradient and no decay leaves the value unchanged") {
    w(0, 0) = 1.5;
    g(0, 0) = 0;
    AdamW<double> opt({0.1, 0.9, 0.999, 1e-8, 0.0});
    opt.step(params());
    CHECK(w(0, 0) == 1.5);
  }
  SUBCASE("first step value") {
    w(0, 0) = 1.0;
    g(0, 0) = 1.0;
    AdamW<double> opt({0.1, 0.9, 0.999, 1e-8, 0.0});
    opt.step(params());
    // m_hat = 1, v_hat = 1 after bias correction.
    CHECK(w(0, 0) == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-15));
  }
  SUBCASE("decoupled decay") {
    w(0, 0) = 2.0;
    g(0, 0) = 0;
    AdamW<double> opt({0.1, 0.9, 0.999, 1e-8, 0.01});
    opt.step(params());
    CHECK(w(0, 0) == doctest::Approx(2.0 - 0.1 * 0.01 * 2.0).epsilon(1e-15));
  }
  SUBCASE("frozen and row-restricted tensors") {
    w(0, 0) = 1.0;
    g(0, 0) = 1.0;
    AdamW<double> opt({0.1, 0.9, 0.999, 1e-8, 0.01});
    opt.step(params(false));
    CHECK(w(0, 0) == 1.0);

    Mat<double> m = Mat<double>::Ones(3, 2), mg = Mat<double>::Ones(3, 2);
    AdamW<double> row_opt({0.1, 0.9, 0.999, 1e-8, 0.0});
    row_opt.step({{"m", &m, &mg, true, 1}});
    CHECK(m.row(0) == Mat<double>::Ones(1, 2));
    CHECK(m.row(2) == Mat<double>::Ones(1, 2));
    CHECK(m(1, 0) < 1.0);
  }
  SUBCASE("second step matches the textbook recurrence") {
    w(0, 0) = 0.5;
    AdamW<double> opt({0.01, 0.9, 0.999, 1e-8, 0.0});
    double m = 0, v = 0, ref = 0.5;
    for (int t = 1; t <= 2; ++t) {
      const double grad = t == 1 ? 0.3 : -0.7;
      g(0, 0) = grad;
      opt.step(params());
      m = 0.9 * m + 0.1 * grad;
      v = 0.999 * v + 0.001 * grad * grad;
      ref -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    }
    CHECK(w(0, 0) == doctest::Approx(ref).epsilon(1e-14));
  }
}

TEST_CASE("gradients match finite differences") {
  struct Case {
    const char* name;
    PositionalMode mode;
    bool lora;
  };
  for (const auto& c : {Case{"learned", PositionalMode::kLearned, false},
                        Case{"rotary", PositionalMode::kRotary, false},
                        Case{"lora", PositionalMode::kRotary, true},
                        Case{"lora-learned", PositionalMode::kLearned, true}}) {
    CAPTURE(c.name);
    auto model = test::tiny_model(c.mode);
    test::perturb(model, 0.3, 9);
    if (c.lora) {
      model.attach_lora(2, 4.0, 5);
      std::mt19937_64 rng(6);
      std::normal_distribution<double> n(0, 0.3);
      for (auto& l : model.weights.layers)
        for (auto* lin : {&l.q, &l.k, &l.v, &l.o})
          for (Index i = 0; i < lin->lora_b.size(); ++i) lin->lora_b.data()[i] = n(rng);
    }
    for (std::uint64_t s = 0; s < 3; ++s) {
      const auto result = gradcheck(model, sample_sequence(40 + s), 150, s);
      CAPTURE(result.worst);
      CHECK(result.checked == 150);
      CHECK(result.max_rel_error < 1e-3);
    }
  }
}

TEST_CASE("all-ignored labels produce zero gradients") {
  auto model = test::tiny_model(PositionalMode::kRotary);
  auto seq = sample_sequence(2);
  std::fill(seq.labels.begin(), seq.labels.end(), kIgnoreLabel);
  auto grads = zeros_like(model.weights);
  const auto ce = accumulate_gradients(model, seq, build_mask(seq), grads, 1.0);
  CHECK(ce.count == 0);
  visit_tensors([](const std::string& name, const Mat<double>& g) {
    CAPTURE(name);
    CHECK(g.isZero(0));
  }, grads);
  CHECK_THROWS_AS(gradcheck(model, seq, 1, 0), std::invalid_argument);
}

TEST_CASE("backward leaves frozen gradient buffers untouched") {
  auto model = test::tiny_model(PositionalMode::kLearned);
  test::perturb(model, 0.2, 1);
  model.attach_lora(2, 2.0, 3);
  const auto seq = sample_sequence(3);
  auto grads = zeros_like(model.weights);
  visit_tensors([](const std::string&, Mat<double>& g) { g.setConstant(7.0); }, grads);
  accumulate_gradients(model, seq, build_mask(seq), grads, 1.0);
  for (const auto& p : model.parameters(grads)) {
    CAPTURE(p.name);
    if (!p.trainable) {
      CHECK((p.grad->array() == 7.0).all());
    } else if (p.only_row >= 0) {
      for (Index r = 0; r < p.grad->rows(); ++r)
        if (r != p.only_row) CHECK((p.grad->row(r).array() == 7.0).all());
      CHECK_FALSE((p.grad->row(p.only_row).array() == 7.0).all());
    }
  }
}

TEST_CASE("training data must not score sentinels") {
  auto seq = sample_sequence(1);
  for (std::size_t i = 0; i < seq.tokens.size(); ++i)
    if (seq.is_sentinel[i]) seq.labels[i] = 5;
  CHECK_THROWS_AS(check_no_sentinel_loss({seq}), std::invalid_argument);
  auto model = test::tiny_model(PositionalMode::kLearned);
  CHECK_THROWS_AS(train(model, {seq}, TrainConfig{}), std::invalid_argument);
  CHECK_THROWS_AS(train(model, {}, TrainConfig{}), std::invalid_argument);
}

TEST_CASE("epoch order is a seeded permutation") {
  const auto a = epoch_order(50, 3, 0);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 50; ++i) CHECK(sorted[i] == i);
  CHECK(a == epoch_order(50, 3, 0));
  CHECK(a != epoch_order(50, 3, 1));
  CHECK(a != epoch_order(50, 4, 0));
}

TEST_CASE("training reduces the loss and is deterministic") {
  for (auto mode : {PipelineMode::kOrigin, PipelineMode::kSentinel}) {
    auto a = small_run(mode);
    auto b = small_run(mode);
    TrainConfig tc;
    tc.epochs = 4;
    tc.batch_size = 4;
    tc.optimizer.lr = 3e-3;
    tc.seed = 5;
    tc.max_grad_norm = 1.0;
    const auto ra = train(a.model, a.data, tc);
    const auto rb = train(b.model, b.data, tc);
    REQUIRE(ra.epoch_loss.size() == 4);
    for (std::size_t e = 1; e < ra.epoch_loss.size(); ++e) CHECK(ra.epoch_loss[e] < ra.epoch_loss[e - 1]);
    CHECK(ra.epoch_loss == rb.epoch_loss);
    CHECK(ra.steps == rb.steps);
    CHECK(encode_checkpoint(a.model, 0) == encode_checkpoint(b.model, 0));
  }
}

TEST_CASE("LoRA training changes only trainable tensors") {
  auto run = small_run(PipelineMode::kSentinel);
  run.model.attach_lora(2, 2.0, 1);
  const auto frozen_before = frozen_checksum(run.model);
  const auto all_before = model_checksum(run.model);
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 8;
  tc.optimizer.lr = 1e-3;
  train(run.model, run.data, tc);
  CHECK(frozen_checksum(run.model) == frozen_before);
  CHECK(model_checksum(run.model) != all_before);
}
