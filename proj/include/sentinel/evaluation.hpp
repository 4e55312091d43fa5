#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "sentinel/attention_mask.hpp"
#include "sentinel/corpus.hpp"
#include "sentinel/model.hpp"
#include "sentinel/pipeline.hpp"
#include "sentinel/training.hpp"

namespace sentinel {

struct EvalResult {
  std::string mode;
  double perplexity = 0;
  double loss_sum = 0;
  Index token_count = 0;
  std::string dataset_id;
  std::string config_hash;
};

/// exp(mean NLL) over counted labels only; sentinel positions never count.
template <typename Scalar>
EvalResult perplexity(const Model<Scalar>& model, const std::vector<SentinelSequence>& data,
                      std::string mode) {
  EvalResult out;
  out.mode = std::move(mode);
  for (const auto& seq : data) {
    const auto mask = build_mask(seq);
    ForwardCache<Scalar> cache;
    const auto ce = cross_entropy_ignoring(forward(model, seq.tokens, seq.position_ids, mask, cache), seq.labels);
    out.loss_sum += ce.loss_sum;
    out.token_count += ce.count;
  }
  if (out.token_count == 0) throw std::invalid_argument("no evaluable tokens");
  out.perplexity = std::exp(out.loss_sum / static_cast<double>(out.token_count));
  return out;
}

struct ProbeOptions {
  Index layer = -1;  // -1 = final layer
  Index head = -1;   // -1 = mean over heads
};

struct ProbeResult {
  Index question_length = 0;
  Index sentinel_count = 0;
  Mat<double> weights;  // Q x K, rows renormalized over sentinel columns
  Index gold = -1;
  std::vector<Index> argmax;

  /// Fraction of question rows whose argmax is the gold chunk.
  double agreement() const;
};

/// Attention from every question position (appended after `document` as
/// ordinary tokens) to the document's sentinel columns.
template <typename Scalar>
ProbeResult attention_probe(const Model<Scalar>& model, const SentinelSequence& document,
                            const std::vector<TokenId>& question, Index gold,
                            const ProbeOptions& options = {}) {
  std::vector<Index> sentinel_cols;
  for (Index i = 0; i < document.size(); ++i)
    if (document.is_sentinel[static_cast<std::size_t>(i)]) sentinel_cols.push_back(i);
  if (sentinel_cols.empty()) throw std::invalid_argument("probe document has no sentinels");
  if (question.empty()) throw std::invalid_argument("probe question is empty");

  SentinelSequence seq = document;
  Index next_pos = 0;
  for (std::size_t i = 0; i < seq.tokens.size(); ++i)
    if (!seq.is_sentinel[i]) next_pos = seq.position_ids[i] + 1;
  const Index chunk = seq.chunk_ids.empty() ? 0 : seq.chunk_ids.back() + 1;
  for (TokenId t : question) {
    seq.tokens.push_back(t);
    seq.is_sentinel.push_back(0);
    seq.position_ids.push_back(next_pos++);
    seq.labels.push_back(kIgnoreLabel);
    seq.chunk_ids.push_back(chunk);
  }

  const auto mask = build_mask(seq);
  const auto fwd = forward(model, seq, mask, true);
  const Index layers = static_cast<Index>(fwd.attention.size());
  const Index layer = options.layer < 0 ? layers - 1 : options.layer;
  if (layer >= layers) throw std::out_of_range("probe layer out of range");
  const auto& heads = fwd.attention[static_cast<std::size_t>(layer)];
  if (options.head >= static_cast<Index>(heads.size())) throw std::out_of_range("probe head out of range");

  Mat<double> attn;
  if (options.head >= 0) {
    attn = heads[static_cast<std::size_t>(options.head)].template cast<double>();
  } else {
    attn = Mat<double>::Zero(seq.size(), seq.size());
    for (const auto& h : heads) attn += h.template cast<double>();
    attn /= static_cast<double>(heads.size());
  }

  ProbeResult out;
  out.question_length = static_cast<Index>(question.size());
  out.sentinel_count = static_cast<Index>(sentinel_cols.size());
  out.gold = gold;
  out.weights.resize(out.question_length, out.sentinel_count);
  for (Index q = 0; q < out.question_length; ++q) {
    const Index row = document.size() + q;
    for (Index k = 0; k < out.sentinel_count; ++k)
      out.weights(q, k) = attn(row, sentinel_cols[static_cast<std::size_t>(k)]);
    const double total = out.weights.row(q).sum();
    if (total > 0) out.weights.row(q) /= total;
    else out.weights.row(q).setConstant(1.0 / static_cast<double>(out.sentinel_count));
    Index best = 0;
    out.weights.row(q).maxCoeff(&best);
    out.argmax.push_back(best);
  }
  return out;
}

/// Header "pos,sr_0,...,sr_{K-1},argmax,gold", then one row per question position.
std::string probe_csv(const ProbeResult& probe);

nlohmann::json to_json(const EvalResult& r);
nlohmann::json to_json(const TrainReport& r, bool include_wall_time);

/// Everything one train+eval run needs besides the corpus.
struct ExperimentConfig {
  ModelConfig model;  // vocab_size is filled from the built vocabulary
  TrainConfig train;
  int sentences_per_chunk = 1;
  int min_count = 1;
  bool lora = false;
  Index lora_rank = 16;
  double lora_alpha = 16;
  std::string config_hash;
};

/// Chunks, windows and pipelines every document; windows never split a chunk.
std::vector<SentinelSequence> prepare_documents(const std::vector<std::string>& docs, const Vocab& vocab,
                                                int sentences_per_chunk, Index max_length,
                                                PipelineMode mode);

/// Deterministic split: the last ceil(fraction * n) documents (at least one
/// when n >= 2) are held out for evaluation.
std::pair<std::vector<std::string>, std::vector<std::string>> split_documents(
    const std::vector<std::string>& docs, double eval_fraction);

struct RunOutcome {
  EvalResult eval;
  TrainReport train;
  Index train_sentinels = 0;
  std::uint64_t checkpoint_checksum = 0;
};

/// Builds the vocabulary from `train_docs`, trains a fresh model in `mode`
/// and evaluates it on `eval_docs`.
RunOutcome run_experiment(const std::vector<std::string>& train_docs,
                          const std::vector<std::string>& eval_docs, const ExperimentConfig& config,
                          PipelineMode mode, const EpochCallback& on_epoch = {});

struct ModeComparison {
  RunOutcome origin;
  RunOutcome sentinel;
  double ratio() const { return sentinel.eval.perplexity / origin.eval.perplexity; }
};

/// Two trainings that differ only in pipeline mode and mask.
ModeComparison compare_modes(const std::vector<std::string>& train_docs,
                             const std::vector<std::string>& eval_docs, const ExperimentConfig& config,
                             const EpochCallback& on_epoch = {});

struct SweepRow {
  int sentences_per_chunk = 0;
  RunOutcome outcome;
};

std::vector<SweepRow> breath_sweep(const std::vector<std::string>& train_docs,
                                   const std::vector<std::string>& eval_docs, const ExperimentConfig& config,
                                   const std::vector<int>& n_list, const EpochCallback& on_epoch = {});

nlohmann::json to_json(const ModeComparison& c);
nlohmann::json to_json(const std::vector<SweepRow>& rows);
std::string format_comparison(const ModeComparison& c);
std::string format_sweep(const std::vector<SweepRow>& rows);

}  // namespace sentinel
