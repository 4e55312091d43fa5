#include "sentinel/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "sentinel/checkpoint.hpp"

namespace sentinel {

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : std::string(width - s.size(), ' ') + s;
}

}  // namespace

double ProbeResult::agreement() const {
  if (argmax.empty()) return 0.0;
  const auto hits = std::count(argmax.begin(), argmax.end(), gold);
  return static_cast<double>(hits) / static_cast<double>(argmax.size());
}

std::string probe_csv(const ProbeResult& probe) {
  std::ostringstream out;
  out << "pos";
  for (Index k = 0; k < probe.sentinel_count; ++k) out << ",sr_" << k;
  out << ",argmax,gold\n";
  char buf[32];
  for (Index q = 0; q < probe.question_length; ++q) {
    out << q;
    for (Index k = 0; k < probe.sentinel_count; ++k) {
      std::snprintf(buf, sizeof buf, "%.12g", probe.weights(q, k));
      out << ',' << buf;
    }
    out << ',' << probe.argmax[static_cast<std::size_t>(q)] << ',' << probe.gold << '\n';
  }
  return out.str();
}

nlohmann::json to_json(const EvalResult& r) {
  return {{"mode", r.mode},
          {"perplexity", r.perplexity},
          {"loss_sum", r.loss_sum},
          {"token_count", r.token_count},
          {"dataset_id", r.dataset_id},
          {"config_hash", r.config_hash}};
}

nlohmann::json to_json(const TrainReport& r, bool include_wall_time) {
  nlohmann::json j = {{"epoch_loss", r.epoch_loss},
                      {"epoch_tokens", r.epoch_tokens},
                      {"steps", r.steps},
                      {"seed", r.seed}};
  if (include_wall_time) j["wall_seconds"] = r.wall_seconds;
  return j;
}

std::vector<SentinelSequence> prepare_documents(const std::vector<std::string>& docs, const Vocab& vocab,
                                                int sentences_per_chunk, Index max_length,
                                                PipelineMode mode) {
  std::vector<SentinelSequence> out;
  for (const auto& doc : docs) {
    const auto seq = chunk_document(doc, vocab, sentences_per_chunk);
    for (const auto& window : window_document(seq, max_length))
      out.push_back(make_sequence(window, vocab, mode));
  }
  return out;
}

std::pair<std::vector<std::string>, std::vector<std::string>> split_documents(
    const std::vector<std::string>& docs, double eval_fraction) {
  const auto n = docs.size();
  std::size_t held = 0;
  if (n >= 2 && eval_fraction > 0) {
    held = static_cast<std::size_t>(std::ceil(eval_fraction * static_cast<double>(n)));
    held = std::clamp<std::size_t>(held, 1, n - 1);
  }
  std::vector<std::string> train(docs.begin(), docs.end() - static_cast<std::ptrdiff_t>(held));
  std::vector<std::string> eval(docs.end() - static_cast<std::ptrdiff_t>(held), docs.end());
  return {std::move(train), std::move(eval)};
}

RunOutcome run_experiment(const std::vector<std::string>& train_docs,
                          const std::vector<std::string>& eval_docs, const ExperimentConfig& config,
                          PipelineMode mode, const EpochCallback& on_epoch) {
  const Vocab vocab = build_vocab(train_docs, config.min_count);
  const Index max_length = config.model.context;
  const auto train_data =
      prepare_documents(train_docs, vocab, config.sentences_per_chunk, max_length, mode);
  const auto eval_data = prepare_documents(eval_docs.empty() ? train_docs : eval_docs, vocab,
                                           config.sentences_per_chunk, max_length, mode);

  ModelConfig mc = config.model;
  mc.vocab_size = vocab.size();
  auto model = Model<float>::init(mc, vocab.sr_id());
  if (config.lora) model.attach_lora(config.lora_rank, config.lora_alpha, mc.seed + 1);

  RunOutcome out;
  for (const auto& s : train_data) out.train_sentinels += s.sentinel_count();
  out.train = train(model, train_data, config.train, on_epoch);
  out.eval = perplexity(model, eval_data, mode == PipelineMode::kSentinel ? "sentinel" : "origin");
  out.eval.dataset_id = eval_docs.empty() ? "train" : "eval";
  out.eval.config_hash = config.config_hash;
  const auto bytes = encode_checkpoint(model, fnv1a(config.config_hash));
  out.checkpoint_checksum = fnv1a(bytes.data(), bytes.size());
  return out;
}

ModeComparison compare_modes(const std::vector<std::string>& train_docs,
                             const std::vector<std::string>& eval_docs, const ExperimentConfig& config,
                             const EpochCallback& on_epoch) {
  ModeComparison c;
  c.origin = run_experiment(train_docs, eval_docs, config, PipelineMode::kOrigin, on_epoch);
  c.sentinel = run_experiment(train_docs, eval_docs, config, PipelineMode::kSentinel, on_epoch);
  return c;
}

std::vector<SweepRow> breath_sweep(const std::vector<std::string>& train_docs,
                                   const std::vector<std::string>& eval_docs, const ExperimentConfig& config,
                                   const std::vector<int>& n_list, const EpochCallback& on_epoch) {
  std::vector<SweepRow> rows;
  for (int n : n_list) {
    if (n < 1) throw std::invalid_argument("sentences per chunk must be positive");
    ExperimentConfig c = config;
    c.sentences_per_chunk = n;
    rows.push_back({n, run_experiment(train_docs, eval_docs, c, PipelineMode::kSentinel, on_epoch)});
  }
  return rows;
}

namespace {

nlohmann::json outcome_json(const RunOutcome& o) {
  return {{"eval", to_json(o.eval)},
          {"train", to_json(o.train, false)},
          {"train_sentinels", o.train_sentinels},
          {"checkpoint_checksum", hex64(o.checkpoint_checksum)}};
}

}  // namespace

nlohmann::json to_json(const ModeComparison& c) {
  return {{"origin", outcome_json(c.origin)},
          {"sentinel", outcome_json(c.sentinel)},
          {"ratio", c.ratio()},
          {"seed", c.sentinel.train.seed}};
}

nlohmann::json to_json(const std::vector<SweepRow>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    auto o = outcome_json(r.outcome);
    o["sentences_per_chunk"] = r.sentences_per_chunk;
    j.push_back(std::move(o));
  }
  return j;
}

std::string format_comparison(const ModeComparison& c) {
  std::ostringstream out;
  out << "Method    " << pad("PPL", 12) << pad("tokens", 10) << pad("final loss", 12) << '\n';
  auto line = [&](const char* name, const RunOutcome& o) {
    out << name << pad(fixed(o.eval.perplexity, 3), 12) << pad(std::to_string(o.eval.token_count), 10)
        << pad(o.train.epoch_loss.empty() ? "-" : fixed(o.train.epoch_loss.back(), 4), 12) << '\n';
  };
  line("Origin    ", c.origin);
  line("Sentinel  ", c.sentinel);
  out << "ratio sentinel/origin = " << fixed(c.ratio(), 4) << "  (seed " << c.sentinel.train.seed << ")\n";
  return out.str();
}

std::string format_sweep(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "#Sentences" << pad("PPL", 12) << pad("tokens", 10) << pad("sentinels", 11) << '\n';
  for (const auto& r : rows)
    out << pad(std::to_string(r.sentences_per_chunk), 10) << pad(fixed(r.outcome.eval.perplexity, 3), 12)
        << pad(std::to_string(r.outcome.eval.token_count), 10)
        << pad(std::to_string(r.outcome.train_sentinels), 11) << '\n';
  return out.str();
}

}  // namespace sentinel
