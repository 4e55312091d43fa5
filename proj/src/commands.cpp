#include "sentinel/commands.hpp"

#include <fstream>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "sentinel/attention_mask.hpp"
#include "sentinel/checkpoint.hpp"
#include "sentinel/dataset_io.hpp"
#include "sentinel/evaluation.hpp"
#include "sentinel/hash.hpp"
#include "sentinel/synthetic.hpp"

namespace sentinel {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

fs::path prepare_out_dir(const RunConfig& cfg) {
  const fs::path dir = cfg.out_dir();
  fs::create_directories(dir);
  write_text(dir / "resolved_config.txt", "# config_hash " + cfg.hash_hex() + "\n" + cfg.to_text());
  return dir;
}

const std::string& require(const RunConfig& cfg, const std::string& key) {
  const auto& v = cfg.get(key);
  if (v.empty()) throw std::invalid_argument("missing required setting '" + key + "'");
  return v;
}

DocumentSplit doc_split(const RunConfig& cfg) {
  return cfg.get("doc_split") == "per-file" ? DocumentSplit::kPerFile : DocumentSplit::kBlankLines;
}

/// Training and evaluation documents: an explicit eval corpus, or a held-out tail.
std::pair<std::vector<std::string>, std::vector<std::string>> load_corpus(const RunConfig& cfg) {
  require(cfg, "corpus");
  auto docs = load_documents(cfg.get_paths("corpus"), doc_split(cfg));
  if (docs.empty()) throw std::invalid_argument("corpus contains no documents");
  if (!cfg.get("eval_corpus").empty())
    return {std::move(docs), load_documents(cfg.get_paths("eval_corpus"), doc_split(cfg))};
  return split_documents(docs, cfg.get_double("eval_fraction"));
}

std::vector<DatasetRecord> prepare_records(const std::vector<std::string>& docs, const Vocab& vocab,
                                           const RunConfig& cfg) {
  std::vector<DatasetRecord> out;
  const int n = static_cast<int>(cfg.get_int("sentences_per_chunk"));
  const Index budget = cfg.get_int("context");
  for (std::size_t d = 0; d < docs.size(); ++d) {
    const auto seq = chunk_document(docs[d], vocab, n);
    for (const auto& window : window_document(seq, budget))
      out.push_back({make_sequence(window, vocab, cfg.pipeline()), static_cast<Index>(d)});
  }
  return out;
}

std::string mode_name(const std::vector<SentinelSequence>& data) {
  for (const auto& s : data)
    if (s.sentinel_count() > 0) return "sentinel";
  return "origin";
}

void check_mode_matches(const RunConfig& cfg, const std::vector<SentinelSequence>& data) {
  const bool has_sentinels = mode_name(data) == "sentinel";
  if (has_sentinels != (cfg.pipeline() == PipelineMode::kSentinel))
    throw std::invalid_argument("mode '" + cfg.get("mode") + "' conflicts with a dataset prepared in " +
                                (has_sentinels ? "sentinel" : "origin") + " mode");
}

EpochCallback epoch_logger(std::ostream& log, const std::string& tag) {
  return [&log, tag](int epoch, double loss, Index tokens) {
    log << tag << "epoch " << epoch + 1 << "  loss " << std::fixed << std::setprecision(4) << loss
        << "  tokens " << tokens << std::defaultfloat << '\n';
  };
}

}  // namespace

ValidationReport validate_dataset(const fs::path& path, const Vocab& vocab) {
  ValidationReport report;
  std::vector<DatasetRecord> records;
  try {
    records = read_dataset(path);
  } catch (const DatasetError& e) {
    report.ok = false;
    report.bad_record = e.record();
    report.rule = std::string(e.what()).find("malformed JSON") != std::string::npos ? "malformed-json" : "schema";
    report.message = e.what();
    return report;
  }
  report.records = static_cast<Index>(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& seq = records[i].sequence;
    std::string rule = check_sentinel_rules(seq, vocab);
    if (rule.empty()) rule = check_mask_rules(build_mask(seq), seq);
    if (!rule.empty()) {
      report.ok = false;
      report.bad_record = static_cast<Index>(i);
      report.rule = rule;
      report.message = "record " + std::to_string(i) + " violates " + rule;
      return report;
    }
  }
  return report;
}

int cmd_prepare(const RunConfig& config, std::ostream& out, std::ostream& log) {
  const RunConfig cfg = config.resolved();
  const auto [train_docs, eval_docs] = load_corpus(cfg);
  const fs::path dir = prepare_out_dir(cfg);
  const std::string hash = cfg.hash_hex();

  const Vocab vocab = build_vocab(train_docs, static_cast<int>(cfg.get_int("min_count")));
  vocab.save(dir / "vocab.txt");
  const auto train = prepare_records(train_docs, vocab, cfg);
  write_dataset(dir / "train.jsonl", train, hash);
  std::vector<DatasetRecord> eval;
  if (!eval_docs.empty()) {
    eval = prepare_records(eval_docs, vocab, cfg);
    write_dataset(dir / "eval.jsonl", eval, hash);
  }

  Index sentinels = 0, tokens = 0;
  for (const auto& r : train) {
    sentinels += r.sequence.sentinel_count();
    tokens += r.sequence.size();
  }
  if (const auto dumps = cfg.get_int("mask_dump"); dumps > 0) {
    fs::create_directories(dir / "masks");
    for (std::size_t i = 0; i < train.size() && static_cast<long>(i) < dumps; ++i)
      write_text(dir / "masks" / ("train_" + std::to_string(i) + ".txt"),
                 dump_mask(build_mask(train[i].sequence).dense()));
  }
  write_json(dir / "manifest.json", {{"config_hash", hash},
                                     {"mode", cfg.get("mode")},
                                     {"sentences_per_chunk", cfg.get_int("sentences_per_chunk")},
                                     {"vocab_size", vocab.size()},
                                     {"train_records", train.size()},
                                     {"eval_records", eval.size()},
                                     {"train_positions", tokens},
                                     {"train_sentinels", sentinels},
                                     {"seed", cfg.get_int("seed")}});
  log << "vocab " << vocab.size() << " entries; " << train.size() << " train / " << eval.size()
      << " eval records\n";
  out << "prepared " << (dir / "train.jsonl").string() << '\n';
  return 0;
}

int cmd_validate(const RunConfig& config, std::ostream& out, std::ostream& log) {
  const RunConfig cfg = config.resolved();
  const Vocab vocab = Vocab::load(require(cfg, "vocab"));
  require(cfg, "dataset");
  for (const auto& path : cfg.get_paths("dataset")) {
    const auto report = validate_dataset(path, vocab);
    if (!report.ok) {
      out << "INVALID " << path.string() << " record " << report.bad_record << " rule " << report.rule << '\n';
      log << report.message << '\n';
      return 1;
    }
    out << "OK " << path.string() << " (" << report.records << " records)\n";
  }
  return 0;
}

int cmd_train(const RunConfig& config, std::ostream& out, std::ostream& log) {
  const RunConfig cfg = config.resolved();
  const Vocab vocab = Vocab::load(require(cfg, "vocab"));
  const auto data = sequences(read_dataset(require(cfg, "dataset")));
  check_mode_matches(cfg, data);
  const fs::path dir = prepare_out_dir(cfg);

  const auto mc = cfg.model_config(vocab.size());
  auto model = Model<float>::init(mc, vocab.sr_id());
  if (!cfg.get("init_checkpoint").empty()) {
    model = load_checkpoint<float>(cfg.get("init_checkpoint"));
    if (model.config.vocab_size != vocab.size()) throw std::invalid_argument("init_checkpoint vocabulary size differs");
    if (model.lora_attached()) throw std::invalid_argument("init_checkpoint already carries LoRA adapters");
  }
  if (cfg.mode() == RunMode::kLora)
    model.attach_lora(cfg.get_int("lora_rank"), cfg.get_double("lora_alpha"), mc.seed + 1);

  const auto frozen_before = frozen_checksum(model);
  const auto report = train(model, data, cfg.train_config(), epoch_logger(log, ""));
  const auto frozen_after = frozen_checksum(model);

  const auto bytes = encode_checkpoint(model, cfg.hash());
  write_bytes(dir / "checkpoint.bin", bytes);
  auto j = to_json(report, false);
  j["config_hash"] = cfg.hash_hex();
  j["mode"] = cfg.get("mode");
  j["checkpoint_checksum"] = hex64(fnv1a(bytes.data(), bytes.size()));
  j["trainable_parameters"] = model.trainable_parameter_count();
  j["frozen_checksum_before"] = hex64(frozen_before);
  j["frozen_checksum_after"] = hex64(frozen_after);
  write_json(dir / "train_report.json", j);
  write_json(dir / "timing.json", {{"wall_seconds", report.wall_seconds}, {"config_hash", cfg.hash_hex()}});
  out << "trained " << report.steps << " steps; final loss "
      << (report.epoch_loss.empty() ? 0.0 : report.epoch_loss.back()) << "; checkpoint "
      << (dir / "checkpoint.bin").string() << '\n';
  return 0;
}

int cmd_eval(const RunConfig& config, std::ostream& out, std::ostream& log) {
  const RunConfig cfg = config.resolved();
  if (cfg.get_bool("compare")) {
    const auto [train_docs, eval_docs] = load_corpus(cfg);
    const fs::path dir = prepare_out_dir(cfg);
    const auto cmp = compare_modes(train_docs, eval_docs, cfg.experiment(), epoch_logger(log, "  "));
    auto j = to_json(cmp);
    j["config_hash"] = cfg.hash_hex();
    write_json(dir / "compare.json", j);
    const auto table = format_comparison(cmp);
    write_text(dir / "compare.txt", table);
    out << table;
    return 0;
  }
  const auto model = load_checkpoint<float>(require(cfg, "checkpoint"));
  const std::string data_key = cfg.get("eval_dataset").empty() ? "dataset" : "eval_dataset";
  const auto data = sequences(read_dataset(require(cfg, data_key)));
  const fs::path dir = prepare_out_dir(cfg);
  auto result = perplexity(model, data, mode_name(data));
  const fs::path data_path = cfg.get(data_key);
  const auto data_bytes = read_bytes(data_path);
  result.dataset_id = data_path.filename().string() + "@" + hex64(fnv1a(data_bytes.data(), data_bytes.size()));
  result.config_hash = cfg.hash_hex();
  write_json(dir / "eval_result.json", to_json(result));
  out << result.mode << " PPL " << std::fixed << std::setprecision(3) << result.perplexity << " over "
      << result.token_count << " tokens\n"
      << std::defaultfloat;
  return 0;
}

int cmd_sweep(const RunConfig& config, std::ostream& out, std::ostream& log) {
  const RunConfig cfg = config.resolved();
  const auto [train_docs, eval_docs] = load_corpus(cfg);
  const fs::path dir = prepare_out_dir(cfg);
  const auto n_list = cfg.get_int_list("sweep_n");
  if (n_list.empty()) throw std::invalid_argument("sweep_n is empty");
  std::vector<SweepRow> rows;
  for (int n : n_list) {
    log << "sentences_per_chunk " << n << '\n';
    auto part = breath_sweep(train_docs, eval_docs, cfg.experiment(), {n}, epoch_logger(log, "  "));
    rows.push_back(std::move(part.front()));
  }
  nlohmann::json j = {{"config_hash", cfg.hash_hex()}, {"seed", cfg.get_int("seed")}, {"rows", to_json(rows)}};
  write_json(dir / "sweep.json", j);
  const auto table = format_sweep(rows);
  write_text(dir / "sweep.txt", table);
  out << table;
  return 0;
}

namespace {

SentinelSequence probe_document(const std::vector<std::string>& sentences, const Vocab& vocab, int per_chunk) {
  TokenSequence doc;
  for (std::size_t s = 0; s < sentences.size(); s += static_cast<std::size_t>(per_chunk)) {
    const Index begin = doc.size();
    for (std::size_t k = s; k < std::min(sentences.size(), s + static_cast<std::size_t>(per_chunk)); ++k) {
      const auto ids = tokenize(sentences[k], vocab);
      doc.tokens.insert(doc.tokens.end(), ids.begin(), ids.end());
    }
    if (doc.size() > begin) doc.chunks.push_back({begin, doc.size()});
  }
  if (doc.tokens.empty()) throw std::invalid_argument("probe document is empty");
  return make_sentinel_sequence(doc, vocab);
}

Index unknown_words(const std::string& text, const Vocab& vocab) {
  Index n = 0;
  for (const auto& w : split_words(text)) n += !vocab.contains(w);
  return n;
}

}  // namespace

int cmd_probe(const RunConfig& config, std::ostream& out, std::ostream& log) {
  const RunConfig cfg = config.resolved();
  const auto model = load_checkpoint<float>(require(cfg, "checkpoint"));
  const Vocab vocab = Vocab::load(require(cfg, "vocab"));
  if (model.config.vocab_size != vocab.size()) throw std::invalid_argument("checkpoint and vocab disagree in size");
  const fs::path dir = prepare_out_dir(cfg);
  const ProbeOptions options{cfg.get_int("probe_layer"), cfg.get_int("probe_head")};

  struct Sample {
    std::vector<std::string> sentences;
    std::string question;
    Index gold;
  };
  std::vector<Sample> samples;
  if (!cfg.get("probe_doc").empty()) {
    std::ifstream in(cfg.get("probe_doc"));
    if (!in) throw std::runtime_error("cannot open " + cfg.get("probe_doc"));
    std::ostringstream ss;
    ss << in.rdbuf();
    samples.push_back({split_sentences(ss.str()), require(cfg, "probe_question"), cfg.get_int("probe_gold")});
  } else {
    KvTaskConfig task{static_cast<int>(cfg.get_int("probe_facts")), static_cast<int>(cfg.get_int("probe_keys")),
                      static_cast<int>(cfg.get_int("probe_values"))};
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.get_int("seed")), 0x70726f62u};
    std::mt19937_64 rng(seq);
    for (long i = 0; i < cfg.get_int("probe_samples"); ++i) {
      auto ex = make_kv_example(rng, task);
      samples.push_back({ex.facts, ex.question, ex.gold});
    }
  }

  const int per_chunk = static_cast<int>(cfg.get_int("sentences_per_chunk"));
  nlohmann::json rows = nlohmann::json::array();
  double total_agreement = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    Index unknown = unknown_words(s.question, vocab);
    for (const auto& sentence : s.sentences) unknown += unknown_words(sentence, vocab);
    if (unknown > 0) log << "probe sample " << i << ": " << unknown << " words map to <unk>\n";
    const auto doc = probe_document(s.sentences, vocab, per_chunk);
    const auto probe = attention_probe(model, doc, tokenize(s.question, vocab), s.gold, options);
    std::ostringstream name;
    name << "probe_" << std::setw(3) << std::setfill('0') << i << ".csv";
    write_text(dir / name.str(), probe_csv(probe));
    total_agreement += probe.agreement();
    rows.push_back({{"csv", name.str()},
                    {"gold", s.gold},
                    {"question_length", probe.question_length},
                    {"sentinels", probe.sentinel_count},
                    {"argmax", probe.argmax},
                    {"agreement", probe.agreement()}});
    out << name.str() << ": gold " << s.gold << ", argmax agreement " << probe.agreement() << '\n';
  }
  const double mean = total_agreement / static_cast<double>(samples.size());
  write_json(dir / "probe_summary.json", {{"config_hash", cfg.hash_hex()},
                                          {"seed", cfg.get_int("seed")},
                                          {"layer", options.layer},
                                          {"head", options.head},
                                          {"samples", rows},
                                          {"mean_agreement", mean}});
  out << "mean argmax agreement " << mean << " over " << samples.size() << " samples (seed "
      << cfg.get_int("seed") << ")\n";
  return 0;
}

int cmd_synth(const RunConfig& config, std::ostream& out, std::ostream&) {
  const RunConfig cfg = config.resolved();
  const fs::path dir = prepare_out_dir(cfg);
  const auto seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
  std::vector<std::string> docs;
  if (cfg.get("synth_kind") == "text") {
    docs = synthetic_text_corpus(seed, static_cast<std::size_t>(cfg.get_int("synth_bytes")));
  } else if (cfg.get("synth_kind") == "kv") {
    KvTaskConfig task{static_cast<int>(cfg.get_int("probe_facts")), static_cast<int>(cfg.get_int("probe_keys")),
                      static_cast<int>(cfg.get_int("probe_values"))};
    docs = synthetic_kv_corpus(seed, static_cast<int>(cfg.get_int("synth_docs")), task);
  } else {
    throw std::invalid_argument("synth_kind must be text or kv");
  }
  std::string text;
  for (const auto& d : docs) text += d + "\n\n";
  write_text(dir / "corpus.txt", text);
  out << "wrote " << docs.size() << " documents (" << text.size() << " bytes) to "
      << (dir / "corpus.txt").string() << '\n';
  return 0;
}

int run_command(const std::string& name, const RunConfig& config, std::ostream& out, std::ostream& log) {
  if (name == "prepare") return cmd_prepare(config, out, log);
  if (name == "validate") return cmd_validate(config, out, log);
  if (name == "train") return cmd_train(config, out, log);
  if (name == "eval") return cmd_eval(config, out, log);
  if (name == "sweep") return cmd_sweep(config, out, log);
  if (name == "probe") return cmd_probe(config, out, log);
  if (name == "synth") return cmd_synth(config, out, log);
  throw std::invalid_argument("unknown command '" + name + "'");
}

}  // namespace sentinel
