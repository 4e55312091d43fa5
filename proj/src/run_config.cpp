#include "sentinel/run_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "sentinel/hash.hpp"

namespace sentinel {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

const std::map<std::string, std::string>& RunConfig::defaults() {
  static const std::map<std::string, std::string> d = {
      // data
      {"corpus", ""},
      {"eval_corpus", ""},
      {"doc_split", "blank-lines"},
      {"min_count", "1"},
      {"sentences_per_chunk", "1"},
      {"eval_fraction", "0.1"},
      {"mode", "sentinel"},
      {"mask_dump", "0"},
      // model
      {"layers", "2"},
      {"heads", "4"},
      {"width", "64"},
      {"ff", "256"},
      {"context", "256"},
      {"positional", "learned"},
      {"seed", "1234"},
      // training
      {"epochs", "5"},
      {"batch_size", "12"},
      {"lr", "auto"},
      {"beta1", "0.9"},
      {"beta2", "0.999"},
      {"eps", "1e-8"},
      {"weight_decay", "0.01"},
      {"max_grad_norm", "1.0"},
      {"lora_rank", "16"},
      {"lora_alpha", "auto"},
      {"init_checkpoint", ""},
      // artifacts
      {"out_dir", "run"},
      {"dataset", ""},
      {"eval_dataset", ""},
      {"vocab", ""},
      {"checkpoint", ""},
      {"compare", "false"},
      {"sweep_n", "1,2,3,4"},
      // probe
      {"probe_layer", "-1"},
      {"probe_head", "-1"},
      {"probe_samples", "3"},
      {"probe_facts", "6"},
      {"probe_keys", "24"},
      {"probe_values", "24"},
      {"probe_doc", ""},
      {"probe_question", ""},
      {"probe_gold", "-1"},
      // synthetic corpora
      {"synth_kind", "text"},
      {"synth_bytes", "50000"},
      {"synth_docs", "400"},
  };
  return d;
}

RunConfig::RunConfig() : values_(defaults()) {}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(n) + ": expected key=value");
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::invalid_argument("unknown config key '" + key + "'");
  it->second = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::invalid_argument("unknown config key '" + key + "'");
  return it->second;
}

long RunConfig::get_int(const std::string& key) const {
  const auto& s = get(key);
  long v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw std::invalid_argument("config key '" + key + "' expects an integer, got '" + s + "'");
  return v;
}

double RunConfig::get_double(const std::string& key) const {
  const auto& s = get(key);
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw std::invalid_argument("config key '" + key + "' expects a number, got '" + s + "'");
}

bool RunConfig::get_bool(const std::string& key) const {
  const auto& s = get(key);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw std::invalid_argument("config key '" + key + "' expects true/false, got '" + s + "'");
}

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
  std::vector<int> out;
  for (const auto& item : split_list(get(key))) {
    int v = 0;
    const auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || p != item.data() + item.size())
      throw std::invalid_argument("config key '" + key + "' expects integers, got '" + item + "'");
    out.push_back(v);
  }
  return out;
}

std::vector<std::filesystem::path> RunConfig::get_paths(const std::string& key) const {
  std::vector<std::filesystem::path> out;
  for (const auto& item : split_list(get(key))) out.emplace_back(item);
  return out;
}

RunMode RunConfig::mode() const {
  const auto& m = get("mode");
  if (m == "origin") return RunMode::kOrigin;
  if (m == "sentinel") return RunMode::kSentinel;
  if (m == "lora") return RunMode::kLora;
  throw std::invalid_argument("mode must be origin, sentinel or lora, got '" + m + "'");
}

RunConfig RunConfig::resolved() const {
  RunConfig c = *this;
  // From-scratch training needs a larger step than LoRA fine-tuning.
  if (c.get("lr") == "auto") c.set("lr", mode() == RunMode::kLora ? "5e-05" : "0.001");
  if (c.get("lora_alpha") == "auto") c.set("lora_alpha", c.get("lora_rank"));

  (void)c.mode();
  for (const char* k : {"min_count", "sentences_per_chunk", "mask_dump", "layers", "heads", "width", "ff",
                        "context", "seed", "epochs", "batch_size", "lora_rank", "probe_layer", "probe_head",
                        "probe_samples", "probe_facts", "probe_keys", "probe_values", "probe_gold",
                        "synth_bytes", "synth_docs"})
    (void)c.get_int(k);
  for (const char* k : {"eval_fraction", "lr", "beta1", "beta2", "eps", "weight_decay", "max_grad_norm", "lora_alpha"})
    (void)c.get_double(k);
  (void)c.get_bool("compare");
  (void)c.get_int_list("sweep_n");
  if (c.get_int("sentences_per_chunk") < 1) throw std::invalid_argument("sentences_per_chunk must be >= 1");
  if (c.get_int("seed") < 0) throw std::invalid_argument("seed must be non-negative");
  if (c.mode() == RunMode::kLora && c.get_int("lora_rank") <= 0)
    throw std::invalid_argument("lora mode needs lora_rank > 0");
  const auto& pos = c.get("positional");
  if (pos != "learned" && pos != "rotary") throw std::invalid_argument("positional must be learned or rotary");
  const auto& split = c.get("doc_split");
  if (split != "blank-lines" && split != "per-file") throw std::invalid_argument("doc_split must be blank-lines or per-file");
  return c;
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

std::uint64_t RunConfig::hash() const {
  RunConfig c = resolved();
  c.values_.erase("out_dir");
  // Input files count by content, so identical inputs in different directories hash alike.
  for (const char* k : {"corpus", "eval_corpus", "dataset", "eval_dataset", "vocab", "checkpoint", "init_checkpoint",
                        "probe_doc"}) {
    std::string fingerprint;
    for (const auto& p : c.get_paths(k)) {
      std::ifstream in(p, std::ios::binary);
      if (!in) {
        fingerprint += "missing:" + p.string() + ";";
        continue;
      }
      std::ostringstream bytes;
      bytes << in.rdbuf();
      fingerprint += hex64(fnv1a(bytes.str())) + ";";
    }
    c.values_[k] = fingerprint;
  }
  return fnv1a(c.to_text());
}

std::string RunConfig::hash_hex() const { return hex64(hash()); }

ModelConfig RunConfig::model_config(Index vocab_size) const {
  ModelConfig m;
  m.vocab_size = vocab_size;
  m.context = get_int("context");
  m.layers = get_int("layers");
  m.heads = get_int("heads");
  m.width = get_int("width");
  m.ff = get_int("ff");
  m.positional = get("positional") == "rotary" ? PositionalMode::kRotary : PositionalMode::kLearned;
  m.seed = static_cast<std::uint64_t>(get_int("seed"));
  return m;
}

TrainConfig RunConfig::train_config() const {
  const RunConfig r = resolved();
  TrainConfig t;
  t.epochs = static_cast<int>(r.get_int("epochs"));
  t.batch_size = static_cast<int>(r.get_int("batch_size"));
  t.optimizer.lr = r.get_double("lr");
  t.optimizer.beta1 = r.get_double("beta1");
  t.optimizer.beta2 = r.get_double("beta2");
  t.optimizer.eps = r.get_double("eps");
  t.optimizer.weight_decay = r.get_double("weight_decay");
  t.max_grad_norm = r.get_double("max_grad_norm");
  t.seed = static_cast<std::uint64_t>(r.get_int("seed"));
  return t;
}

ExperimentConfig RunConfig::experiment() const {
  const RunConfig r = resolved();
  ExperimentConfig e;
  e.model = r.model_config(0);
  e.train = r.train_config();
  e.sentences_per_chunk = static_cast<int>(r.get_int("sentences_per_chunk"));
  e.min_count = static_cast<int>(r.get_int("min_count"));
  e.lora = r.mode() == RunMode::kLora;
  e.lora_rank = r.get_int("lora_rank");
  e.lora_alpha = r.get_double("lora_alpha");
  e.config_hash = r.hash_hex();
  return e;
}

}  // namespace sentinel
