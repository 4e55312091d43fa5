#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "json.hpp"
#include "sentinel/checkpoint.hpp"
#include "sentinel/commands.hpp"
#include "sentinel/dataset_io.hpp"

using namespace sentinel;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("sentinel_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

RunConfig tiny_config(const fs::path& corpus, const fs::path& out) {
  auto c = RunConfig::from_text(
      "layers = 1\nheads = 2\nwidth = 16\nff = 32\ncontext = 32\n"
      "epochs = 2\nbatch_size = 4\nseed = 3\neval_fraction = 0\n");
  c.set("corpus", corpus.string());
  c.set("out_dir", out.string());
  return c;
}

int run(const std::string& cmd, const RunConfig& c, std::string* stdout_text = nullptr) {
  std::ostringstream out, log;
  const int code = run_command(cmd, c, out, log);
  if (stdout_text) *stdout_text = out.str();
  return code;
}

int shell(const std::string& args) {
  const std::string cmd = std::string(SENTINEL_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config text parsing") {
  const auto c = RunConfig::from_text("# comment\n  seed = 9  # trailing\n\nmode=origin\n");
  CHECK(c.get("seed") == "9");
  CHECK(c.get_int("seed") == 9);
  CHECK(c.mode() == RunMode::kOrigin);
  CHECK(c.get("epochs") == "5");

  CHECK_THROWS_AS(RunConfig::from_text("nonsense_key = 1\n"), std::invalid_argument);
  CHECK_THROWS_AS(RunConfig::from_text("seed 9\n"), std::invalid_argument);

  auto bad = RunConfig();
  bad.set("epochs", "many");
  CHECK_THROWS_AS(bad.resolved(), std::invalid_argument);
  bad = RunConfig();
  bad.set("mode", "both");
  CHECK_THROWS_AS(bad.resolved(), std::invalid_argument);
  bad = RunConfig();
  bad.set("sentences_per_chunk", "0");
  CHECK_THROWS_AS(bad.resolved(), std::invalid_argument);
  bad = RunConfig();
  bad.set("positional", "sinusoid");
  CHECK_THROWS_AS(bad.resolved(), std::invalid_argument);
}

TEST_CASE("auto values and the config hash") {
  RunConfig c;
  CHECK(c.resolved().get("lr") == "0.001");
  CHECK(c.resolved().get("lora_alpha") == "16");
  c.set("mode", "lora");
  c.set("lora_rank", "4");
  CHECK(c.resolved().get("lr") == "5e-05");
  CHECK(c.resolved().get("lora_alpha") == "4");
  CHECK(c.experiment().lora);

  RunConfig a, b;
  b.set("out_dir", "elsewhere");
  CHECK(a.hash() == b.hash());
  b.set("seed", "1");
  CHECK(a.hash() != b.hash());
  CHECK(a.hash_hex().size() == 16);

  // An explicit value equal to the auto resolution hashes the same.
  RunConfig explicit_lr;
  explicit_lr.set("lr", "0.001");
  CHECK(explicit_lr.hash() == a.hash());
}

TEST_CASE("the config hash follows input content, not location") {
  const auto dir = fresh_dir("hash");
  fs::create_directories(dir / "x");
  fs::create_directories(dir / "y");
  for (const char* sub : {"x", "y"}) std::ofstream(dir / sub / "c.txt") << "A B . C D .\n";
  std::ofstream(dir / "other.txt") << "A B .\n";
  RunConfig a, b, c, missing;
  a.set("corpus", (dir / "x" / "c.txt").string());
  b.set("corpus", (dir / "y" / "c.txt").string());
  c.set("corpus", (dir / "other.txt").string());
  missing.set("corpus", (dir / "absent.txt").string());
  CHECK(a.hash() == b.hash());
  CHECK(a.hash() != c.hash());
  CHECK(a.hash() != missing.hash());
}

TEST_CASE("prepare writes the worked example") {
  const auto dir = fresh_dir("prepare");
  spit(dir / "doc.txt", "A B . C D .\n");
  auto cfg = tiny_config(dir / "doc.txt", dir / "out");
  cfg.set("mask_dump", "1");
  REQUIRE(run("prepare", cfg) == 0);

  const auto vocab = Vocab::load(dir / "out" / "vocab.txt");
  CHECK(vocab.tokens() == std::vector<std::string>{"<unk>", "<eos>", "<sr>", ".", "A", "B", "C", "D"});

  const auto line = slurp(dir / "out" / "train.jsonl");
  CHECK(line.find("-100") != std::string::npos);
  const auto j = json::parse(line);
  CHECK(j["tokens"] == json({4, 5, 3, 2, 6, 7, 3, 1, 2}));
  CHECK(j["sentinel_flags"] == json({0, 0, 0, 1, 0, 0, 0, 0, 1}));
  CHECK(j["position_ids"] == json({0, 1, 2, 2, 3, 4, 5, 6, 6}));
  CHECK(j["labels"] == json({5, 3, 6, -100, 7, 3, 1, -100, -100}));
  CHECK(j["chunk_ids"] == json({0, 0, 0, 0, 1, 1, 1, 1, 1}));
  CHECK(j["config_hash"] == cfg.hash_hex());

  CHECK(slurp(dir / "out" / "masks" / "train_0.txt") ==
        "100000000\n110000000\n111000000\n111100000\n111110000\n"
        "111111000\n111111100\n111111110\n000011111\n");

  const auto manifest = json::parse(slurp(dir / "out" / "manifest.json"));
  CHECK(manifest["train_sentinels"] == 2);
  CHECK(manifest["config_hash"] == cfg.hash_hex());
  CHECK(slurp(dir / "out" / "resolved_config.txt").starts_with("# config_hash " + cfg.hash_hex()));

  cfg.set("mode", "origin");
  cfg.set("out_dir", (dir / "origin").string());
  REQUIRE(run("prepare", cfg) == 0);
  const auto o = json::parse(slurp(dir / "origin" / "train.jsonl"));
  CHECK(o["tokens"] == json({4, 5, 3, 6, 7, 3, 1}));
  CHECK(o["labels"] == json({5, 3, 6, 7, 3, 1, -100}));
  CHECK(o["position_ids"] == json({0, 1, 2, 3, 4, 5, 6}));
}

TEST_CASE("validate accepts clean data and names the violated rule") {
  const auto dir = fresh_dir("validate");
  spit(dir / "doc.txt", "A B . C D .\n");
  auto cfg = tiny_config(dir / "doc.txt", dir / "out");
  REQUIRE(run("prepare", cfg) == 0);
  cfg.set("vocab", (dir / "out" / "vocab.txt").string());
  cfg.set("dataset", (dir / "out" / "train.jsonl").string());
  std::string text;
  CHECK(run("validate", cfg, &text) == 0);
  CHECK(text.starts_with("OK "));

  const json good = json::parse(slurp(dir / "out" / "train.jsonl"));
  struct Fault {
    std::string rule;
    std::function<void(json&)> edit;
  };
  const std::vector<Fault> faults = {
      {"schema", [](json& j) { j.erase("labels"); }},
      {"schema", [](json& j) { j["sentinel_flags"][0] = 2; }},
      {"schema", [](json& j) { j["tokens"][0] = "A"; }},
      {"array-lengths", [](json& j) { j["labels"].erase(j["labels"].size() - 1); }},
      {"non-empty", [](json& j) {
         for (const char* k : {"tokens", "sentinel_flags", "position_ids", "labels", "chunk_ids"}) j[k] = json::array();
       }},
      {"token-range", [](json& j) { j["tokens"][0] = 999; }},
      {"label-range", [](json& j) { j["labels"][0] = 999; }},
      {"flag-matches-token", [](json& j) { j["sentinel_flags"][0] = 1; }},
      {"chunk-ids-contiguous", [](json& j) {
         for (int i = 4; i < 9; ++i) j["chunk_ids"][i] = 2;
       }},
      {"sentinel-at-chunk-end", [](json& j) { j["chunk_ids"][3] = 1; }},
      {"chunk-non-empty", [](json& j) {
         j = {{"tokens", {2}}, {"sentinel_flags", {1}}, {"position_ids", {0}}, {"labels", {-100}}, {"chunk_ids", {0}}};
       }},
      {"sentinel-position-congruence", [](json& j) { j["position_ids"][3] = 3; }},
      {"ordinary-positions-consecutive", [](json& j) { j["position_ids"][4] = 9; }},
      {"label-not-sentinel", [](json& j) { j["labels"][0] = 2; }},
      {"sentinel-label-ignored", [](json& j) { j["labels"][3] = 6; }},
      {"label-next-ordinary", [](json& j) { j["labels"][2] = 7; }},
  };
  for (const auto& f : faults) {
    CAPTURE(f.rule);
    json bad = good;
    f.edit(bad);
    spit(dir / "bad.jsonl", good.dump() + "\n" + bad.dump() + "\n");
    cfg.set("dataset", (dir / "bad.jsonl").string());
    CHECK(run("validate", cfg, &text) == 1);
    CHECK(text.find("record 1 rule " + f.rule + "\n") != std::string::npos);
  }

  spit(dir / "bad.jsonl", "{not json\n");
  CHECK(run("validate", cfg, &text) == 1);
  CHECK(text.find("rule malformed-json") != std::string::npos);
  CHECK(validate_dataset(dir / "bad.jsonl", Vocab::load(dir / "out" / "vocab.txt")).bad_record == 0);
}

TEST_CASE("prepare is byte-identical across runs") {
  const auto dir = fresh_dir("determinism");
  spit(dir / "docs.txt", "The cat sat . It was warm !\n\nA dog ran . Then it slept .\n\nRain fell all day .\n");
  for (const char* mode : {"sentinel", "origin"}) {
    auto a = tiny_config(dir / "docs.txt", dir / "a");
    auto b = tiny_config(dir / "docs.txt", dir / "b");
    a.set("mode", mode);
    b.set("mode", mode);
    a.set("eval_fraction", "0.3");
    b.set("eval_fraction", "0.3");
    REQUIRE(run("prepare", a) == 0);
    REQUIRE(run("prepare", b) == 0);
    for (const char* f : {"train.jsonl", "eval.jsonl", "vocab.txt", "manifest.json"})
      CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
  }
}

TEST_CASE("train, eval and probe end to end") {
  const auto dir = fresh_dir("e2e");
  auto synth = RunConfig();
  synth.set("synth_kind", "kv");
  synth.set("synth_docs", "40");
  synth.set("out_dir", (dir / "synth").string());
  REQUIRE(run("synth", synth) == 0);

  auto cfg = tiny_config(dir / "synth" / "corpus.txt", dir / "data");
  cfg.set("context", "64");
  cfg.set("eval_fraction", "0.1");
  REQUIRE(run("prepare", cfg) == 0);
  cfg.set("vocab", (dir / "data" / "vocab.txt").string());
  cfg.set("dataset", (dir / "data" / "train.jsonl").string());
  cfg.set("eval_dataset", (dir / "data" / "eval.jsonl").string());

  for (const char* out : {"t1", "t2"}) {
    cfg.set("out_dir", (dir / out).string());
    REQUIRE(run("train", cfg) == 0);
  }
  CHECK(read_bytes(dir / "t1" / "checkpoint.bin") == read_bytes(dir / "t2" / "checkpoint.bin"));
  CHECK(slurp(dir / "t1" / "train_report.json") == slurp(dir / "t2" / "train_report.json"));
  const auto report = json::parse(slurp(dir / "t1" / "train_report.json"));
  CHECK(report["epoch_loss"].size() == 2);
  CHECK(report["config_hash"] == cfg.hash_hex());

  cfg.set("checkpoint", (dir / "t1" / "checkpoint.bin").string());
  cfg.set("out_dir", (dir / "ev").string());
  std::string text;
  REQUIRE(run("eval", cfg, &text) == 0);
  CHECK(text.starts_with("sentinel PPL "));
  const auto ev = json::parse(slurp(dir / "ev" / "eval_result.json"));
  CHECK(ev["token_count"].get<long>() > 0);
  CHECK(ev["perplexity"].get<double>() > 1.0);

  cfg.set("out_dir", (dir / "probe").string());
  cfg.set("probe_samples", "2");
  REQUIRE(run("probe", cfg) == 0);
  const auto csv = slurp(dir / "probe" / "probe_000.csv");
  CHECK(csv.starts_with("pos,sr_0,sr_1,sr_2,sr_3,sr_4,sr_5,argmax,gold\n"));
  CHECK(fs::exists(dir / "probe" / "probe_001.csv"));
  CHECK(json::parse(slurp(dir / "probe" / "probe_summary.json"))["samples"].size() == 2);

  // LoRA on top of the trained base keeps every frozen tensor bit-identical.
  cfg.set("mode", "lora");
  cfg.set("lora_rank", "2");
  cfg.set("epochs", "1");
  cfg.set("init_checkpoint", (dir / "t1" / "checkpoint.bin").string());
  cfg.set("out_dir", (dir / "lora").string());
  REQUIRE(run("train", cfg) == 0);
  const auto lora = json::parse(slurp(dir / "lora" / "train_report.json"));
  CHECK(lora["frozen_checksum_before"] == lora["frozen_checksum_after"]);
  CHECK(lora["trainable_parameters"] == 2 * 1 * 4 * 2 * 16 + 16);

  // A sentinel dataset cannot be trained in origin mode.
  cfg.set("mode", "origin");
  cfg.set("init_checkpoint", "");
  CHECK_THROWS_AS(run("train", cfg), std::invalid_argument);
}

TEST_CASE("compare and sweep commands") {
  const auto dir = fresh_dir("compare");
  auto synth = RunConfig();
  synth.set("synth_bytes", "3000");
  synth.set("out_dir", (dir / "synth").string());
  REQUIRE(run("synth", synth) == 0);
  auto cfg = tiny_config(dir / "synth" / "corpus.txt", dir / "cmp");
  cfg.set("context", "64");
  cfg.set("epochs", "1");
  cfg.set("eval_fraction", "0.2");
  cfg.set("compare", "true");
  std::string text;
  REQUIRE(run("eval", cfg, &text) == 0);
  CHECK(text.find("Origin") != std::string::npos);
  const auto cmp = json::parse(slurp(dir / "cmp" / "compare.json"));
  CHECK(cmp["origin"]["eval"]["token_count"] == cmp["sentinel"]["eval"]["token_count"]);

  cfg.set("out_dir", (dir / "sweep").string());
  cfg.set("sweep_n", "1,3");
  REQUIRE(run("sweep", cfg, &text) == 0);
  CHECK(json::parse(slurp(dir / "sweep" / "sweep.json"))["rows"].size() == 2);
  CHECK(text.starts_with("#Sentences"));
}

TEST_CASE("executable exit codes") {
  const auto dir = fresh_dir("exe");
  spit(dir / "doc.txt", "A B . C D .\n");
  spit(dir / "good.cfg", "eval_fraction = 0\nout_dir = " + (dir / "out").string() + "\ncorpus = " +
                             (dir / "doc.txt").string() + "\n");
  spit(dir / "bad.cfg", "no_such_key = 1\n");
  CHECK(shell("prepare --config " + (dir / "good.cfg").string()) == 0);
  CHECK(shell("validate --config " + (dir / "good.cfg").string() + " --vocab " + (dir / "out" / "vocab.txt").string() +
              " --dataset " + (dir / "out" / "train.jsonl").string()) == 0);
  spit(dir / "broken.jsonl", "{\"tokens\": [1]}\n");
  CHECK(shell("validate --vocab " + (dir / "out" / "vocab.txt").string() + " --dataset " +
              (dir / "broken.jsonl").string()) == 1);
  CHECK(shell("prepare --config " + (dir / "bad.cfg").string()) == 2);
  CHECK(shell("train") == 2);  // missing vocab
  CHECK(shell("prepare --no-such-flag 1") != 0);
  CHECK(shell("") != 0);
}
