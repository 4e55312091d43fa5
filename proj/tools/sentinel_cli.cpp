#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"

#include "sentinel/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Sentinel-token chunk aggregation toolkit"};
  app.require_subcommand(1);

  const std::map<std::string, std::string> descriptions = {
      {"prepare", "chunk, inject sentinels and write JSONL datasets plus vocab"},
      {"validate", "re-check every sentinel and mask rule in prepared datasets"},
      {"train", "train a model on a prepared dataset"},
      {"eval", "sentinel-excluded perplexity, or origin-vs-sentinel comparison with --compare true"},
      {"sweep", "train and evaluate for each sentences-per-chunk value"},
      {"probe", "attention from question positions to sentinel columns (CSV)"},
      {"synth", "write a synthetic text or key-value corpus"},
  };

  std::string config_path;
  std::map<std::string, std::string> overrides;
  for (const auto& [name, text] : descriptions) {
    auto* sub = app.add_subcommand(name, text);
    sub->add_option("--config", config_path, "flat key=value config file");
    for (const auto& [key, fallback] : sentinel::RunConfig::defaults()) {
      sub->add_option_function<std::string>(
          "--" + key, [&overrides, key = key](const std::string& v) { overrides[key] = v; },
          "default: " + (fallback.empty() ? std::string("(none)") : fallback));
    }
  }

  CLI11_PARSE(app, argc, argv);

  try {
    sentinel::RunConfig config =
        config_path.empty() ? sentinel::RunConfig() : sentinel::RunConfig::from_file(config_path);
    for (const auto& [key, value] : overrides) config.set(key, value);
    return sentinel::run_command(app.get_subcommands().front()->get_name(), config, std::cout, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
