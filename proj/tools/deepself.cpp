// deepself: preprocess / train / evaluate / predict / fuse from a config file
// plus flag overrides.

#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "deepself/cli.hpp"
#include "deepself/error.hpp"

namespace cli = deepself::cli;

namespace {

struct Overrides {
  std::optional<std::string> config;
  std::map<std::string, std::string> values;
};

void add_key_flags(CLI::App& sub, Overrides& o) {
  sub.add_option("--config", o.config, "INI config file (flags override its values)");
  for (const auto& k : cli::known_keys()) {
    auto* opt = sub.add_option_function<std::string>(
        "--" + k.flag, [&o, id = k.id()](const std::string& v) { o.values[id] = v; },
        fmt::format("[{}] {}: {}", k.section, k.key, k.help));
    if (k.choices.empty()) {
      opt->type_name("VALUE");
    } else {
      opt->check(CLI::IsMember(k.choices).description(""))
        ->type_name(fmt::format("{{{}}}", fmt::join(k.choices, ",")));
    }
  }
}

cli::Settings merged(const Overrides& o) {
  cli::Settings s = o.config ? cli::read_ini(*o.config) : cli::Settings{};
  for (const auto& [id, v] : o.values) s[id] = v;
  return s;
}

void configure_logging() {
  auto logger = spdlog::stderr_color_mt("deepself");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  const char* env = std::getenv("DEEPSELF_LOG");
  const std::string level = env ? env : "error";
  if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else if (level == "info") {
    spdlog::set_level(spdlog::level::info);
  } else {
    if (level != "error") std::cerr << "warning: DEEPSELF_LOG must be one of {error, info, debug}, got '" << level << "'\n";
    spdlog::set_level(spdlog::level::err);
  }
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"deepself: deep learning pipelines for signals and images"};
  app.require_subcommand(1);

  Overrides pre_o, train_o, eval_o, pred_o;
  auto* pre = app.add_subcommand("preprocess", "write one DSFM feature map per manifest row plus a derived manifest");
  add_key_flags(*pre, pre_o);

  auto* tr = app.add_subcommand("train", "train a model; writes best.ckpt and history.csv");
  add_key_flags(*tr, train_o);
  std::optional<std::string> init_checkpoint;
  bool freeze = false;
  tr->add_option("--init-checkpoint", init_checkpoint, "fine-tune from this checkpoint instead of a fresh model");
  tr->add_flag("--freeze-backbone", freeze, "with --init-checkpoint, train only the output layer");

  auto* ev = app.add_subcommand("evaluate", "confusion matrix and UAR of a checkpoint, or k-fold cross-validation");
  add_key_flags(*ev, eval_o);
  std::optional<std::string> eval_checkpoint;
  bool cv = false;
  ev->add_option("--checkpoint", eval_checkpoint, "checkpoint to evaluate");
  ev->add_flag("--cv", cv, "cross-validate over the manifest fold column");

  auto* pr = app.add_subcommand("predict", "write id,label,prob_* for every manifest row");
  add_key_flags(*pr, pred_o);
  std::string pred_checkpoint;
  pr->add_option("--checkpoint", pred_checkpoint, "checkpoint to predict with")->required();

  auto* fu = app.add_subcommand("fuse", "fuse prediction files into fused.csv");
  std::vector<std::string> inputs;
  std::string mode = "mean";
  std::string fuse_out = "deepself_out";
  fu->add_option("inputs", inputs, "prediction CSV files")->required();
  fu->add_option("--mode", mode, "fusion rule")->check(CLI::IsMember({"mean", "vote"}).description(""))->type_name("{mean,vote}");
  fu->add_option("--output-dir", fuse_out, "directory that receives fused.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*fu) {
      std::vector<cli::fs::path> paths(inputs.begin(), inputs.end());
      return cli::cmd_fuse(paths, deepself::parse_fusion_mode(mode), fuse_out);
    }
    if (*pre) {
      const auto s = merged(pre_o);
      return cli::cmd_preprocess(cli::resolve(s), s);
    }
    if (*tr) {
      const auto s = merged(train_o);
      const auto config = cli::resolve(s);
      std::optional<cli::fs::path> init;
      if (init_checkpoint) init = *init_checkpoint;
      return cli::cmd_train(config, s, init, freeze);
    }
    if (*ev) {
      const auto config = cli::resolve(merged(eval_o));
      std::optional<cli::fs::path> ck;
      if (eval_checkpoint) ck = *eval_checkpoint;
      return cli::cmd_evaluate(config, ck, cv);
    }
    if (*pr) return cli::cmd_predict(cli::resolve(merged(pred_o)), pred_checkpoint);
  } catch (const deepself::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
