#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <set>

#include "deepself/cli.hpp"
#include "deepself/error.hpp"

using namespace deepself;
using namespace deepself::cli;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "deepself_test_cli";
  fs::create_directories(dir);
  return dir / name;
}

fs::path write_text(const std::string& name, const std::string& text) {
  const auto p = scratch(name);
  std::ofstream(p) << text;
  return p;
}

std::string config_error(const Settings& s) {
  try {
    resolve(s);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("every key has a section, a flag and a unique id") {
  std::set<std::string> ids, flags;
  for (const auto& k : known_keys()) {
    CHECK(ids.insert(k.id()).second);
    CHECK(flags.insert(k.flag).second);
    CHECK_FALSE(k.help.empty());
  }
  for (const auto* id : {"general.learning_rate", "general.batch_size", "general.epochs", "general.optimizer",
                         "model.type", "nn.hidden_layers", "nn.hidden_nodes", "cnn.channels", "cnn.kernel",
                         "cnn.stride", "cnn.padding", "rnn.type", "rnn.direction", "rnn.hidden_layers",
                         "rnn.hidden_nodes", "run.seed", "run.output_dir", "run.jobs"}) {
    CHECK(ids.count(id) == 1);
  }
}

TEST_CASE("read_ini parses sections and rejects unknown keys") {
  const auto s = read_ini(write_text("ok.cfg", "; comment\n[general]\nepochs = 3\noptimizer = sgd\n[model]\ntype = cnn+rnn\n"));
  CHECK(s.at("general.epochs") == "3");
  const auto c = resolve(s);
  CHECK(c.train.epochs == 3);
  CHECK(c.train.optimizer == Optimizer::sgd);
  CHECK(c.model_type == ModelType::cnn_rnn);
  CHECK_THROWS_AS(read_ini(write_text("bad.cfg", "[general]\nepoch = 3\n")), ConfigError);
  CHECK_THROWS_AS(read_ini(write_text("sec.cfg", "[gpu]\nid = 0\n")), ConfigError);
  CHECK_THROWS_AS(read_ini(scratch("absent.cfg")), ConfigError);
}

TEST_CASE("defaults resolve") {
  const auto c = resolve({});
  CHECK(c.train.optimizer == Optimizer::adam);
  CHECK(c.model_type == ModelType::nn);
  CHECK(c.rnn_type == CellKind::gru);
  CHECK(c.preprocess.feature == Feature::none);
  CHECK_FALSE(c.preprocess.filter);
}

TEST_CASE("out-of-domain values name the key and the domain") {
  CHECK(config_error({{"general.optimizer", "nadam"}}).find("{sgd, adam}") != std::string::npos);
  CHECK(config_error({{"model.type", "transformer"}}).find("{nn, cnn, rnn, cnn+rnn}") != std::string::npos);
  CHECK(config_error({{"rnn.type", "tcn"}}).find("{rnn, lstm, gru}") != std::string::npos);
  CHECK(config_error({{"rnn.direction", "both"}}).find("{uni, bi}") != std::string::npos);
  CHECK(config_error({{"model.activation", "gelu"}}).find("{relu, sigmoid, tanh}") != std::string::npos);
  CHECK(config_error({{"general.epochs", "0"}}).find("positive integer") != std::string::npos);
  CHECK(config_error({{"general.batch_size", "-4"}}).find("--batch-size") != std::string::npos);
  CHECK(config_error({{"general.learning_rate", "0"}}).find("positive real") != std::string::npos);
  CHECK(config_error({{"nn.hidden_layers", "1.5"}}).find("positive integer") != std::string::npos);
  CHECK(config_error({{"rnn.hidden_nodes", "abc"}}).find("positive integer") != std::string::npos);
  CHECK(config_error({{"cnn.kernel", "3,0"}}).find("positive integer") != std::string::npos);
  CHECK(config_error({{"cnn.channels", "4,8,8"}}).find("one entry per layer") != std::string::npos);
  CHECK(config_error({{"data.dev_fraction", "1"}}).find("below 1") != std::string::npos);
  CHECK(config_error({{"preprocess.filter", "on"}, {"preprocess.low_hz", "30"}, {"preprocess.high_hz", "0.5"}})
            .find("low must be < high") != std::string::npos);
  CHECK_THROWS_AS(resolve({{"nowhere.key", "1"}}), ContractError);
}

TEST_CASE("comma lists tolerate spaces and zero padding") {
  const auto c = resolve({{"cnn.channels", "4, 8"}, {"cnn.kernel", "3,3"}, {"cnn.stride", "1,2"}, {"cnn.padding", "0, 1"}});
  CHECK(c.cnn_channels == std::vector<std::size_t>{4, 8});
  CHECK(c.cnn_padding == std::vector<std::size_t>{0, 1});
}

TEST_CASE("preprocess_settings keeps only input preparation keys") {
  const auto s = preprocess_settings({{"preprocess.feature", "logmel"}, {"data.sample_rate", "100"},
                                      {"data.manifest", "m.csv"}, {"general.epochs", "3"}});
  CHECK(s.size() == 2);
  CHECK(s.count("preprocess.feature") == 1);
  CHECK(s.count("data.sample_rate") == 1);
}

TEST_CASE("build_model_spec per model type") {
  auto c = resolve({{"model.type", "nn"}, {"nn.hidden_layers", "2"}, {"nn.hidden_nodes", "5"}});
  auto spec = build_model_spec(c, {1, 100}, 3);
  CHECK(spec.input_shape == Shape{100});
  REQUIRE(spec.layers.size() == 3);
  CHECK(std::get<DenseLayer>(spec.layers[2]).units == 3);

  c = resolve({{"model.type", "cnn"}, {"cnn.channels", "4"}, {"cnn.kernel", "3"}, {"cnn.stride", "2"}, {"cnn.padding", "1"}});
  spec = build_model_spec(c, {1, 20, 30}, 2);
  const auto& conv = std::get<ConvLayer>(spec.layers[0]);
  CHECK(conv.kernel == std::vector<std::size_t>{3, 3});
  CHECK(plan_shapes(spec).layers.back().output == Shape{2});

  c = resolve({{"model.type", "rnn"}, {"rnn.direction", "bi"}, {"rnn.hidden_layers", "2"}});
  spec = build_model_spec(c, {17, 40}, 2);
  const auto& rec = std::get<RecurrentLayer>(spec.layers[0]);
  CHECK(rec.layers == 2);
  CHECK(rec.direction == Direction::bi);
  CHECK(spec.layers.size() == 2);

  c = resolve({{"model.type", "cnn+rnn"}, {"cnn.channels", "4"}, {"cnn.kernel", "5"}, {"cnn.stride", "2"}, {"cnn.padding", "2"}});
  spec = build_model_spec(c, {1, 100}, 2);
  CHECK(spec.layers.size() == 3);
  CHECK(std::holds_alternative<RecurrentLayer>(spec.layers[1]));

  c = resolve({{"model.type", "cnn"}, {"cnn.channels", "4"}, {"cnn.kernel", "9"}, {"cnn.stride", "1"}, {"cnn.padding", "0"}});
  CHECK_THROWS_AS(build_model_spec(c, {1, 4}, 2), ConfigError);
}

TEST_CASE("prepare_sample dispatches on the file type") {
  std::string series;
  for (int i = 0; i < 256; ++i) series += std::to_string(std::sin(i * 0.3)) + "," + std::to_string(std::cos(i * 0.1)) + "\n";
  const auto csv = write_text("two.csv", series);

  PreprocessConfig p;
  CHECK_THROWS_AS(prepare_sample(csv, p), ConfigError);
  p.sample_rate = 100;
  const auto raw = prepare_sample(csv, p);
  CHECK(raw.rows == 2);
  CHECK(raw.cols == 256);
  CHECK(sample_shape_of(raw, Feature::none) == Shape{2, 256});

  p.feature = Feature::logmel;
  p.window = 64;
  p.hop = 32;
  p.n_mels = 10;
  const auto mel = prepare_sample(csv, p);
  CHECK(mel.rows == 20);
  CHECK(mel.cols == 7);
  CHECK(sample_shape_of(mel, Feature::logmel) == Shape{1, 20, 7});

  p.fixed_length = 128;
  CHECK(prepare_sample(csv, p).cols == 3);

  p.filter = true;
  p.low_hz = 60;
  p.high_hz = 70;
  CHECK_THROWS_AS(prepare_sample(csv, p), ConfigError);

  const auto img = write_text("i.pgm", "P2 3 2 4\n0 1 2\n3 4 4\n");
  const auto m = prepare_sample(img, PreprocessConfig{});
  CHECK(sample_shape_of(m, Feature::logmel) == Shape{1, 2, 3});
  CHECK_THROWS_AS(prepare_sample(write_text("x.mp3", "ID3"), p), UnsupportedFormatError);
}

TEST_CASE("load_dataset maps labels by name and checks shapes") {
  write_text("a.csv", "1\n2\n3\n");
  write_text("b.csv", "4\n5\n6\n");
  write_text("c.csv", "4\n5\n");
  PreprocessConfig p;
  p.sample_rate = 10;
  const auto m = data::load_manifest(write_text("m.csv", "path,label\na.csv,x\nb.csv,y\n"));
  const auto d = load_dataset(m, {0, 1}, {"y", "x"}, p, 2);
  CHECK(d.labels == std::vector<std::size_t>{1, 0});
  CHECK(d.sample_shape == Shape{1, 3});
  CHECK(d.ids == std::vector<std::string>{"a.csv", "b.csv"});
  CHECK_THROWS_AS(load_dataset(m, {0, 1}, {"x"}, p, 1), IndexError);

  const auto ragged = data::load_manifest(write_text("r.csv", "path,label\na.csv,x\nc.csv,y\n"));
  CHECK_THROWS_AS(load_dataset(ragged, {0, 1}, {"x", "y"}, p, 1), ShapeError);
  p.fixed_length = 3;
  CHECK(load_dataset(ragged, {0, 1}, {"x", "y"}, p, 1).size() == 2);
}
