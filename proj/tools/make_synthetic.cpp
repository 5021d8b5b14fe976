// Writes the bundled two-class sine dataset: one CSV series per sample plus
// manifest.csv with label, split and fold columns.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "deepself/synthetic.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
  CLI::App app{"generate the synthetic sine dataset"};
  std::string out = "data/synthetic";
  std::size_t per_class = 40;
  std::uint64_t seed = 1;
  double low = 5, high = 10;
  app.add_option("--output-dir", out, "target directory");
  app.add_option("--per-class", per_class, "samples per class");
  app.add_option("--seed", seed, "noise and phase seed");
  app.add_option("--low-hz", low, "frequency of class 'low'");
  app.add_option("--high-hz", high, "frequency of class 'high'");
  CLI11_PARSE(app, argc, argv);

  deepself::synthetic::SineTask task;
  task.frequencies_hz = {low, high};
  fs::create_directories(out);
  std::ofstream manifest(fs::path(out) / "manifest.csv");
  manifest << "path,label,split,fold\n";
  const char* splits[] = {"train", "train", "train", "dev", "test"};
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const std::size_t cls = i % 2;
    const auto x = deepself::synthetic::noisy_sine(task.frequencies_hz[cls], task, seed * 100003 + i);
    const auto name = fmt::format("s{:03d}.csv", i);
    std::ofstream f(fs::path(out) / name);
    for (double v : x) f << fmt::format("{:.6f}\n", v);
    const std::size_t fold = (i / 2) % 5;
    manifest << fmt::format("{},{},{},{}\n", name, cls == 0 ? "low" : "high", splits[fold], fold);
  }
  std::cout << fmt::format("wrote {} samples to {}\n", 2 * per_class, out);
  return 0;
}
