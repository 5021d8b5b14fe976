#include "deepself/synthetic.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>

namespace deepself::synthetic {

std::vector<double> noisy_sine(double frequency_hz, const SineTask& task, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> noise(0.0, task.noise_sigma);
  const auto n = static_cast<std::size_t>(std::llround(task.sample_rate * task.seconds));
  const double phi = phase(rng);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / task.sample_rate;
    out[i] = std::sin(2.0 * std::numbers::pi * frequency_hz * t + phi) + noise(rng);
  }
  return out;
}

Dataset sine_dataset(const SineTask& task, std::size_t per_class, std::uint64_t seed) {
  Dataset data;
  const auto n = static_cast<std::size_t>(std::llround(task.sample_rate * task.seconds));
  data.sample_shape = {1, n};
  std::mt19937_64 seeds(seed);
  for (std::size_t i = 0; i < per_class; ++i) {
    for (std::size_t c = 0; c < task.frequencies_hz.size(); ++c) {
      const auto x = noisy_sine(task.frequencies_hz[c], task, seeds());
      const std::vector<float> xf(x.begin(), x.end());
      data.add("s" + std::to_string(data.size()), xf, c);
    }
  }
  return data;
}

Dataset xor_dataset() {
  Dataset data;
  data.sample_shape = {2};
  const float pts[4][2] = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
  const std::size_t labels[4] = {0, 1, 1, 0};
  for (int i = 0; i < 4; ++i) data.add("x" + std::to_string(i), pts[i], labels[i]);
  return data;
}

}  // namespace deepself::synthetic
