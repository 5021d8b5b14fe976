#pragma once

// Seeded toy tasks: noisy sines and XOR.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "deepself/trainer.hpp"

namespace deepself::synthetic {

struct SineTask {
  std::vector<double> frequencies_hz;  // one class per frequency
  double sample_rate = 100.0;
  double seconds = 1.0;
  double noise_sigma = 0.2;
};

/// One sine of the given frequency with a uniform random phase and Gaussian
/// noise.
std::vector<double> noisy_sine(double frequency_hz, const SineTask& task, std::uint64_t seed);

/// `per_class` samples of each class, classes interleaved; samples are [1 x N].
Dataset sine_dataset(const SineTask& task, std::size_t per_class, std::uint64_t seed);

/// Four XOR points as [2] vectors, labels 0/1.
Dataset xor_dataset();

}  // namespace deepself::synthetic
