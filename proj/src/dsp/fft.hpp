#pragma once

// Thin FFTW wrappers. Plan creation/destruction in FFTW is not thread-safe,
// so it is serialised here; execution runs unlocked.

#include <complex>
#include <cstddef>
#include <vector>

namespace deepself::dsp::detail {

/// One-sided DFT of a real sequence: n/2 + 1 bins, unnormalised.
std::vector<std::complex<double>> rfft(const std::vector<double>& input);

/// Full complex DFT, unnormalised. `inverse` uses the +i exponent.
std::vector<std::complex<double>> fft(const std::vector<std::complex<double>>& input, bool inverse);

}  // namespace deepself::dsp::detail
