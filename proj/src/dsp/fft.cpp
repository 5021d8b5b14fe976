#include "fft.hpp"

#include <mutex>

#include <fftw3.h>

namespace deepself::dsp::detail {

namespace {

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

std::vector<std::complex<double>> rfft(const std::vector<double>& input) {
  const int n = static_cast<int>(input.size());
  std::vector<double> in(input);
  std::vector<std::complex<double>> out(input.size() / 2 + 1);
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_r2c_1d(n, in.data(), reinterpret_cast<fftw_complex*>(out.data()), FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  std::lock_guard lock(planner_mutex());
  fftw_destroy_plan(plan);
  return out;
}

std::vector<std::complex<double>> fft(const std::vector<std::complex<double>>& input, bool inverse) {
  const int n = static_cast<int>(input.size());
  std::vector<std::complex<double>> in(input);
  std::vector<std::complex<double>> out(input.size());
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_1d(n, reinterpret_cast<fftw_complex*>(in.data()), reinterpret_cast<fftw_complex*>(out.data()),
                            inverse ? FFTW_BACKWARD : FFTW_FORWARD, FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  std::lock_guard lock(planner_mutex());
  fftw_destroy_plan(plan);
  return out;
}

}  // namespace deepself::dsp::detail
