#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "deepself/dsp.hpp"
#include "deepself/error.hpp"

using namespace deepself;
using namespace deepself::dsp;

namespace {

constexpr double kPi = std::numbers::pi;

// Direct evaluation of the cascade on the unit circle from raw coefficients.
double cascade_gain_db(const FilterCascade& c, double f) {
  std::complex<double> h = 1.0;
  const std::complex<double> z = std::exp(std::complex<double>(0.0, 2.0 * kPi * f / c.sample_rate));
  for (const auto& s : c.sections) {
    h *= (s.b0 * z * z + s.b1 * z + s.b2) / (z * z + s.a1 * z + s.a2);
  }
  return 20.0 * std::log10(std::abs(h));
}

// Analog Butterworth band-pass magnitude at the prewarped frequency.
double analog_prototype_gain_db(double f, double lo, double hi, double fs) {
  auto warp = [fs](double x) { return 2.0 * fs * std::tan(kPi * x / fs); };
  const double w = warp(f), wl = warp(lo), wh = warp(hi);
  const double ratio = (w * w - wl * wh) / (w * (wh - wl));
  return -10.0 * std::log10(1.0 + std::pow(ratio, 8));
}

Signal sine(double freq, double fs, std::size_t n, double amplitude = 1.0) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = amplitude * std::sin(2.0 * kPi * freq * static_cast<double>(i) / fs);
  return Signal::mono(std::move(x), fs);
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("deepself_test_dsp_" + name);
}

}  // namespace

TEST_CASE("butterworth band-pass hits -3.01 dB at both cutoffs") {
  const auto c = design_butterworth_bandpass(0.5, 30.0, 173.61);
  CHECK(c.sections.size() == 4);
  CHECK(c.prototype_order == 4);
  CHECK(cascade_gain_db(c, 30.0) == doctest::Approx(-3.0103).epsilon(0.05 / 3.0103));
  CHECK(std::abs(cascade_gain_db(c, 0.5) + 3.0103) <= 0.05);
  CHECK(std::abs(c.gain_db(30.0) + 3.0103) <= 0.05);
  CHECK(cascade_gain_db(c, 0.0) < -80.0);
  CHECK(cascade_gain_db(c, 173.61 / 2.0) < -60.0);
  // Whole response agrees with the prewarped analog prototype.
  for (double f = 0.1; f < 86.0; f += 0.7) {
    CHECK(std::abs(cascade_gain_db(c, f) - analog_prototype_gain_db(f, 0.5, 30.0, 173.61)) < 1e-6);
  }
}

TEST_CASE("butterworth design rejects bad cutoffs") {
  CHECK_THROWS_AS(design_butterworth_bandpass(30.0, 0.5, 173.61), ConfigError);
  CHECK_THROWS_AS(design_butterworth_bandpass(0.0, 10.0, 100.0), ConfigError);
  CHECK_THROWS_AS(design_butterworth_bandpass(1.0, 50.0, 100.0), ConfigError);
  try {
    design_butterworth_bandpass(30.0, 0.5, 173.61);
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("low must be < high") != std::string::npos);
  }
}

TEST_CASE("butterworth designs are stable across random valid triples") {
  std::mt19937 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const double fs = 50.0 + u(rng) * 48000.0;
    const double nyq = fs / 2.0;
    const double lo = nyq * (0.001 + 0.9 * u(rng));
    const double hi = lo + (nyq * 0.999 - lo) * (0.01 + 0.98 * u(rng));
    const auto c = design_butterworth_bandpass(lo, hi, fs);
    for (const auto& s : c.sections) {
      for (const auto& p : s.poles()) REQUIRE(std::abs(p) < 1.0);
    }
  }
}

TEST_CASE("apply_iir behaviour") {
  const double fs = 173.61;
  const auto c = design_butterworth_bandpass(0.5, 30.0, fs);

  auto zero = apply_iir(Signal::mono(std::vector<double>(500, 0.0), fs), c);
  for (double v : zero.channels[0]) CHECK(v == 0.0);

  const std::size_t n = 20000;
  auto dc = apply_iir(Signal::mono(std::vector<double>(n, 1.0), fs), c);
  CHECK(dc.length() == n);
  double tail = 0.0;
  for (std::size_t i = n - n / 10; i < n; ++i) tail = std::max(tail, std::abs(dc.channels[0][i]));
  CHECK(tail < 1e-3);

  std::vector<double> impulse(n, 0.0);
  impulse[0] = 1.0;
  auto h = apply_iir(Signal::mono(impulse, fs), c);
  const auto settle = static_cast<std::size_t>(10.0 * fs / 0.5);
  double late = 0.0;
  for (std::size_t i = settle + 1; i < n; ++i) late = std::max(late, std::abs(h.channels[0][i]));
  CHECK(late < 1e-6);

  Signal two;
  two.sample_rate = fs;
  two.channels = {std::vector<double>(100, 1.0), std::vector<double>(100, 0.0)};
  auto out = apply_iir(two, c);
  CHECK(out.channels[1] == std::vector<double>(100, 0.0));
  for (std::size_t i = 0; i < 100; ++i) CHECK(out.channels[0][i] == dc.channels[0][i]);

  CHECK_THROWS_AS(apply_iir(Signal::mono(std::vector<double>(10, 0.0), 100.0), c), ConfigError);
}

TEST_CASE("spectrogram shape and tone location") {
  auto zero = spectrogram(Signal::mono(std::vector<double>(2048, 0.0), 16000.0), 1024, 256);
  for (double v : zero.values) CHECK(v == 0.0);

  auto one = spectrogram(Signal::mono(std::vector<double>(1024, 0.1), 16000.0), 1024, 512);
  CHECK(one.cols == 1);
  CHECK(one.rows == 513);
  CHECK(one.time_axis == 1);

  const auto tone = spectrogram(sine(440.0, 16000.0, 16000), 1024, 512);
  CHECK(tone.cols == 1 + (16000 - 1024) / 512);
  const auto expected_bin = static_cast<std::size_t>(std::lround(440.0 * 1024 / 16000.0));
  CHECK(expected_bin == 28);
  for (std::size_t t = 0; t < tone.cols; ++t) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < tone.rows; ++k)
      if (tone.at(k, t) > tone.at(best, t)) best = k;
    CHECK(best == 28);
  }
  CHECK(tone.seconds_per_frame == doctest::Approx(512.0 / 16000.0));

  CHECK_THROWS_AS(spectrogram(Signal::mono(std::vector<double>(100, 0.0), 8000.0), 128, 64), ConfigError);
  CHECK_THROWS_AS(spectrogram(Signal::mono(std::vector<double>(100, 0.0), 8000.0), 32, 64), ConfigError);
}

TEST_CASE("spectrogram matches a naive windowed DFT and respects the energy bound") {
  std::mt19937 rng(1);
  std::normal_distribution<double> g;
  const std::size_t n = 300, win = 60, hop = 60;
  std::vector<double> x(n);
  for (auto& v : x) v = g(rng);
  const auto map = spectrogram(Signal::mono(x, 1000.0), win, hop);
  double total = 0.0;
  for (std::size_t t = 0; t < map.cols; ++t) {
    for (std::size_t k = 0; k < map.rows; ++k) {
      std::complex<double> acc = 0.0;
      for (std::size_t i = 0; i < win; ++i) {
        const double w = 0.5 - 0.5 * std::cos(2.0 * kPi * double(i) / double(win));
        acc += x[t * hop + i] * w * std::exp(std::complex<double>(0.0, -2.0 * kPi * double(k * i) / double(win)));
      }
      CHECK(map.at(k, t) == doctest::Approx(std::norm(acc)).epsilon(1e-9));
      total += map.at(k, t);
    }
  }
  double energy = 0.0;
  for (double v : x) energy += v * v;
  CHECK(total <= double(win) * energy);
}

TEST_CASE("mel scale and filterbank") {
  CHECK(hz_to_mel(0.0) == 0.0);
  CHECK(std::abs(hz_to_mel(1000.0) - 2595.0 * std::log10(1.0 + 1000.0 / 700.0)) < 1e-12);
  CHECK(std::abs(hz_to_mel(1000.0) - 1000.0) <= 0.1);
  CHECK(mel_to_hz(hz_to_mel(1234.5)) == doctest::Approx(1234.5));

  for (std::size_t n_mels : {10u, 40u, 64u, 128u}) {
    const auto bank = mel_filterbank(n_mels, 257, 16000.0, 0.0, 8000.0);
    CHECK(bank.size() == n_mels);
    for (const auto& row : bank) {
      CHECK(row.size() == 257);
      CHECK(*std::max_element(row.begin(), row.end()) == 1.0);
      CHECK(std::count(row.begin(), row.end(), 1.0) == 1);
      for (double v : row) CHECK(v >= 0.0);
    }
  }
  CHECK_THROWS_AS(mel_filterbank(10, 257, 16000.0, 0.0, 9000.0), ConfigError);
  CHECK_THROWS_AS(mel_filterbank(10, 257, 16000.0, 500.0, 100.0), ConfigError);
  CHECK_THROWS_AS(mel_filterbank(0, 257, 16000.0, 0.0, 8000.0), ConfigError);
}

TEST_CASE("log-mel spectrogram") {
  auto zero = log_mel_spectrogram(Signal::mono(std::vector<double>(4000, 0.0), 16000.0), 400, 160, 40, 0.0, 8000.0);
  CHECK(zero.rows == 40);
  for (double v : zero.values) CHECK(v == doctest::Approx(std::log(1e-10)));
  CHECK(std::log(1e-10) == doctest::Approx(-23.026).epsilon(1e-4));

  std::mt19937 rng(4);
  std::normal_distribution<double> g;
  std::vector<double> x(4000);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.3 * std::sin(2.0 * kPi * 1000.0 * double(i) / 16000.0) + 0.05 * g(rng);
  std::vector<double> x2(x);
  for (auto& v : x2) v *= 2.0;
  const auto a = log_mel_spectrogram(Signal::mono(x, 16000.0), 400, 160, 40, 0.0, 8000.0);
  const auto b = log_mel_spectrogram(Signal::mono(x2, 16000.0), 400, 160, 40, 0.0, 8000.0);
  CHECK(a.row_axis.size() == 40);
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    CHECK(b.values[i] - a.values[i] <= std::log(4.0) + 1e-12);
    CHECK(b.values[i] >= a.values[i]);
  }
  for (std::size_t t = 0; t < a.cols; ++t) {
    std::size_t ba = 0, bb = 0;
    for (std::size_t r = 1; r < a.rows; ++r) {
      if (a.at(r, t) > a.at(ba, t)) ba = r;
      if (b.at(r, t) > b.at(bb, t)) bb = r;
    }
    CHECK(ba == bb);
  }
}

TEST_CASE("scalogram") {
  const double fs = 173.61;
  auto zero = scalogram(Signal::mono(std::vector<double>(512, 0.0), fs), 8, 1.0, 40.0);
  for (double v : zero.values) CHECK(v == 0.0);
  CHECK(zero.cols == 512);

  const auto map = scalogram(sine(10.0, fs, 1024), 8, 1.0, 40.0);
  CHECK(map.cols == 1024);
  CHECK(map.rows == static_cast<std::size_t>(std::floor(8 * std::log2(40.0)) + 1));
  CHECK(map.row_axis.front() == doctest::Approx(40.0));
  for (std::size_t r = 1; r < map.rows; ++r) CHECK(map.row_axis[r] < map.row_axis[r - 1]);
  std::size_t ridge = 0;
  double best = -1.0;
  for (std::size_t r = 0; r < map.rows; ++r) {
    double mean = 0.0;
    for (std::size_t t = 0; t < map.cols; ++t) mean += map.at(r, t);
    if (mean > best) {
      best = mean;
      ridge = r;
    }
  }
  CHECK(std::abs(std::log2(map.row_axis[ridge] / 10.0)) <= 1.0 / 8.0);

  std::mt19937 rng(8);
  std::normal_distribution<double> g;
  std::vector<double> x(300);
  for (auto& v : x) v = g(rng);
  std::vector<double> scaled(x);
  for (auto& v : scaled) v *= -3.5;
  const auto s1 = scalogram(Signal::mono(x, fs), 4, 2.0, 80.0);
  const auto s2 = scalogram(Signal::mono(scaled, fs), 4, 2.0, 80.0);
  for (std::size_t i = 0; i < s1.values.size(); ++i) {
    CHECK(std::abs(s2.values[i] - 3.5 * s1.values[i]) <= 1e-5 * std::max(1e-12, 3.5 * s1.values[i]) + 1e-12);
  }
  CHECK_THROWS_AS(scalogram(Signal::mono(x, fs), 8, 0.0, 40.0), ConfigError);
  CHECK_THROWS_AS(scalogram(Signal::mono(x, fs), 8, 1.0, 100.0), ConfigError);
}

TEST_CASE("feature maps keep time on the column axis") {
  const auto s = sine(5.0, 100.0, 400);
  CHECK(spectrogram(s, 50, 25).seconds_per_frame == doctest::Approx(0.25));
  CHECK(log_mel_spectrogram(s, 50, 25, 8, 0.0, 50.0).cols == 1 + (400 - 50) / 25);
  CHECK(scalogram(s, 8, 1.0, 50.0).cols == 400);
  CHECK(FeatureMap::time_axis == 1);
}

TEST_CASE("fit_length crops from the start and pads at the end") {
  auto s = Signal::mono({1, 2, 3, 4}, 10.0);
  CHECK(fit_length(s, 2).channels[0] == std::vector<double>{1, 2});
  CHECK(fit_length(s, 6).channels[0] == std::vector<double>{1, 2, 3, 4, 0, 0});
}

TEST_CASE("DSFM round trip and corruption") {
  FeatureMap m;
  m.rows = 2;
  m.cols = 3;
  m.values = {0.5, -1.25, 3.0, 4.0, 5.5, 6.0};
  m.row_axis = {10.0, 20.0};
  m.seconds_per_frame = 0.01;
  const auto path = temp_path("roundtrip.dsfm");
  write_feature_map(m, path);
  const auto back = read_feature_map(path);
  CHECK(back.rows == 2);
  CHECK(back.cols == 3);
  CHECK(back.values == m.values);
  CHECK(back.row_axis == m.row_axis);
  CHECK(back.seconds_per_frame == 0.01);
  CHECK(std::filesystem::file_size(path) == 4 + 4 + 4 + 4 + 8 + 2 * 8 + 6 * 4);

  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  CHECK(bytes.substr(0, 4) == "DSFM");
  CHECK(bytes[4] == 1);
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 3));
  }
  CHECK_THROWS_AS(read_feature_map(path), TruncatedFileError);
  bytes[0] = 'X';
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS_AS(read_feature_map(path), FormatError);
  std::filesystem::remove(path);
}
