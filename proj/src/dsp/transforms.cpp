#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "deepself/dsp.hpp"
#include "deepself/error.hpp"
#include "fft.hpp"

namespace deepself::dsp {

std::string to_string(RowAxis axis) {
  switch (axis) {
    case RowAxis::frequency_hz: return "frequency_hz";
    case RowAxis::mel_center_hz: return "mel_center_hz";
    case RowAxis::scale_frequency_hz: return "scale_frequency_hz";
    case RowAxis::channel_index: return "channel_index";
    case RowAxis::image_row: return "image_row";
  }
  return "unknown";
}

namespace {

const std::vector<double>& single_channel(const Signal& signal, const char* who) {
  signal.validate();
  if (signal.channel_count() != 1) {
    throw ConfigError(fmt::format("{} expects a single-channel signal, got {} channels", who, signal.channel_count()));
  }
  return signal.channels.front();
}

}  // namespace

FeatureMap spectrogram(const Signal& signal, std::size_t window_len, std::size_t hop) {
  const auto& x = single_channel(signal, "spectrogram");
  const std::size_t n = x.size();
  if (hop == 0 || hop > window_len) {
    throw ConfigError(fmt::format("spectrogram hop must satisfy 0 < hop <= window ({}), got {}", window_len, hop));
  }
  if (window_len > n) {
    throw ConfigError(fmt::format("spectrogram window of {} samples is longer than the signal ({})", window_len, n));
  }
  const std::size_t frames = 1 + (n - window_len) / hop;
  const std::size_t bins = window_len / 2 + 1;

  std::vector<double> window(window_len);
  for (std::size_t i = 0; i < window_len; ++i) {
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(window_len));
  }

  FeatureMap map;
  map.rows = bins;
  map.cols = frames;
  map.values.assign(bins * frames, 0.0);
  map.row_axis_kind = RowAxis::frequency_hz;
  map.seconds_per_frame = static_cast<double>(hop) / signal.sample_rate;
  map.row_axis.resize(bins);
  for (std::size_t k = 0; k < bins; ++k) {
    map.row_axis[k] = static_cast<double>(k) * signal.sample_rate / static_cast<double>(window_len);
  }

  std::vector<double> frame(window_len);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t i = 0; i < window_len; ++i) frame[i] = x[t * hop + i] * window[i];
    const auto spectrum = detail::rfft(frame);
    for (std::size_t k = 0; k < bins; ++k) map.values[k * frames + t] = std::norm(spectrum[k]);
  }
  return map;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

void check_mel_range(std::size_t n_mels, double fmin_hz, double fmax_hz, double sample_rate) {
  if (n_mels == 0) throw ConfigError("n_mels must be >= 1");
  if (!(fmin_hz >= 0.0) || !(fmin_hz < fmax_hz) || fmax_hz > sample_rate / 2.0 + 1e-9) {
    throw ConfigError(fmt::format("mel range must satisfy 0 <= fmin < fmax <= {} Hz, got [{}, {}]", sample_rate / 2.0,
                                  fmin_hz, fmax_hz));
  }
}

// n_mels + 2 edge frequencies equally spaced on the mel scale.
std::vector<double> mel_edges(std::size_t n_mels, double fmin_hz, double fmax_hz) {
  const double lo = hz_to_mel(fmin_hz);
  const double hi = hz_to_mel(fmax_hz);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  }
  return edges;
}

}  // namespace

std::vector<double> mel_centers(std::size_t n_mels, double fmin_hz, double fmax_hz) {
  auto edges = mel_edges(n_mels, fmin_hz, fmax_hz);
  return {edges.begin() + 1, edges.end() - 1};
}

std::vector<std::vector<double>> mel_filterbank(std::size_t n_mels, std::size_t n_fft_bins, double sample_rate,
                                                double fmin_hz, double fmax_hz) {
  check_mel_range(n_mels, fmin_hz, fmax_hz, sample_rate);
  if (n_fft_bins < 2) throw ConfigError("mel filterbank needs at least 2 FFT bins");
  const auto edges = mel_edges(n_mels, fmin_hz, fmax_hz);
  const double bin_hz = sample_rate / (2.0 * static_cast<double>(n_fft_bins - 1));

  std::vector<std::vector<double>> bank(n_mels, std::vector<double>(n_fft_bins, 0.0));
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    auto& row = bank[m];
    for (std::size_t k = 0; k < n_fft_bins; ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      const double rise = (f - left) / (center - left);
      const double fall = (right - f) / (right - center);
      row[k] = std::max(0.0, std::min(rise, fall));
    }
    // Rescale so the sampled triangle peaks at exactly 1. A triangle narrower
    // than one bin gets its nearest bin.
    const auto peak = std::max_element(row.begin(), row.end());
    if (*peak > 0.0) {
      const double scale = *peak;
      for (auto& v : row) v /= scale;
      *peak = 1.0;
    } else {
      const auto nearest = static_cast<std::size_t>(std::lround(center / bin_hz));
      row[std::min(nearest, n_fft_bins - 1)] = 1.0;
    }
  }
  return bank;
}

FeatureMap log_mel_spectrogram(const Signal& signal, std::size_t window_len, std::size_t hop, std::size_t n_mels,
                               double fmin_hz, double fmax_hz) {
  check_mel_range(n_mels, fmin_hz, fmax_hz, signal.sample_rate);
  const FeatureMap power = spectrogram(signal, window_len, hop);
  const auto bank = mel_filterbank(n_mels, power.rows, signal.sample_rate, fmin_hz, fmax_hz);

  FeatureMap map;
  map.rows = n_mels;
  map.cols = power.cols;
  map.values.assign(n_mels * power.cols, 0.0);
  map.row_axis = mel_centers(n_mels, fmin_hz, fmax_hz);
  map.row_axis_kind = RowAxis::mel_center_hz;
  map.seconds_per_frame = power.seconds_per_frame;
  for (std::size_t m = 0; m < n_mels; ++m) {
    for (std::size_t t = 0; t < power.cols; ++t) {
      double acc = 0.0;
      for (std::size_t k = 0; k < power.rows; ++k) acc += bank[m][k] * power.at(k, t);
      map.values[m * map.cols + t] = std::log(acc + log_floor);
    }
  }
  return map;
}

FeatureMap scalogram(const Signal& signal, std::size_t n_voices, double fmin_hz, double fmax_hz) {
  const auto& x = single_channel(signal, "scalogram");
  const double fs = signal.sample_rate;
  if (n_voices == 0) throw ConfigError("scalogram needs at least one voice per octave");
  if (!(fmin_hz > 0.0) || !(fmin_hz < fmax_hz) || fmax_hz > fs / 2.0 + 1e-9) {
    throw ConfigError(
        fmt::format("scalogram range must satisfy 0 < fmin < fmax <= {} Hz, got [{}, {}]", fs / 2.0, fmin_hz, fmax_hz));
  }
  const double pi = std::numbers::pi;
  const std::size_t n = x.size();
  const std::size_t rows =
      static_cast<std::size_t>(std::floor(static_cast<double>(n_voices) * std::log2(fmax_hz / fmin_hz) + 1e-9)) + 1;

  // Zero-padded to 2N to keep circular wrap-around away from the kept samples.
  const std::size_t m = 2 * n;
  std::vector<std::complex<double>> padded(m, 0.0);
  for (std::size_t i = 0; i < n; ++i) padded[i] = x[i];
  const auto spectrum = detail::fft(padded, false);

  FeatureMap map;
  map.rows = rows;
  map.cols = n;
  map.values.assign(rows * n, 0.0);
  map.row_axis.resize(rows);
  map.row_axis_kind = RowAxis::scale_frequency_hz;
  map.seconds_per_frame = 1.0 / fs;

  const double norm0 = std::pow(pi, -0.25);
  std::vector<std::complex<double>> product(m);
  for (std::size_t j = 0; j < rows; ++j) {
    const double freq = fmax_hz * std::pow(2.0, -static_cast<double>(j) / static_cast<double>(n_voices));
    const double scale = morlet_omega0 * fs / (2.0 * pi * freq);  // in samples
    map.row_axis[j] = freq;
    const double norm = std::sqrt(2.0 * pi * scale) * norm0;
    for (std::size_t k = 0; k < m; ++k) {
      // Analytic wavelet: only positive frequencies (k in 1..m/2).
      if (k == 0 || k > m / 2) {
        product[k] = 0.0;
        continue;
      }
      const double omega = 2.0 * pi * static_cast<double>(k) / static_cast<double>(m);
      const double arg = scale * omega - morlet_omega0;
      product[k] = spectrum[k] * (norm * std::exp(-0.5 * arg * arg));
    }
    const auto coeffs = detail::fft(product, true);
    for (std::size_t t = 0; t < n; ++t) map.values[j * n + t] = std::abs(coeffs[t]) / static_cast<double>(m);
  }
  return map;
}

FeatureMap signal_map(const Signal& signal) {
  signal.validate();
  FeatureMap map;
  map.rows = signal.channel_count();
  map.cols = signal.length();
  map.values.reserve(map.rows * map.cols);
  for (const auto& ch : signal.channels) map.values.insert(map.values.end(), ch.begin(), ch.end());
  map.row_axis.resize(map.rows);
  for (std::size_t r = 0; r < map.rows; ++r) map.row_axis[r] = static_cast<double>(r);
  map.row_axis_kind = RowAxis::channel_index;
  map.seconds_per_frame = 1.0 / signal.sample_rate;
  return map;
}

}  // namespace deepself::dsp
