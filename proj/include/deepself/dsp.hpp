#pragma once

// Signal pre-processing: Butterworth band-pass filtering and time-frequency
// feature maps (power spectrogram, log-mel spectrogram, Morlet scalogram).
// Every feature map puts time on the column axis.

#include <array>
#include <complex>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace deepself::dsp {

/// Multi-channel sampled signal. All channels share one length.
struct Signal {
  double sample_rate = 1.0;
  std::vector<std::vector<double>> channels;

  std::size_t channel_count() const { return channels.size(); }
  std::size_t length() const { return channels.empty() ? 0 : channels.front().size(); }
  /// Throws ConfigError unless sample_rate > 0 and channels are non-empty and equal length.
  void validate() const;

  static Signal mono(std::vector<double> samples, double sample_rate);
};

/// Crops from the start or zero-pads at the end to exactly `length` samples.
Signal fit_length(const Signal& signal, std::size_t length);

/// Second-order section, a0 normalised to 1:
///   H(z) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)
struct Biquad {
  double b0, b1, b2, a1, a2;

  std::complex<double> response(double freq_hz, double sample_rate) const;
  /// Roots of z^2 + a1 z + a2.
  std::array<std::complex<double>, 2> poles() const;
};

struct FilterCascade {
  std::vector<Biquad> sections;
  double low_hz = 0;
  double high_hz = 0;
  double sample_rate = 0;
  /// Order of the analog low-pass prototype; the band-pass has twice as many poles.
  int prototype_order = 4;

  std::complex<double> response(double freq_hz) const;
  double gain_db(double freq_hz) const;
};

/// Butterworth band-pass from an order-4 analog low-pass prototype (8 poles),
/// bilinear transform with prewarped band edges, normalised to unit gain at
/// the digital centre frequency. Throws ConfigError unless
/// 0 < low_hz < high_hz < sample_rate / 2.
FilterCascade design_butterworth_bandpass(double low_hz, double high_hz, double sample_rate);

/// Causal single-pass filtering, transposed direct form II per section, zero
/// initial state, each channel independently.
Signal apply_iir(const Signal& signal, const FilterCascade& cascade);

enum class RowAxis { frequency_hz, mel_center_hz, scale_frequency_hz, channel_index, image_row };

std::string to_string(RowAxis axis);

/// 2-D map, rows x cols, row-major. Columns are time frames (seconds_per_frame
/// apart) except for image pass-through maps where seconds_per_frame is 0.
struct FeatureMap {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
  std::vector<double> row_axis;  // one entry per row, meaning given by row_axis_kind
  RowAxis row_axis_kind = RowAxis::frequency_hz;
  double seconds_per_frame = 0;

  static constexpr std::size_t time_axis = 1;

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

/// Power spectrogram with a periodic Hann window. Frames =
/// 1 + floor((N - window_len) / hop); rows = window_len / 2 + 1.
FeatureMap spectrogram(const Signal& signal, std::size_t window_len, std::size_t hop);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Triangular HTK-mel filterbank [n_mels x n_fft_bins], each row peaking at
/// exactly 1.0. Bin k sits at k * sample_rate / (2 * (n_fft_bins - 1)).
std::vector<std::vector<double>> mel_filterbank(std::size_t n_mels, std::size_t n_fft_bins, double sample_rate,
                                                double fmin_hz, double fmax_hz);

/// Centre frequencies (Hz) of the mel_filterbank rows.
std::vector<double> mel_centers(std::size_t n_mels, double fmin_hz, double fmax_hz);

inline constexpr double log_floor = 1e-10;

/// ln(filterbank . power_spectrogram + 1e-10).
FeatureMap log_mel_spectrogram(const Signal& signal, std::size_t window_len, std::size_t hop, std::size_t n_mels,
                               double fmin_hz, double fmax_hz);

inline constexpr double morlet_omega0 = 6.0;

/// |CWT| with the analytic Morlet wavelet (omega0 = 6), n_voices scales per
/// octave from fmax (row 0) down to fmin; one column per input sample.
FeatureMap scalogram(const Signal& signal, std::size_t n_voices, double fmin_hz, double fmax_hz);

/// Raw signal as a map: one row per channel, one column per sample.
FeatureMap signal_map(const Signal& signal);

// DSFM binary file: little-endian "DSFM", u32 version, u32 rows, u32 cols,
// f64 seconds-per-frame, f64 row axis values, f32 values row-major.
void write_feature_map(const FeatureMap& map, const std::filesystem::path& path);
FeatureMap read_feature_map(const std::filesystem::path& path);

}  // namespace deepself::dsp
