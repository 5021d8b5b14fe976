#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "deepself/dsp.hpp"
#include "deepself/error.hpp"

namespace deepself::dsp {

using cd = std::complex<double>;

void Signal::validate() const {
  if (!(sample_rate > 0.0) || !std::isfinite(sample_rate)) {
    throw ConfigError(fmt::format("sample rate must be positive, got {}", sample_rate));
  }
  if (channels.empty()) throw ConfigError("signal has no channels");
  const std::size_t n = channels.front().size();
  if (n == 0) throw ConfigError("signal has no samples");
  for (std::size_t c = 1; c < channels.size(); ++c) {
    if (channels[c].size() != n) {
      throw ConfigError(fmt::format("channel {} has {} samples, channel 0 has {}", c, channels[c].size(), n));
    }
  }
}

Signal Signal::mono(std::vector<double> samples, double sample_rate) {
  Signal s;
  s.sample_rate = sample_rate;
  s.channels.push_back(std::move(samples));
  return s;
}

Signal fit_length(const Signal& signal, std::size_t length) {
  if (length == 0) throw ConfigError("fixed length must be positive");
  Signal out = signal;
  for (auto& ch : out.channels) ch.resize(length, 0.0);
  return out;
}

cd Biquad::response(double freq_hz, double sample_rate) const {
  const cd zinv = std::polar(1.0, -2.0 * std::numbers::pi * freq_hz / sample_rate);
  const cd num = b0 + zinv * (b1 + zinv * b2);
  const cd den = 1.0 + zinv * (a1 + zinv * a2);
  return num / den;
}

std::array<cd, 2> Biquad::poles() const {
  const cd disc = std::sqrt(cd(a1 * a1 - 4.0 * a2, 0.0));
  return {(-a1 + disc) / 2.0, (-a1 - disc) / 2.0};
}

cd FilterCascade::response(double freq_hz) const {
  cd h = 1.0;
  for (const auto& s : sections) h *= s.response(freq_hz, sample_rate);
  return h;
}

double FilterCascade::gain_db(double freq_hz) const {
  return 20.0 * std::log10(std::abs(response(freq_hz)));
}

FilterCascade design_butterworth_bandpass(double low_hz, double high_hz, double sample_rate) {
  if (!(sample_rate > 0.0)) throw ConfigError(fmt::format("sample rate must be positive, got {}", sample_rate));
  if (!(low_hz > 0.0)) throw ConfigError(fmt::format("low cutoff must be > 0, got {}", low_hz));
  if (!(low_hz < high_hz)) {
    throw ConfigError(fmt::format("low must be < high (low={} Hz, high={} Hz)", low_hz, high_hz));
  }
  if (!(high_hz < sample_rate / 2.0)) {
    throw ConfigError(fmt::format("high cutoff {} Hz must be below Nyquist {} Hz", high_hz, sample_rate / 2.0));
  }

  constexpr int order = 4;
  const double pi = std::numbers::pi;
  const double fs2 = 2.0 * sample_rate;
  // Prewarped analog band edges (rad/s).
  const double wl = fs2 * std::tan(pi * low_hz / sample_rate);
  const double wh = fs2 * std::tan(pi * high_hz / sample_rate);
  const double bw = wh - wl;
  const double w0sq = wl * wh;
  const double center = 2.0 * std::atan(std::sqrt(w0sq) / fs2);  // rad/sample
  const cd zc = std::polar(1.0, center);

  FilterCascade cascade;
  cascade.low_hz = low_hz;
  cascade.high_hz = high_hz;
  cascade.sample_rate = sample_rate;
  cascade.prototype_order = order;

  // Upper-half-plane prototype poles; conjugates are covered by pairing each
  // band-pass pole with its own conjugate in one section.
  for (int k = 0; k < order / 2; ++k) {
    const cd proto = std::polar(1.0, pi / 2.0 + pi * (2.0 * k + 1.0) / (2.0 * order));
    const cd b = proto * bw;
    const cd disc = std::sqrt(b * b - 4.0 * w0sq);
    for (const cd s : {(b + disc) / 2.0, (b - disc) / 2.0}) {
      const cd z = (fs2 + s) / (fs2 - s);
      Biquad q{1.0, 0.0, -1.0, -2.0 * z.real(), std::norm(z)};
      // Zeros at z = +1 (from s = 0) and z = -1 (from s = inf).
      const cd num = 1.0 - 1.0 / (zc * zc);
      const cd den = 1.0 + q.a1 / zc + q.a2 / (zc * zc);
      const double g = 1.0 / std::abs(num / den);
      q.b0 = g;
      q.b2 = -g;
      cascade.sections.push_back(q);
    }
  }
  return cascade;
}

Signal apply_iir(const Signal& signal, const FilterCascade& cascade) {
  signal.validate();
  if (std::abs(signal.sample_rate - cascade.sample_rate) > 1e-9 * cascade.sample_rate) {
    throw ConfigError(fmt::format("filter designed for {} Hz applied to a {} Hz signal", cascade.sample_rate,
                                  signal.sample_rate));
  }
  Signal out = signal;
  for (auto& ch : out.channels) {
    for (const auto& q : cascade.sections) {
      double s1 = 0.0, s2 = 0.0;
      for (auto& x : ch) {
        const double y = q.b0 * x + s1;
        s1 = q.b1 * x - q.a1 * y + s2;
        s2 = q.b2 * x - q.a2 * y;
        x = y;
      }
    }
  }
  return out;
}

}  // namespace deepself::dsp
