#include "lanhar/signal_stats.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lanhar/error.hpp"

namespace lanhar::stats {

double dominant_frequency(const std::vector<double>& signal, double rate_hz) {
  const size_t n = signal.size();
  if (n < 4) raise(ErrorCode::Argument, "dominant_frequency needs at least 4 samples");
  if (rate_hz <= 0.0) raise(ErrorCode::Argument, "rate_hz must be positive");

  double mean = 0.0;
  for (double v : signal) mean += v;
  mean /= static_cast<double>(n);

  // Naive DFT over positive-frequency bins below Nyquist. Windows are short
  // (a few hundred samples) so O(n^2) is fine and keeps results exact.
  const size_t k_max = (n % 2 == 0) ? n / 2 - 1 : n / 2;
  size_t best_k = 1;
  double best_mag = -1.0;
  for (size_t k = 1; k <= k_max; ++k) {
    double re = 0.0, im = 0.0;
    const double w = -2.0 * M_PI * static_cast<double>(k) / static_cast<double>(n);
    for (size_t t = 0; t < n; ++t) {
      const double x = signal[t] - mean;
      const double phase = w * static_cast<double>(t);
      re += x * std::cos(phase);
      im += x * std::sin(phase);
    }
    const double mag = re * re + im * im;
    if (mag > best_mag) {
      best_mag = mag;
      best_k = k;
    }
  }
  return static_cast<double>(best_k) * rate_hz / static_cast<double>(n);
}

double periodicity_score(const std::vector<double>& signal, double rate_hz) {
  const size_t n = signal.size();
  if (n < 8) raise(ErrorCode::Argument, "periodicity_score needs at least 8 samples");
  if (rate_hz <= 0.0) raise(ErrorCode::Argument, "rate_hz must be positive");

  double mean = 0.0;
  for (double v : signal) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : signal) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  if (var <= 0.0) return 0.0;

  // Lags spanning periods from 0.1 s (10 Hz) to 2 s (0.5 Hz).
  size_t lag_min = static_cast<size_t>(std::llround(rate_hz / 10.0));
  size_t lag_max = static_cast<size_t>(std::llround(rate_hz * 2.0));
  lag_min = std::max<size_t>(lag_min, 1);
  lag_max = std::min(lag_max, n - 2);
  if (lag_max < lag_min) lag_max = lag_min;

  double best = 0.0;
  for (size_t lag = lag_min; lag <= lag_max; ++lag) {
    double acc = 0.0;
    for (size_t t = 0; t + lag < n; ++t) {
      acc += (signal[t] - mean) * (signal[t + lag] - mean);
    }
    // Unbiased numerator against a population-variance denominator; a full
    // period of a clean sinusoid then scores ~1 instead of (n - lag) / n.
    const double r = acc / static_cast<double>(n - lag) / var;
    best = std::max(best, r);
  }
  return std::clamp(best, 0.0, 1.0);
}

WindowStats compute_stats(const IMUWindow& window) {
  const Eigen::Index rows = window.data.rows();
  if (rows < 8) raise(ErrorCode::Argument, "window too short for stats (need >= 8 samples)");
  if (window.rate_hz <= 0.0) raise(ErrorCode::Argument, "window rate_hz must be positive");

  WindowStats s;
  s.rate_hz = window.rate_hz;
  std::vector<double> channel(static_cast<size_t>(rows));
  for (int c = 0; c < kNumChannels; ++c) {
    const size_t ci = static_cast<size_t>(c);
    double sum = 0.0, lo = window.data(0, c), hi = window.data(0, c);
    for (Eigen::Index r = 0; r < rows; ++r) {
      const double v = window.data(r, c);
      if (!std::isfinite(v)) {
        raise(ErrorCode::Numeric, std::string("non-finite sample in channel ") + kChannelNames[c]);
      }
      channel[static_cast<size_t>(r)] = v;
      sum += v;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    const double mean = sum / static_cast<double>(rows);
    // A constant channel is detected by range, not by accumulated variance:
    // summation rounding leaves var ~1e-32 even for bit-identical samples.
    const bool constant = (lo == hi);
    double var = 0.0;
    if (!constant) {
      for (Eigen::Index r = 0; r < rows; ++r) {
        const double d = window.data(r, c) - mean;
        var += d * d;
      }
      var /= static_cast<double>(rows);
    }

    s.mean[ci] = constant ? lo : mean;
    s.std_dev[ci] = std::sqrt(var);
    s.max[ci] = hi;
    s.min[ci] = lo;
    s.amplitude[ci] = hi - lo;
    if (constant || var <= 0.0) {
      s.degenerate[ci] = true;
      s.dominant_freq_hz[ci] = 0.0;
      s.periodicity[ci] = 0.0;
    } else {
      s.degenerate[ci] = false;
      s.dominant_freq_hz[ci] = dominant_frequency(channel, window.rate_hz);
      s.periodicity[ci] = periodicity_score(channel, window.rate_hz);
    }
  }
  return s;
}

nlohmann::ordered_json to_json(const WindowStats& stats) {
  nlohmann::ordered_json doc;
  const auto put = [&doc](const char* prefix, const std::array<double, kNumChannels>& values) {
    for (int c = 0; c < kNumChannels; ++c) {
      doc[std::string(prefix) + "_" + kChannelNames[c]] = values[static_cast<size_t>(c)];
    }
  };
  put("mean", stats.mean);
  put("std", stats.std_dev);
  put("max", stats.max);
  put("min", stats.min);
  put("amplitude", stats.amplitude);
  put("domfreq", stats.dominant_freq_hz);
  put("period", stats.periodicity);
  for (int c = 0; c < kNumChannels; ++c) {
    doc[std::string("degenerate_") + kChannelNames[c]] = stats.degenerate[static_cast<size_t>(c)];
  }
  doc["rate_hz"] = stats.rate_hz;
  return doc;
}

WindowStats stats_from_json(const nlohmann::json& doc) {
  WindowStats s;
  const auto get = [&doc](const char* prefix, std::array<double, kNumChannels>& values) {
    for (int c = 0; c < kNumChannels; ++c) {
      values[static_cast<size_t>(c)] = doc.at(std::string(prefix) + "_" + kChannelNames[c]).get<double>();
    }
  };
  get("mean", s.mean);
  get("std", s.std_dev);
  get("max", s.max);
  get("min", s.min);
  get("amplitude", s.amplitude);
  get("domfreq", s.dominant_freq_hz);
  get("period", s.periodicity);
  for (int c = 0; c < kNumChannels; ++c) {
    s.degenerate[static_cast<size_t>(c)] =
        doc.at(std::string("degenerate_") + kChannelNames[c]).get<bool>();
  }
  s.rate_hz = doc.at("rate_hz").get<double>();
  return s;
}

}  // namespace lanhar::stats
