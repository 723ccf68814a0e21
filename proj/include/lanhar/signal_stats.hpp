#pragma once

#include <array>
#include <vector>

#include <json.hpp>

#include "lanhar/types.hpp"

namespace lanhar::stats {

// Per-channel summary of one window: the quantities the sensor prompt embeds.
struct WindowStats {
  std::array<double, kNumChannels> mean{};
  std::array<double, kNumChannels> std_dev{};
  std::array<double, kNumChannels> max{};
  std::array<double, kNumChannels> min{};
  std::array<double, kNumChannels> amplitude{};        // max - min
  std::array<double, kNumChannels> dominant_freq_hz{}; // 0 for degenerate channels
  std::array<double, kNumChannels> periodicity{};      // in [0, 1]
  std::array<bool, kNumChannels> degenerate{};         // zero-variance channel
  double rate_hz = kDefaultRateHz;
};

// Frequency of the largest DFT magnitude bin, DC excluded, Nyquist excluded,
// ties broken toward the lower frequency. Requires length >= 4.
double dominant_frequency(const std::vector<double>& signal, double rate_hz);

// Max normalized autocorrelation over lags corresponding to periods between
// 0.1 s and 2 s, clamped to [0, 1]. Zero-variance input scores 0. Length >= 8.
double periodicity_score(const std::vector<double>& signal, double rate_hz);

WindowStats compute_stats(const IMUWindow& window);

// Flat JSON with fixed key order (mean_ax .. degenerate_gz) so prompt and
// cache bytes are stable across runs.
nlohmann::ordered_json to_json(const WindowStats& stats);
WindowStats stats_from_json(const nlohmann::json& doc);

}  // namespace lanhar::stats
