#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "lanhar/error.hpp"
#include "lanhar/signal_stats.hpp"
#include "lanhar/util.hpp"

using namespace lanhar;

namespace {

IMUWindow window_from(const std::vector<std::vector<double>>& channels, double rate_hz) {
  IMUWindow w;
  const auto rows = static_cast<Eigen::Index>(channels[0].size());
  w.data.resize(rows, kNumChannels);
  for (int c = 0; c < kNumChannels; ++c) {
    const auto& src = channels[static_cast<size_t>(c) % channels.size()];
    for (Eigen::Index r = 0; r < rows; ++r) w.data(r, c) = src[static_cast<size_t>(r)];
  }
  w.rate_hz = rate_hz;
  w.window_id = "test/w0";
  return w;
}

std::vector<double> sinusoid(double freq_hz, double rate_hz, size_t n, double amp = 1.0,
                             double offset = 0.0) {
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) {
    out[i] = offset + amp * std::sin(2.0 * M_PI * freq_hz * static_cast<double>(i) / rate_hz);
  }
  return out;
}

}  // namespace

TEST_CASE("constant channel: mean equals the constant, zero spread, degenerate") {
  std::vector<double> flat(120, 9.81);
  auto w = window_from({flat}, 20.0);
  auto s = stats::compute_stats(w);
  for (int c = 0; c < kNumChannels; ++c) {
    const auto ci = static_cast<size_t>(c);
    CHECK(s.mean[ci] == doctest::Approx(9.81));
    CHECK(s.std_dev[ci] == doctest::Approx(0.0));
    CHECK(s.amplitude[ci] == doctest::Approx(0.0));
    CHECK(s.dominant_freq_hz[ci] == 0.0);
    CHECK(s.periodicity[ci] == 0.0);
    CHECK(s.degenerate[ci]);
  }
}

TEST_CASE("2 Hz sinusoid at 20 Hz lands within one DFT bin of 2 Hz") {
  const double bin = 20.0 / 120.0;
  auto sig = sinusoid(2.0, 20.0, 120);
  CHECK(std::abs(stats::dominant_frequency(sig, 20.0) - 2.0) <= bin + 1e-12);
  auto w = window_from({sig}, 20.0);
  auto s = stats::compute_stats(w);
  CHECK(std::abs(s.dominant_freq_hz[0] - 2.0) <= bin + 1e-12);
  CHECK(!s.degenerate[0]);
}

TEST_CASE("stronger low component wins a two-tone mixture") {
  auto low = sinusoid(1.0, 20.0, 120, 2.0);
  auto high = sinusoid(5.0, 20.0, 120, 1.0);
  std::vector<double> mix(120);
  for (size_t i = 0; i < 120; ++i) mix[i] = low[i] + high[i];
  CHECK(std::abs(stats::dominant_frequency(mix, 20.0) - 1.0) <= 20.0 / 120.0 + 1e-12);
}

TEST_CASE("constant signal falls back to the smallest positive bin") {
  std::vector<double> flat(64, 3.0);
  CHECK(stats::dominant_frequency(flat, 20.0) == doctest::Approx(20.0 / 64.0));
}

TEST_CASE("dominant frequency stays below Nyquist") {
  // Alternate +1/-1: all energy at Nyquist, which is excluded from the search.
  std::vector<double> alt(64);
  for (size_t i = 0; i < alt.size(); ++i) alt[i] = (i % 2 == 0) ? 1.0 : -1.0;
  CHECK(stats::dominant_frequency(alt, 20.0) < 10.0);
}

TEST_CASE("too-short inputs raise argument errors") {
  std::vector<double> tiny{1.0, 2.0, 3.0};
  CHECK_THROWS_AS(stats::dominant_frequency(tiny, 20.0), Error);
  std::vector<double> seven(7, 1.0);
  CHECK_THROWS_AS(stats::periodicity_score(seven, 20.0), Error);
}

TEST_CASE("perfect sinusoid is highly periodic, noise is not") {
  auto sig = sinusoid(2.0, 20.0, 120);
  CHECK(stats::periodicity_score(sig, 20.0) >= 0.95);

  std::vector<double> flat(120, 5.0);
  CHECK(stats::periodicity_score(flat, 20.0) == 0.0);

  int low = 0;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(derive_seed(seed, "periodicity_noise"));
    std::vector<double> noise(1000);
    for (auto& v : noise) v = rng.normal();
    if (stats::periodicity_score(noise, 20.0) < 0.3) ++low;
  }
  CHECK(low == 20);
}

TEST_CASE("stats are a pure function of data and rate") {
  auto sig = sinusoid(2.0, 20.0, 120, 1.5, 0.3);
  auto w1 = window_from({sig}, 20.0);
  auto w2 = w1;
  w2.window_id = "other/id";
  w2.subject_id = "someone_else";
  auto s1 = stats::to_json(stats::compute_stats(w1));
  auto s2 = stats::to_json(stats::compute_stats(w2));
  CHECK(s1.dump() == s2.dump());
}

TEST_CASE("offset shifts location stats only") {
  auto base = sinusoid(2.0, 20.0, 120);
  auto shifted = base;
  for (auto& v : shifted) v += 9.81;
  auto s0 = stats::compute_stats(window_from({base}, 20.0));
  auto s1 = stats::compute_stats(window_from({shifted}, 20.0));
  CHECK(s1.mean[0] == doctest::Approx(s0.mean[0] + 9.81));
  CHECK(s1.max[0] == doctest::Approx(s0.max[0] + 9.81));
  CHECK(s1.min[0] == doctest::Approx(s0.min[0] + 9.81));
  CHECK(s1.std_dev[0] == doctest::Approx(s0.std_dev[0]));
  CHECK(s1.amplitude[0] == doctest::Approx(s0.amplitude[0]));
  CHECK(s1.dominant_freq_hz[0] == doctest::Approx(s0.dominant_freq_hz[0]));
}

TEST_CASE("positive scaling scales spread stats only") {
  auto base = sinusoid(2.0, 20.0, 120);
  auto scaled = base;
  for (auto& v : scaled) v *= 3.0;
  auto s0 = stats::compute_stats(window_from({base}, 20.0));
  auto s1 = stats::compute_stats(window_from({scaled}, 20.0));
  CHECK(s1.std_dev[0] == doctest::Approx(3.0 * s0.std_dev[0]));
  CHECK(s1.amplitude[0] == doctest::Approx(3.0 * s0.amplitude[0]));
  CHECK(s1.dominant_freq_hz[0] == doctest::Approx(s0.dominant_freq_hz[0]));
  CHECK(s1.periodicity[0] == doctest::Approx(s0.periodicity[0]).epsilon(1e-9));
}

TEST_CASE("stats invariants hold on mixed random windows") {
  Rng rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    IMUWindow w;
    w.data.resize(120, kNumChannels);
    for (Eigen::Index r = 0; r < 120; ++r) {
      for (int c = 0; c < kNumChannels; ++c) {
        w.data(r, c) = rng.normal() * (c + 1) + (c == 2 ? 9.81 : 0.0);
      }
    }
    w.rate_hz = 20.0;
    auto s = stats::compute_stats(w);
    for (int c = 0; c < kNumChannels; ++c) {
      const auto ci = static_cast<size_t>(c);
      CHECK(s.min[ci] <= s.mean[ci]);
      CHECK(s.mean[ci] <= s.max[ci]);
      CHECK(s.std_dev[ci] >= 0.0);
      CHECK(s.dominant_freq_hz[ci] < w.rate_hz / 2.0);
      CHECK(s.periodicity[ci] >= 0.0);
      CHECK(s.periodicity[ci] <= 1.0);
      CHECK(s.amplitude[ci] == doctest::Approx(s.max[ci] - s.min[ci]));
    }
  }
}

TEST_CASE("json round trip preserves values and key order is stable") {
  auto sig = sinusoid(2.0, 20.0, 120, 1.2, 0.5);
  auto s = stats::compute_stats(window_from({sig}, 20.0));
  auto doc = stats::to_json(s);
  CHECK(doc.begin().key() == "mean_ax");
  auto back = stats::stats_from_json(doc);
  CHECK(stats::to_json(back).dump() == doc.dump());
}
