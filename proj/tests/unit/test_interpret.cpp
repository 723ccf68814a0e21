#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "lanhar/error.hpp"
#include "lanhar/interpret.hpp"
#include "lanhar/signal_stats.hpp"
#include "lanhar/util.hpp"

#include <httplib.h>

using namespace lanhar;
using namespace lanhar::interpret;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "lanhar_interpret_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

template <typename Fn>
std::optional<ErrorCode> code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

// Six-channel sinusoid with a per-channel phase offset so no two channels are
// identical. freq_hz should sit on a DFT bin (k * rate / rows) so the
// dominant-frequency estimate is exact.
IMUWindow sine_window(int rows, double rate, const std::array<double, 6>& base,
                      const std::array<double, 6>& amp, double freq_hz, const std::string& id) {
  IMUWindow w;
  w.data.resize(rows, 6);
  w.rate_hz = rate;
  w.window_id = id;
  for (int i = 0; i < rows; ++i) {
    for (int c = 0; c < 6; ++c) {
      const double phase = 2.0 * M_PI * freq_hz * i / rate + 0.3 * c;
      w.data(i, c) = base[static_cast<size_t>(c)] +
                     amp[static_cast<size_t>(c)] * std::sin(phase);
    }
  }
  return w;
}

IMUWindow walking_window(const std::string& id = "w0") {
  return sine_window(150, 50.0, {0.0, 0.0, 9.81, 0.0, 0.0, 0.0},
                     {1.5, 1.2, 1.4, 1.5, 1.2, 0.8}, 2.0, id);
}

IMUWindow sitting_window(const std::string& id = "s0") {
  return sine_window(150, 50.0, {0.1, 0.2, 9.81, 0.0, 0.0, 0.0},
                     {0.04, 0.03, 0.05, 0.01, 0.01, 0.01}, 1.0, id);
}

PromptBundle walking_bundle(const std::string& id = "w0") {
  const IMUWindow w = walking_window(id);
  return build_sensor_prompt(w, stats::compute_stats(w), {});
}

// Hand-built statistics pin the banded vocabulary to exact thresholds.
stats::WindowStats stats_with(double accel_amp, double freq, double gyro_amp,
                              double mean_ax = 0.0, double mean_az = 9.81) {
  stats::WindowStats s;
  s.rate_hz = 50.0;
  s.mean = {mean_ax, 0.0, mean_az, 0.0, 0.0, 0.0};
  for (int c = 0; c < 3; ++c) {
    s.amplitude[static_cast<size_t>(c)] = c == 0 ? accel_amp : accel_amp * 0.5;
    s.amplitude[static_cast<size_t>(c + 3)] = c == 0 ? gyro_amp : gyro_amp * 0.5;
    s.dominant_freq_hz[static_cast<size_t>(c)] = freq;
    s.dominant_freq_hz[static_cast<size_t>(c + 3)] = freq;
  }
  return s;
}

// Backend that fails transiently a fixed number of times before succeeding.
class FlakyBackend : public LLMBackend {
 public:
  FlakyBackend(int failures, ErrorCode code = ErrorCode::BackendTransient)
      : failures_(failures), code_(code) {}
  const std::string& backend_id() const override { return id_; }
  std::string generate(const std::string&, const DecodeParams&) override {
    ++calls_;
    if (calls_ <= failures_) raise(code_, "induced failure");
    return "recovered response";
  }
  int calls() const { return calls_; }

 private:
  std::string id_ = "flaky";
  int failures_;
  ErrorCode code_;
  int calls_ = 0;
};

class EmptyBackend : public LLMBackend {
 public:
  const std::string& backend_id() const override { return id_; }
  std::string generate(const std::string&, const DecodeParams&) override { return "  \n "; }

 private:
  std::string id_ = "empty";
};

}  // namespace

TEST_CASE("sensor prompt carries four ordered sections and a stable hash") {
  const IMUWindow w = walking_window();
  const auto s = stats::compute_stats(w);
  const PromptBundle a = build_sensor_prompt(w, s, {"people walk at roughly 1.4-2.5 Hz"});

  REQUIRE(a.sections.size() == 4);
  CHECK(a.sections[0].name == "data_introduction");
  CHECK(a.sections[1].name == "data_analysis");
  CHECK(a.sections[2].name == "knowledge");
  CHECK(a.sections[3].name == "task_introduction");
  CHECK(a.target_kind == TargetKind::Sensor);
  CHECK(a.target_id == "w0");
  CHECK(a.content_hash.size() == 64);

  CHECK(a.sections[0].text.find("50.0 Hz") != std::string::npos);
  CHECK(a.sections[1].text.find("\"mean_ax\"") != std::string::npos);
  CHECK(a.sections[2].text.find("1.4-2.5 Hz") != std::string::npos);
  CHECK(a.sections[3].text.find("Do not name an activity label") != std::string::npos);
  // The rendering embeds every section under its name header.
  const std::string r = a.render();
  CHECK(r.find("## data_introduction\n") != std::string::npos);
  CHECK(r.find("## task_introduction\n") != std::string::npos);

  // Identical input reproduces the hash; a one-sample change breaks it.
  const PromptBundle b = build_sensor_prompt(w, s, {"people walk at roughly 1.4-2.5 Hz"});
  CHECK(a.content_hash == b.content_hash);
  IMUWindow w2 = w;
  w2.data(3, 1) += 0.001;
  const PromptBundle c = build_sensor_prompt(w2, stats::compute_stats(w2), {});
  CHECK(c.content_hash != a.content_hash);

  // No knowledge snippets still yields a knowledge section.
  const PromptBundle d = build_sensor_prompt(w, s, {});
  CHECK(d.sections[2].text ==
        "No additional background knowledge provided.");
}

TEST_CASE("sensor prompt truncates long raw sequences") {
  auto raw_values_on_line = [](const std::string& text, const std::string& channel) {
    const auto at = text.find("\n" + channel + ":");
    REQUIRE(at != std::string::npos);
    const auto begin = at + channel.size() + 2;
    const auto end = text.find('\n', begin);
    const auto line = text.substr(begin, end == std::string::npos ? end : end - begin);
    return split(trim(line), ' ').size();
  };

  const IMUWindow w = sine_window(200, 50.0, {0.0, 0.0, 9.81, 0.0, 0.0, 0.0},
                                  {1.5, 1.2, 1.4, 1.5, 1.2, 0.8}, 2.0, "long");
  const PromptBundle p = build_sensor_prompt(w, stats::compute_stats(w), {});
  const std::string& analysis = p.sections[1].text;
  CHECK(analysis.find("120 of 200 per channel") != std::string::npos);
  CHECK(analysis.find("remainder summarized by the statistics above") != std::string::npos);
  CHECK(raw_values_on_line(analysis, "ax") == 120);
  CHECK(raw_values_on_line(analysis, "gz") == 120);

  // Short windows are shown in full, without the truncation note.
  const IMUWindow s = sine_window(100, 50.0, {0.0, 0.0, 9.81, 0.0, 0.0, 0.0},
                                  {1.5, 1.2, 1.4, 1.5, 1.2, 0.8}, 2.0, "short");
  const PromptBundle q = build_sensor_prompt(s, stats::compute_stats(s), {});
  CHECK(q.sections[1].text.find("100 of 100 per channel") != std::string::npos);
  CHECK(q.sections[1].text.find("remainder summarized") == std::string::npos);
  CHECK(raw_values_on_line(q.sections[1].text, "ax") == 100);
}

TEST_CASE("label prompt covers three aspects in a single task section") {
  const PromptBundle p = build_label_prompt("walking");
  REQUIRE(p.sections.size() == 1);
  CHECK(p.sections[0].name == "task_introduction");
  CHECK(p.target_kind == TargetKind::Label);
  CHECK(p.target_id == "walking");
  const std::string& t = p.sections[0].text;
  CHECK(t.find("general overview") != std::string::npos);
  CHECK(t.find("accelerometer and gyroscope") != std::string::npos);
  CHECK(t.find("body parts") != std::string::npos);
  CHECK(t.find("\"walking\"") != std::string::npos);
  CHECK(t.find("phrasing variant") == std::string::npos);

  // Variant seeds change the wording request and therefore the hash.
  const PromptBundle v1 = build_label_prompt("walking", 1);
  const PromptBundle v2 = build_label_prompt("walking", 2);
  CHECK(v1.sections[0].text.find("phrasing variant 1") != std::string::npos);
  CHECK(v1.content_hash != p.content_hash);
  CHECK(v2.content_hash != v1.content_hash);
  CHECK(v1.target_id == "walking");

  CHECK(code_of([] { build_label_prompt("flying"); }) == ErrorCode::Label);
}

TEST_CASE("regeneration embeds the correction instruction and prior response") {
  const PromptBundle original = walking_bundle();
  const std::string previous = "The signal is perfectly still despite a strong rhythm.";
  const PromptBundle regen = build_regen_prompt(original, previous);

  REQUIRE(regen.sections.size() == original.sections.size());
  CHECK(regen.sections[0].text == original.sections[0].text);
  CHECK(regen.sections[1].text == original.sections[1].text);
  const std::string& task = regen.sections[3].text;
  const std::string instruction =
      "This is your previous response to the task. Please analyze it step by step to identify "
      "any logical errors, inconsistencies with real-world knowledge, or discrepancies with the "
      "input data. Provide a corrected response according to the required format.";
  CHECK(task.rfind(instruction, 0) == 0);
  CHECK(task.find("Previous response:\n" + previous) != std::string::npos);
  CHECK(regen.content_hash != original.content_hash);
  CHECK(regen.target_id == original.target_id);

  // A regeneration of a regeneration replaces the same section again.
  const PromptBundle regen2 = build_regen_prompt(regen, "second draft");
  CHECK(regen2.sections[3].text.find("second draft") != std::string::npos);
  CHECK(regen2.sections[3].text.find(previous) == std::string::npos);
  CHECK(regen2.content_hash != regen.content_hash);

  CHECK(code_of([&] { build_regen_prompt(original, "   "); }) == ErrorCode::Argument);
  PromptBundle broken = original;
  broken.sections.pop_back();
  CHECK(code_of([&] { build_regen_prompt(broken, previous); }) == ErrorCode::Argument);
}

TEST_CASE("interpretation records round-trip through JSON") {
  SemanticInterpretation si;
  si.target_id = "w17";
  si.kind = TargetKind::Sensor;
  si.text = "a steady walking-band rhythm";
  si.backend_id = "mock";
  si.attempt = 2;
  si.prompt_hash = std::string(64, 'a');

  const auto doc = si.to_json();
  const SemanticInterpretation back = SemanticInterpretation::from_json(doc);
  CHECK(back.target_id == si.target_id);
  CHECK(back.kind == si.kind);
  CHECK(back.text == si.text);
  CHECK(back.backend_id == si.backend_id);
  CHECK(back.attempt == si.attempt);
  CHECK(back.prompt_hash == si.prompt_hash);

  auto empty_text = doc;
  empty_text["text"] = "";
  CHECK(code_of([&] { SemanticInterpretation::from_json(empty_text); }) == ErrorCode::Parse);
  auto bad_attempt = doc;
  bad_attempt["attempt"] = 0;
  CHECK(code_of([&] { SemanticInterpretation::from_json(bad_attempt); }) == ErrorCode::Parse);
  auto bad_kind = doc;
  bad_kind["kind"] = "mystery";
  CHECK(code_of([&] { SemanticInterpretation::from_json(bad_kind); }) == ErrorCode::Parse);
}

TEST_CASE("generation consults the cache before calling the backend") {
  ResponseCache cache(fresh_dir("cache_first"));
  MockBackend mock;
  InterpretCounters counters;
  const PromptBundle bundle = walking_bundle();

  const auto first = generate_interpretation(bundle, mock, cache, {}, &counters);
  CHECK(counters.backend_calls == 1);
  CHECK(counters.cache_hits == 0);
  CHECK(mock.calls() == 1);
  CHECK(first.attempt == 1);
  CHECK(first.backend_id == "mock");
  CHECK(first.prompt_hash == bundle.content_hash);
  CHECK_FALSE(first.text.empty());

  const auto second = generate_interpretation(bundle, mock, cache, {}, &counters);
  CHECK(counters.backend_calls == 1);  // unchanged: served from disk
  CHECK(counters.cache_hits == 1);
  CHECK(mock.calls() == 1);
  CHECK(second.text == first.text);

  // A fresh cache object over the same directory still hits.
  ResponseCache reopened(cache.dir());
  InterpretCounters again;
  const auto third = generate_interpretation(bundle, mock, reopened, {}, &again);
  CHECK(again.backend_calls == 0);
  CHECK(again.cache_hits == 1);
  CHECK(third.text == first.text);

  // An unhashed bundle is rejected before any I/O.
  PromptBundle unfinished = bundle;
  unfinished.content_hash.clear();
  CHECK(code_of([&] { generate_interpretation(unfinished, mock, cache); }) ==
        ErrorCode::Argument);
}

TEST_CASE("decode parameters and attempt number key the cache separately") {
  ResponseCache cache(fresh_dir("cache_keys"));
  MockBackend mock;
  InterpretCounters counters;
  const PromptBundle bundle = walking_bundle();

  GenerateOptions base;
  generate_interpretation(bundle, mock, cache, base, &counters);
  CHECK(counters.backend_calls == 1);

  GenerateOptions warm = base;
  warm.decode.temperature = 0.7;
  generate_interpretation(bundle, mock, cache, warm, &counters);
  CHECK(counters.backend_calls == 2);  // different decode params: no aliasing

  GenerateOptions longer = base;
  longer.decode.max_tokens = 1024;
  generate_interpretation(bundle, mock, cache, longer, &counters);
  CHECK(counters.backend_calls == 3);

  GenerateOptions retry = base;
  retry.attempt = 2;
  const auto si = generate_interpretation(bundle, mock, cache, retry, &counters);
  CHECK(counters.backend_calls == 4);
  CHECK(si.attempt == 2);

  // Each variant is now individually warm; replays cost no backend calls.
  InterpretCounters replay;
  generate_interpretation(bundle, mock, cache, base, &replay);
  generate_interpretation(bundle, mock, cache, warm, &replay);
  generate_interpretation(bundle, mock, cache, longer, &replay);
  generate_interpretation(bundle, mock, cache, retry, &replay);
  CHECK(replay.backend_calls == 0);
  CHECK(replay.cache_hits == 4);

  // Attempt records coexist on disk: the history is preserved, not replaced.
  generate_interpretation(bundle, mock, cache, base, &replay);
  generate_interpretation(bundle, mock, cache, retry, &replay);
  CHECK(replay.backend_calls == 0);
}

TEST_CASE("transient failures retry with exponential backoff") {
  const PromptBundle bundle = walking_bundle();

  SUBCASE("recovers within the retry budget") {
    ResponseCache cache(fresh_dir("retry_ok"));
    FlakyBackend flaky(2);
    std::vector<double> sleeps;
    GenerateOptions opts;
    opts.sleep_ms = [&](double ms) { sleeps.push_back(ms); };
    InterpretCounters counters;
    const auto si = generate_interpretation(bundle, flaky, cache, opts, &counters);
    CHECK(si.text == "recovered response");
    CHECK(flaky.calls() == 3);
    CHECK(counters.backend_calls == 3);
    REQUIRE(sleeps.size() == 2);
    CHECK(sleeps[0] == doctest::Approx(100.0));
    CHECK(sleeps[1] == doctest::Approx(200.0));
    // The recovered response was cached.
    InterpretCounters warm;
    generate_interpretation(bundle, flaky, cache, opts, &warm);
    CHECK(warm.backend_calls == 0);
  }

  SUBCASE("exhausting the budget is a permanent backend error") {
    ResponseCache cache(fresh_dir("retry_exhausted"));
    FlakyBackend flaky(100);
    GenerateOptions opts;
    opts.sleep_ms = [](double) {};
    CHECK(code_of([&] { generate_interpretation(bundle, flaky, cache, opts); }) ==
          ErrorCode::Backend);
    CHECK(flaky.calls() == 4);  // initial try + max_retries of 3
    // Nothing was cached for the failed prompt.
    CHECK_FALSE(cache.lookup("flaky", bundle.content_hash, opts.decode, 1).has_value());
  }

  SUBCASE("permanent failures are not retried") {
    ResponseCache cache(fresh_dir("retry_permanent"));
    FlakyBackend rejecting(100, ErrorCode::Backend);
    GenerateOptions opts;
    opts.sleep_ms = [](double) {};
    CHECK(code_of([&] { generate_interpretation(bundle, rejecting, cache, opts); }) ==
          ErrorCode::Backend);
    CHECK(rejecting.calls() == 1);
  }

  SUBCASE("a blank response is a parse error") {
    ResponseCache cache(fresh_dir("retry_blank"));
    EmptyBackend empty;
    CHECK(code_of([&] { generate_interpretation(bundle, empty, cache); }) == ErrorCode::Parse);
  }

  SUBCASE("zero retries means a single try") {
    ResponseCache cache(fresh_dir("retry_zero"));
    FlakyBackend flaky(1);
    GenerateOptions opts;
    opts.max_retries = 0;
    opts.sleep_ms = [](double) {};
    CHECK(code_of([&] { generate_interpretation(bundle, flaky, cache, opts); }) ==
          ErrorCode::Backend);
    CHECK(flaky.calls() == 1);
  }
}

TEST_CASE("cache rejects corrupt and mismatched records") {
  const fs::path dir = fresh_dir("cache_integrity");
  ResponseCache cache(dir);
  const DecodeParams decode;
  const std::string hash_a(64, 'a');
  const std::string hash_b(64, 'b');

  cache.store("mock", hash_a, decode, 1, "stored text");
  REQUIRE(cache.lookup("mock", hash_a, decode, 1) == std::string("stored text"));
  CHECK_FALSE(cache.lookup("mock", hash_b, decode, 1).has_value());
  CHECK_FALSE(cache.lookup("other", hash_a, decode, 1).has_value());

  // Find the record on disk and give it to a different hash's key: the
  // embedded hash no longer matches and the cache refuses to serve it.
  fs::path record;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file()) record = entry.path();
  }
  REQUIRE_FALSE(record.empty());
  const std::string moved_name =
      hash_b + record.filename().string().substr(hash_a.size());
  fs::copy_file(record, record.parent_path() / moved_name);
  CHECK(code_of([&] { cache.lookup("mock", hash_b, decode, 1); }) == ErrorCode::Validation);

  // Corrupt bytes are a parse error, not silent data.
  write_text_file_atomic(record, "not json at all");
  CHECK(code_of([&] { cache.lookup("mock", hash_a, decode, 1); }) == ErrorCode::Parse);
}

TEST_CASE("mock banded vocabulary tracks amplitude frequency and rotation") {
  // Walking: walking-band frequency, moderate amplitude, leg-swing rotation.
  std::string t = MockBackend::describe_stats(stats_with(3.0, 2.0, 3.0));
  CHECK(t.find("walking-band rhythm") != std::string::npos);
  CHECK(t.find("moderate movement amplitude") != std::string::npos);
  CHECK(t.find("regular leg swing rotation") != std::string::npos);
  CHECK(t.find("comfortable cadence") != std::string::npos);

  // Upstairs: elevated amplitude with a raised vertical mean.
  t = MockBackend::describe_stats(stats_with(5.0, 1.8, 3.0, 0.0, 10.4));
  CHECK(t.find("elevated movement amplitude") != std::string::npos);
  CHECK(t.find("extra effort working against gravity") != std::string::npos);
  CHECK(t.find("stepwise climbing") != std::string::npos);

  // Downstairs: elevated amplitude with a lowered vertical mean.
  t = MockBackend::describe_stats(stats_with(5.0, 1.8, 3.0, 0.0, 9.2));
  CHECK(t.find("repeated impacts absorbed on each step") != std::string::npos);
  CHECK(t.find("stepwise descent") != std::string::npos);

  // Jogging: vigorous band, intense amplitude, rapid rotation.
  t = MockBackend::describe_stats(stats_with(10.0, 3.0, 6.0));
  CHECK(t.find("vigorous fast rhythm") != std::string::npos);
  CHECK(t.find("intense movement amplitude") != std::string::npos);
  CHECK(t.find("rapid strong rotation") != std::string::npos);
  CHECK(t.find("running-like") != std::string::npos);

  // Biking: slow band, moderate amplitude, smooth rotation.
  t = MockBackend::describe_stats(stats_with(2.0, 1.0, 1.0));
  CHECK(t.find("a slow smooth rhythm") != std::string::npos);
  CHECK(t.find("smooth continuous rotation") != std::string::npos);
  CHECK(t.find("pedaling-like cyclic motion") != std::string::npos);

  // Sitting: static, nearly no residual motion, gravity on the vertical axis.
  t = MockBackend::describe_stats(stats_with(0.1, 1.0, 0.05));
  CHECK(t.find("essentially static signal") != std::string::npos);
  CHECK(t.find("minimal movement amplitude") != std::string::npos);
  CHECK(t.find("almost perfectly still") != std::string::npos);
  CHECK(t.find("stays near zero") != std::string::npos);
  CHECK(t.find("resting posture") != std::string::npos);

  // Standing: static but with visible postural sway.
  t = MockBackend::describe_stats(stats_with(0.3, 1.0, 0.05));
  CHECK(t.find("small postural sway") != std::string::npos);
  CHECK(t.find("upright posture") != std::string::npos);

  // Lying: gravity moves to a horizontal axis.
  t = MockBackend::describe_stats(stats_with(0.1, 1.0, 0.05, 9.81, 0.3));
  CHECK(t.find("consistent with resting horizontally") != std::string::npos);
  CHECK(t.find("reclining at rest") != std::string::npos);
}

TEST_CASE("mock answers sensor prompts from the embedded statistics") {
  MockBackend mock;
  const DecodeParams decode;
  const PromptBundle walk = walking_bundle();
  const std::string a = mock.generate(walk.render(), decode);
  const std::string b = mock.generate(walk.render(), decode);
  CHECK(a == b);  // deterministic
  CHECK(a.find("walking-band rhythm") != std::string::npos);
  CHECK(a.find("moderate movement amplitude") != std::string::npos);

  const IMUWindow sit = sitting_window();
  const PromptBundle sit_bundle = build_sensor_prompt(sit, stats::compute_stats(sit), {});
  const std::string c = mock.generate(sit_bundle.render(), decode);
  CHECK(c.find("essentially static signal") != std::string::npos);
  CHECK(c.find("stays near zero") != std::string::npos);
  CHECK(c != a);
  CHECK(mock.calls() == 3);
}

TEST_CASE("mock label knowledge covers every canonical activity") {
  const auto& table = MockBackend::label_knowledge();
  CHECK(table.size() == canonical_labels().size());
  for (const auto& label : canonical_labels()) {
    REQUIRE(table.count(label) == 1);
    CHECK(table.at(label).find("accelerometer") != std::string::npos);
    CHECK(table.at(label).find("gyroscope") != std::string::npos);
  }
  // The label descriptions reuse the sensor-side band vocabulary, which is
  // what lets a window's description land near its activity's description.
  CHECK(table.at("walking").find("walking-band rhythm") != std::string::npos);
  CHECK(table.at("walking").find("moderate movement amplitude") != std::string::npos);
  CHECK(table.at("jogging").find("vigorous fast rhythm") != std::string::npos);
  CHECK(table.at("sitting").find("almost perfectly still") != std::string::npos);
  CHECK(table.at("standing").find("small postural sway") != std::string::npos);
  CHECK(table.at("lying").find("resting horizontally") != std::string::npos);
  CHECK(table.at("going_upstairs").find("against gravity") != std::string::npos);
  CHECK(table.at("going_downstairs").find("impacts absorbed") != std::string::npos);
  CHECK(table.at("biking").find("smooth continuous rotation") != std::string::npos);

  MockBackend mock;
  const DecodeParams decode;
  // Variant 0 answers straight from the table.
  const PromptBundle p0 = build_label_prompt("walking");
  CHECK(mock.generate(p0.render(), decode) == table.at("walking"));
  // Variants keep the distinctive facts but change the wording.
  const std::string v1 = mock.generate(build_label_prompt("walking", 1).render(), decode);
  const std::string v2 = mock.generate(build_label_prompt("walking", 2).render(), decode);
  CHECK(v1 != table.at("walking"));
  CHECK(v2 != v1);
  CHECK(v1.find("walking-band rhythm") != std::string::npos);
  CHECK(v2.find("walking-band rhythm") != std::string::npos);
}

TEST_CASE("hallucinations are deterministic and cleared by regeneration") {
  MockBackendConfig cfg;
  cfg.hallucination_pct = 100;
  MockBackend noisy(cfg);
  const DecodeParams decode;
  const PromptBundle bundle = walking_bundle();

  const std::string bad = noisy.generate(bundle.render(), decode);
  CHECK(bad.find("contradicts the computed statistics") != std::string::npos);
  CHECK(bad == noisy.generate(bundle.render(), decode));

  // The correction prompt always produces the clean banded rendering.
  const PromptBundle regen = build_regen_prompt(bundle, bad);
  const std::string fixed = noisy.generate(regen.render(), decode);
  CHECK(fixed.find("contradicts the computed statistics") == std::string::npos);
  CHECK(fixed.find("walking-band rhythm") != std::string::npos);

  // With injection off the first answer is already clean.
  MockBackend clean;
  CHECK(clean.generate(bundle.render(), decode).find("walking-band rhythm") !=
        std::string::npos);

  // A fractional rate corrupts some prompts and not others. Injection is
  // keyed by prompt content, so the windows must actually differ.
  MockBackendConfig half;
  half.hallucination_pct = 50;
  MockBackend sometimes(half);
  int corrupted = 0;
  const int n = 40;
  for (int i = 0; i < n; ++i) {
    const IMUWindow w =
        sine_window(150, 50.0, {0.0, 0.0, 9.81, 0.0, 0.0, 0.0},
                    {1.5 + 0.01 * i, 1.2, 1.4, 1.5, 1.2, 0.8}, 2.0, "w" + std::to_string(i));
    const PromptBundle b = build_sensor_prompt(w, stats::compute_stats(w), {});
    if (sometimes.generate(b.render(), decode).find("contradicts the computed statistics") !=
        std::string::npos) {
      ++corrupted;
    }
  }
  CHECK(corrupted > 0);
  CHECK(corrupted < n);

  CHECK(code_of([] {
          MockBackendConfig bad_cfg;
          bad_cfg.hallucination_pct = 101;
          MockBackend b(bad_cfg);
        }) == ErrorCode::Argument);
}

TEST_CASE("mock recovers the label from a regenerated label prompt") {
  MockBackend mock;
  const DecodeParams decode;
  const PromptBundle label = build_label_prompt("going_upstairs");
  const std::string original = mock.generate(label.render(), decode);
  const PromptBundle regen = build_regen_prompt(label, original);
  const std::string corrected = mock.generate(regen.render(), decode);
  CHECK(corrected == MockBackend::label_knowledge().at("going_upstairs"));
}

TEST_CASE("replay backend serves recorded responses and nothing else") {
  const fs::path dir = fresh_dir("replay");
  const std::string prompt = walking_bundle().render();
  ReplayBackend::record(dir, prompt, "a recorded answer");

  ReplayBackend replay(dir);
  const DecodeParams decode;
  CHECK(replay.generate(prompt, decode) == "a recorded answer");
  CHECK(replay.backend_id() == "replay");
  CHECK(code_of([&] { replay.generate("some other prompt", decode); }) == ErrorCode::Backend);

  CHECK(code_of([&] { ReplayBackend missing(dir / "nope"); }) == ErrorCode::Validation);

  // A corrupt recording is reported as such rather than replayed.
  for (const auto& entry : fs::directory_iterator(dir)) {
    write_text_file_atomic(entry.path(), "{broken");
  }
  CHECK(code_of([&] { replay.generate(prompt, decode); }) == ErrorCode::Parse);
}

TEST_CASE("http backend validates its configuration up front") {
  HttpBackendConfig cfg;
  cfg.endpoint = "ftp://example.test/generate";
  cfg.api_key_env = "LANHAR_TEST_KEY";
  setenv("LANHAR_TEST_KEY", "test-key-123", 1);
  CHECK(code_of([&] { HttpBackend b(cfg); }) == ErrorCode::Validation);

  cfg.endpoint = "http://example.test/generate";
  unsetenv("LANHAR_TEST_KEY");
  CHECK(code_of([&] { HttpBackend b(cfg); }) == ErrorCode::Validation);
}

TEST_CASE("http backend speaks the JSON protocol against a local server") {
  httplib::Server server;
  std::string seen_auth, seen_model, seen_prompt;
  server.Post("/v1/generate", [&](const httplib::Request& req, httplib::Response& res) {
    seen_auth = req.get_header_value("Authorization");
    const auto body = nlohmann::json::parse(req.body);
    seen_model = body.at("model").get<std::string>();
    seen_prompt = body.at("prompt").get<std::string>();
    res.set_content(nlohmann::json{{"text", "server says hi"}}.dump(), "application/json");
  });
  server.Post("/v1/overloaded", [](const httplib::Request&, httplib::Response& res) {
    res.status = 503;
  });
  server.Post("/v1/limited", [](const httplib::Request&, httplib::Response& res) {
    res.status = 429;
  });
  server.Post("/v1/badjson", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("{\"not_text\": 1}", "application/json");
  });

  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread server_thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  setenv("LANHAR_TEST_KEY", "test-key-123", 1);
  const std::string root = "http://127.0.0.1:" + std::to_string(port);
  const DecodeParams decode;

  {
    HttpBackendConfig cfg;
    cfg.endpoint = root + "/v1/generate";
    cfg.model = "toy-model";
    cfg.api_key_env = "LANHAR_TEST_KEY";
    HttpBackend backend(cfg);
    CHECK(backend.backend_id() == "http_toy-model");
    CHECK(backend.generate("describe this window", decode) == "server says hi");
    CHECK(seen_auth == "Bearer test-key-123");
    CHECK(seen_model == "toy-model");
    CHECK(seen_prompt == "describe this window");
  }
  {
    HttpBackendConfig cfg;
    cfg.endpoint = root + "/v1/overloaded";
    cfg.api_key_env = "LANHAR_TEST_KEY";
    HttpBackend backend(cfg);
    CHECK(code_of([&] { backend.generate("p", decode); }) == ErrorCode::BackendTransient);
  }
  {
    HttpBackendConfig cfg;
    cfg.endpoint = root + "/v1/limited";
    cfg.api_key_env = "LANHAR_TEST_KEY";
    HttpBackend backend(cfg);
    CHECK(code_of([&] { backend.generate("p", decode); }) == ErrorCode::BackendTransient);
  }
  {
    HttpBackendConfig cfg;
    cfg.endpoint = root + "/v1/missing";
    cfg.api_key_env = "LANHAR_TEST_KEY";
    HttpBackend backend(cfg);
    CHECK(code_of([&] { backend.generate("p", decode); }) == ErrorCode::Backend);
  }
  {
    HttpBackendConfig cfg;
    cfg.endpoint = root + "/v1/badjson";
    cfg.api_key_env = "LANHAR_TEST_KEY";
    HttpBackend backend(cfg);
    CHECK(code_of([&] { backend.generate("p", decode); }) == ErrorCode::Parse);
  }
  {
    // Connection refused: nobody listens on the port after shutdown.
    HttpBackendConfig cfg;
    cfg.endpoint = root + "/v1/generate";
    cfg.api_key_env = "LANHAR_TEST_KEY";
    cfg.timeout_ms = 2000;
    HttpBackend backend(cfg);
    server.stop();
    server_thread.join();
    CHECK(code_of([&] { backend.generate("p", decode); }) == ErrorCode::BackendTransient);
  }

  // End-to-end: the generation loop retries a transient endpoint and reports
  // exhaustion as a backend error.
  ResponseCache cache(fresh_dir("http_e2e"));
  HttpBackendConfig cfg;
  cfg.endpoint = root + "/v1/generate";
  cfg.api_key_env = "LANHAR_TEST_KEY";
  cfg.timeout_ms = 2000;
  HttpBackend backend(cfg);
  GenerateOptions opts;
  opts.max_retries = 1;
  opts.sleep_ms = [](double) {};
  CHECK(code_of([&] { generate_interpretation(walking_bundle(), backend, cache, opts); }) ==
        ErrorCode::Backend);
}
