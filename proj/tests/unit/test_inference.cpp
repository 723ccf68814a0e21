#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lanhar/error.hpp"
#include "lanhar/inference.hpp"
#include "lanhar/losses.hpp"
#include "lanhar/util.hpp"

using namespace lanhar;
using namespace lanhar::infer;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "lanhar_inference_test" / name;
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

text::TextEncoder tiny_encoder(uint64_t seed = 3) {
  text::TextEncoderConfig cfg;
  cfg.vocab_size = 256;
  cfg.d_model = 24;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.max_len = 16;
  cfg.seed = seed;
  return text::TextEncoder(cfg);
}

std::vector<LabelDescriptions> four_labels() {
  return {
      {"walking", {"steady rhythmic gait", "regular stepping motion"}},
      {"sitting", {"a static resting posture"}},
      {"jogging", {"energetic running motion"}},
      {"lying", {"resting flat and horizontal"}},
  };
}

LabelBank small_bank(const text::TextEncoder& enc, const std::string& ckpt = "textckpt01") {
  return build_label_bank(four_labels(), enc, CategoryTable::defaults(), ckpt);
}

sensor::SensorModel toy_sensor_model(int d_model, const std::string& text_ckpt) {
  sensor::SensorEncoderConfig cfg;
  cfg.d_model = d_model;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.window_len = 24;
  cfg.seed = 5;
  sensor::SensorModel model;
  model.encoder = std::make_unique<sensor::SensorEncoder>(cfg);
  std::vector<IMUWindow> fit_windows;
  IMUWindow w;
  w.data.resize(24, 6);
  for (int i = 0; i < 24; ++i) {
    for (int c = 0; c < 6; ++c) w.data(i, c) = std::sin(0.4 * i + 0.3 * c);
  }
  w.rate_hz = 20.0;
  fit_windows.push_back(w);
  model.normalizer.fit(fit_windows);
  model.rate_hz = 20.0;
  model.sidecar = nlohmann::json{{"text_checkpoint_id", text_ckpt}};
  return model;
}

IMUWindow probe_window(double scale = 1.0) {
  IMUWindow w;
  w.data.resize(24, 6);
  for (int i = 0; i < 24; ++i) {
    for (int c = 0; c < 6; ++c) w.data(i, c) = scale * std::cos(0.7 * i + 0.2 * c);
  }
  w.rate_hz = 20.0;
  w.window_id = "probe";
  return w;
}

}  // namespace

TEST_CASE("bank construction pools variants and enforces uniqueness") {
  const text::TextEncoder enc = tiny_encoder();
  const LabelBank bank = small_bank(enc);

  REQUIRE(bank.entries().size() == 4);
  CHECK(bank.dim() == 24);
  CHECK(bank.text_checkpoint_id() == "textckpt01");
  // Entries are label-sorted.
  CHECK(bank.entries()[0].label == "jogging");
  CHECK(bank.entries()[1].label == "lying");
  CHECK(bank.entries()[2].label == "sitting");
  CHECK(bank.entries()[3].label == "walking");
  for (const BankEntry& e : bank.entries()) {
    CHECK(e.embedding.norm() == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(bank.entries()[3].category_id == CategoryTable::defaults().category_of("walking"));
  CHECK(bank.entries()[2].category_id == CategoryTable::defaults().category_of("sitting"));

  // A single variant reduces to the normalized encoding of that text.
  const EmbeddingVector raw = enc.encode("a static resting posture");
  const EmbeddingVector expected = raw / raw.norm();
  CHECK((bank.find("sitting")->embedding - expected).norm() == 0.0);

  // Pooled variants differ from any single variant's normalized embedding.
  const EmbeddingVector walk_raw = enc.encode("steady rhythmic gait");
  CHECK((bank.find("walking")->embedding - walk_raw / walk_raw.norm()).norm() > 0.0);

  auto dupes = four_labels();
  dupes.push_back({"walking", {"another description"}});
  CHECK(code_of([&] {
          build_label_bank(dupes, enc, CategoryTable::defaults(), "x");
        }) == ErrorCode::Validation);
  CHECK(code_of([&] {
          build_label_bank({{"flying", {"not an activity we know"}}}, enc,
                           CategoryTable::defaults(), "x");
        }) == ErrorCode::Label);
  CHECK(code_of([&] {
          build_label_bank({{"walking", {}}}, enc, CategoryTable::defaults(), "x");
        }) == ErrorCode::Argument);
  CHECK(code_of([&] {
          build_label_bank({}, enc, CategoryTable::defaults(), "x");
        }) == ErrorCode::Argument);
}

TEST_CASE("classification picks the nearest label with deterministic ties") {
  const text::TextEncoder enc = tiny_encoder();
  const LabelBank bank = small_bank(enc);

  // A probe equal to a bank embedding matches itself with similarity 1.
  const EmbeddingVector self = bank.find("jogging")->embedding;
  const Classification hit = classify_embedding(self, bank);
  CHECK(hit.label == "jogging");
  CHECK(hit.similarity == doctest::Approx(1.0).epsilon(1e-12));
  REQUIRE(hit.scores.size() == 4);
  for (const auto& [label, score] : hit.scores) {
    CHECK(score >= -1.0 - 1e-12);
    CHECK(score <= 1.0 + 1e-12);
  }
  CHECK(hit.category_id == CategoryTable::defaults().category_of("jogging"));

  // Positive rescaling changes nothing.
  const Classification scaled = classify_embedding(self * 17.0, bank);
  CHECK(scaled.label == hit.label);
  for (size_t i = 0; i < hit.scores.size(); ++i) {
    CHECK(scaled.scores[i].second == doctest::Approx(hit.scores[i].second).epsilon(1e-12));
  }

  // Identical embeddings for two labels tie; the lexicographically smaller
  // label wins.
  const LabelBank tied = build_label_bank(
      {{"walking", {"identical description"}}, {"sitting", {"identical description"}}}, enc,
      CategoryTable::defaults(), "x");
  const Classification tie =
      classify_embedding(tied.find("walking")->embedding, tied);
  CHECK(tie.label == "sitting");

  // Singleton bank always answers with its one label.
  const LabelBank one = build_label_bank({{"biking", {"pedaling a bicycle"}}}, enc,
                                         CategoryTable::defaults(), "x");
  EmbeddingVector arbitrary = EmbeddingVector::Zero(24);
  arbitrary[0] = -1.0;
  arbitrary[7] = 2.0;
  CHECK(classify_embedding(arbitrary, one).label == "biking");

  // The optional threshold maps weak matches to "unknown".
  const EmbeddingVector anti = -bank.find("walking")->embedding;
  const Classification weak = classify_embedding(anti, bank, 0.9);
  CHECK(weak.label == "unknown");
  CHECK(weak.category_id == 0);
  CHECK(weak.scores.size() == 4);
  const Classification free = classify_embedding(anti, bank);
  CHECK(free.label != "unknown");

  CHECK(code_of([&] { classify_embedding(self, LabelBank()); }) == ErrorCode::Argument);
}

TEST_CASE("adding labels extends the bank without touching existing entries") {
  const text::TextEncoder enc = tiny_encoder();
  const LabelBank bank = small_bank(enc);

  const LabelBank grown = add_labels(
      bank, {{"going_upstairs", {"climbing steps against gravity"}}}, enc,
      CategoryTable::defaults());
  REQUIRE(grown.entries().size() == 5);
  for (const BankEntry& before : bank.entries()) {
    const BankEntry* after = grown.find(before.label);
    REQUIRE(after != nullptr);
    CHECK((after->embedding - before.embedding).norm() == 0.0);
    CHECK(after->category_id == before.category_id);
  }
  CHECK(grown.text_checkpoint_id() == bank.text_checkpoint_id());

  CHECK(code_of([&] {
          add_labels(bank, {{"walking", {"again"}}}, enc, CategoryTable::defaults());
        }) == ErrorCode::Validation);
  CHECK(code_of([&] { add_labels(bank, {}, enc, CategoryTable::defaults()); }) ==
        ErrorCode::Argument);

  // A probe identical to the new label's description is claimed by it.
  const EmbeddingVector probe_raw = enc.encode("climbing steps against gravity");
  const Classification claimed = classify_embedding(probe_raw, grown);
  CHECK(claimed.label == "going_upstairs");
  CHECK(claimed.similarity == doctest::Approx(1.0).epsilon(1e-12));
  // Direct cosine oracle agrees.
  double best = -2.0;
  std::string best_label;
  for (const BankEntry& e : grown.entries()) {
    const double s = losses::cosine_similarity(probe_raw, e.embedding);
    if (s > best) {
      best = s;
      best_label = e.label;
    }
  }
  CHECK(best_label == "going_upstairs");

  // Removing the added label (by rebuilding) restores prior predictions.
  const Classification before = classify_embedding(probe_raw, bank);
  const LabelBank rebuilt = build_label_bank(four_labels(), enc, CategoryTable::defaults(),
                                             bank.text_checkpoint_id());
  const Classification after = classify_embedding(probe_raw, rebuilt);
  CHECK(after.label == before.label);
  CHECK(after.similarity == doctest::Approx(before.similarity).epsilon(1e-15));
}

TEST_CASE("bank files round-trip and reject foreign archives") {
  const fs::path dir = fresh_dir("bank_io");
  const text::TextEncoder enc = tiny_encoder();
  const LabelBank bank = small_bank(enc, "textckpt42");
  const fs::path path = dir / "bank.bin";
  bank.save(path);

  const LabelBank loaded = LabelBank::load(path);
  CHECK(loaded.text_checkpoint_id() == "textckpt42");
  REQUIRE(loaded.entries().size() == bank.entries().size());
  for (size_t i = 0; i < bank.entries().size(); ++i) {
    CHECK(loaded.entries()[i].label == bank.entries()[i].label);
    CHECK(loaded.entries()[i].category_id == bank.entries()[i].category_id);
    CHECK(loaded.entries()[i].variants == bank.entries()[i].variants);
    CHECK((loaded.entries()[i].embedding - bank.entries()[i].embedding).norm() == 0.0);
  }

  write_text_file_atomic(dir / "garbage.bin", "garbage bytes");
  CHECK(code_of([&] { LabelBank::load(dir / "garbage.bin"); }).has_value());
  CHECK(code_of([&] { LabelBank::load(dir / "missing.bin"); }).has_value());
}

TEST_CASE("classify validates the window against the deployed model") {
  const text::TextEncoder enc = tiny_encoder();
  const LabelBank bank = small_bank(enc, "tc1");
  const sensor::SensorModel model = toy_sensor_model(24, "tc1");

  const IMUWindow w = probe_window();
  const Classification a = classify(w, model, bank);
  CHECK(bank.find(a.label) != nullptr);
  CHECK(a.scores.size() == 4);
  const Classification b = classify(w, model, bank);
  CHECK(b.label == a.label);
  CHECK(b.similarity == a.similarity);  // pure function of its inputs

  IMUWindow short_window = w;
  short_window.data.resize(12, 6);
  CHECK(code_of([&] { classify(short_window, model, bank); }) == ErrorCode::Argument);
  IMUWindow wrong_rate = w;
  wrong_rate.rate_hz = 50.0;
  CHECK(code_of([&] { classify(wrong_rate, model, bank); }) == ErrorCode::Argument);

  sensor::SensorModel unfitted = toy_sensor_model(24, "tc1");
  unfitted.normalizer = sensor::Normalizer();
  CHECK(code_of([&] { classify(w, unfitted, bank); }) == ErrorCode::State);
}

TEST_CASE("compatibility checks pair banks with the encoder that made them") {
  const text::TextEncoder enc = tiny_encoder();
  const LabelBank bank = small_bank(enc, "tc1");

  const sensor::SensorModel good = toy_sensor_model(24, "tc1");
  CHECK_FALSE(code_of([&] { verify_compatible(bank, good); }).has_value());

  const sensor::SensorModel wrong_ckpt = toy_sensor_model(24, "tc2");
  CHECK(code_of([&] { verify_compatible(bank, wrong_ckpt); }) == ErrorCode::Validation);

  const sensor::SensorModel wrong_dim = toy_sensor_model(32, "tc1");
  CHECK(code_of([&] { verify_compatible(bank, wrong_dim); }) == ErrorCode::Validation);

  sensor::SensorModel no_provenance = toy_sensor_model(24, "tc1");
  no_provenance.sidecar = nlohmann::json::object();
  CHECK(code_of([&] { verify_compatible(bank, no_provenance); }) == ErrorCode::Validation);
}
