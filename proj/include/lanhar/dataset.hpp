#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lanhar/types.hpp"

namespace lanhar::dataset {

enum class FileFormat { CanonicalCsv, CanonicalJsonl };

FileFormat format_from_string(const std::string& name);

// Alias tables map raw dataset label spellings to canonical activity names.
// Lookup order: per-dataset table, then the "*" table, then identity for
// strings that are already canonical.
class AliasTable {
 public:
  // Ships the spellings used by the common public HAR datasets.
  static AliasTable defaults();

  void add(const std::string& dataset_id, const std::string& raw, const std::string& canonical);

  // Merge entries from a structured config file (TOML/JSON: dataset_id -> {raw = canonical}).
  void load_overrides(const std::filesystem::path& path);

  std::string harmonize(const std::string& raw, const std::string& dataset_id) const;

 private:
  std::map<std::string, std::map<std::string, std::string>> tables_;
};

std::string harmonize_label(const std::string& raw, const std::string& dataset_id);

// Reads a canonical CSV/JSONL recording file and groups rows into one stream
// per (dataset_id, subject_id, label) so a window never spans a label change.
// Sampling rates are inferred from timestamps.
std::vector<SensorStream> load_dataset(const std::filesystem::path& path, FileFormat format,
                                       const AliasTable& aliases = AliasTable::defaults());

// Linear interpolation onto a uniform grid at target_hz. Downsampling only.
SensorStream resample(const SensorStream& stream, double target_hz = kDefaultRateHz);

std::vector<IMUWindow> make_windows(const SensorStream& stream, int window_len, int stride);

struct SplitResult {
  std::vector<IMUWindow> train;
  std::vector<IMUWindow> val;
};

// Deterministic stratified split; |train| == round(train_fraction * N) overall.
SplitResult split_source(const std::vector<IMUWindow>& windows, const SplitSpec& spec);

// JSONL persistence for windowed corpora (one window per line).
void save_windows_jsonl(const std::filesystem::path& path, const std::vector<IMUWindow>& windows);
std::vector<IMUWindow> load_windows_jsonl(const std::filesystem::path& path);

}  // namespace lanhar::dataset
