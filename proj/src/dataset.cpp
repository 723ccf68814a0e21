#include "lanhar/dataset.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "lanhar/error.hpp"
#include "lanhar/toml.hpp"
#include "lanhar/util.hpp"

namespace lanhar::dataset {

using nlohmann::json;
using nlohmann::ordered_json;

FileFormat format_from_string(const std::string& name) {
  if (name == "canonical_csv") return FileFormat::CanonicalCsv;
  if (name == "canonical_jsonl") return FileFormat::CanonicalJsonl;
  raise(ErrorCode::Argument, "unsupported dataset format: " + name);
}

AliasTable AliasTable::defaults() {
  AliasTable t;
  const auto add_all = [&t](const std::string& canonical, std::initializer_list<const char*> raws) {
    for (const char* raw : raws) t.add("*", raw, canonical);
  };
  add_all("walking", {"walk", "walking", "wlk"});
  add_all("sitting", {"sit", "sitting"});
  add_all("standing", {"stand", "standing", "std"});
  add_all("lying", {"lie", "lying", "laying", "lying_down"});
  add_all("going_upstairs", {"stairsup", "upstairs", "walking_upstairs", "up", "climbingup",
                             "going_upstairs", "walk_upstairs", "stair_up"});
  add_all("going_downstairs", {"stairsdown", "downstairs", "walking_downstairs", "down",
                               "climbingdown", "going_downstairs", "walk_downstairs", "stair_down"});
  add_all("jogging", {"jog", "jogging", "run", "running"});
  add_all("biking", {"bike", "biking", "cycling", "cycle"});
  return t;
}

void AliasTable::add(const std::string& dataset_id, const std::string& raw,
                     const std::string& canonical) {
  if (!is_canonical_label(canonical)) {
    raise(ErrorCode::Label, "alias target is not canonical: " + canonical);
  }
  tables_[dataset_id][to_lower(raw)] = canonical;
}

void AliasTable::load_overrides(const std::filesystem::path& path) {
  ordered_json doc;
  if (path.extension() == ".json") {
    doc = ordered_json::parse(read_text_file(path));
  } else {
    doc = toml::parse_file(path);
  }
  for (const auto& [dataset_id, table] : doc.items()) {
    if (!table.is_object()) {
      raise(ErrorCode::Parse, "alias table for '" + dataset_id + "' must map raw to canonical");
    }
    for (const auto& [raw, canonical] : table.items()) {
      if (!canonical.is_string()) {
        raise(ErrorCode::Parse, "alias value for '" + raw + "' must be a string");
      }
      add(dataset_id, raw, canonical.get<std::string>());
    }
  }
}

std::string AliasTable::harmonize(const std::string& raw, const std::string& dataset_id) const {
  const std::string key = to_lower(trim(raw));
  if (auto it = tables_.find(dataset_id); it != tables_.end()) {
    if (auto hit = it->second.find(key); hit != it->second.end()) return hit->second;
  }
  if (auto it = tables_.find("*"); it != tables_.end()) {
    if (auto hit = it->second.find(key); hit != it->second.end()) return hit->second;
  }
  if (is_canonical_label(key)) return key;
  raise(ErrorCode::Label, "unmapped activity label '" + raw + "' (dataset " + dataset_id + ")");
}

std::string harmonize_label(const std::string& raw, const std::string& dataset_id) {
  return AliasTable::defaults().harmonize(raw, dataset_id);
}

namespace {

struct Row {
  std::string dataset_id;
  std::string subject_id;
  double timestamp_s;
  Sample values;
  std::optional<std::string> label;
};

constexpr const char* kCsvColumns[] = {"dataset_id", "subject_id", "timestamp_s", "ax", "ay",
                                       "az",         "gx",         "gy",          "gz"};

Row row_from_fields(const std::vector<std::string>& fields, int line_no) {
  if (fields.size() != 9 && fields.size() != 10) {
    raise(ErrorCode::Parse, "line " + std::to_string(line_no) + ": expected 9 or 10 columns, got " +
                                std::to_string(fields.size()));
  }
  Row row;
  row.dataset_id = trim(fields[0]);
  row.subject_id = trim(fields[1]);
  const auto parse_num = [&](const std::string& field, const char* what) {
    const std::string s = trim(field);
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || errno != 0 || !std::isfinite(v)) {
      raise(ErrorCode::Parse,
            "line " + std::to_string(line_no) + ": invalid " + what + " value '" + field + "'");
    }
    return v;
  };
  row.timestamp_s = parse_num(fields[2], "timestamp_s");
  for (int c = 0; c < kNumChannels; ++c) {
    row.values[static_cast<size_t>(c)] = parse_num(fields[3 + static_cast<size_t>(c)], kChannelNames[c]);
  }
  if (fields.size() == 10 && !trim(fields[9]).empty()) row.label = trim(fields[9]);
  return row;
}

std::vector<Row> read_csv(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  auto lines = split(text, '\n');
  if (lines.empty() || trim(lines[0]).empty()) raise(ErrorCode::Parse, "empty dataset file");

  auto header = split(trim(lines[0]), ',');
  for (auto& h : header) h = trim(h);
  const size_t expected = header.size();
  if (expected != 9 && expected != 10) {
    raise(ErrorCode::Parse, "line 1: header must list 9 or 10 canonical columns");
  }
  for (size_t i = 0; i < 9; ++i) {
    if (header[i] != kCsvColumns[i]) {
      raise(ErrorCode::Parse, "line 1: column " + std::to_string(i + 1) + " must be '" +
                                  kCsvColumns[i] + "', got '" + header[i] + "'");
    }
  }
  if (expected == 10 && header[9] != "label") {
    raise(ErrorCode::Parse, "line 1: column 10 must be 'label'");
  }

  std::vector<Row> rows;
  rows.reserve(lines.size());
  for (size_t i = 1; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    auto fields = split(lines[i], ',');
    rows.push_back(row_from_fields(fields, static_cast<int>(i + 1)));
  }
  return rows;
}

std::vector<Row> read_jsonl(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  auto lines = split(text, '\n');
  std::vector<Row> rows;
  for (size_t i = 0; i < lines.size(); ++i) {
    const std::string line = trim(lines[i]);
    if (line.empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      raise(ErrorCode::Parse, "line " + std::to_string(i + 1) + ": " + e.what());
    }
    std::vector<std::string> fields;
    for (const char* col : kCsvColumns) {
      if (!obj.contains(col)) {
        raise(ErrorCode::Parse,
              "line " + std::to_string(i + 1) + ": missing key '" + std::string(col) + "'");
      }
      const auto& v = obj[col];
      fields.push_back(v.is_string() ? v.get<std::string>() : v.dump());
    }
    if (obj.contains("label") && !obj["label"].is_null()) {
      fields.push_back(obj["label"].get<std::string>());
    }
    rows.push_back(row_from_fields(fields, static_cast<int>(i + 1)));
  }
  return rows;
}

}  // namespace

std::vector<SensorStream> load_dataset(const std::filesystem::path& path, FileFormat format,
                                       const AliasTable& aliases) {
  if (!std::filesystem::exists(path)) {
    raise(ErrorCode::Io, "dataset file not found: " + path.string());
  }
  auto rows = format == FileFormat::CanonicalCsv ? read_csv(path) : read_jsonl(path);
  if (rows.empty()) raise(ErrorCode::Parse, "dataset file has no data rows: " + path.string());

  // Group rows by (dataset, subject, label), preserving file order within a group.
  // A label column split keeps label transitions out of a single stream.
  struct Key {
    std::string dataset, subject, label;
    bool operator<(const Key& o) const {
      return std::tie(dataset, subject, label) < std::tie(o.dataset, o.subject, o.label);
    }
  };
  std::map<Key, std::vector<Row>> groups;
  for (auto& row : rows) {
    Key key{row.dataset_id, row.subject_id, row.label.value_or("")};
    groups[key].push_back(std::move(row));
  }

  std::vector<SensorStream> streams;
  streams.reserve(groups.size());
  for (auto& [key, group] : groups) {
    SensorStream stream;
    stream.dataset_id = key.dataset;
    stream.subject_id = key.subject;
    if (!key.label.empty()) stream.label = aliases.harmonize(key.label, key.dataset);

    double prev_t = -std::numeric_limits<double>::infinity();
    for (const auto& row : group) {
      if (row.timestamp_s <= prev_t) {
        raise(ErrorCode::Parse, "non-monotone timestamps for subject '" + key.subject +
                                    "' in dataset '" + key.dataset + "'");
      }
      prev_t = row.timestamp_s;
      stream.samples.push_back(row.values);
    }
    if (stream.samples.size() < 2) {
      raise(ErrorCode::Parse, "stream for subject '" + key.subject +
                                  "' has fewer than 2 samples; cannot infer sampling rate");
    }
    const double duration = group.back().timestamp_s - group.front().timestamp_s;
    stream.rate_hz = static_cast<double>(stream.samples.size() - 1) / duration;
    streams.push_back(std::move(stream));
  }
  return streams;
}

SensorStream resample(const SensorStream& stream, double target_hz) {
  if (target_hz <= 0.0) raise(ErrorCode::Argument, "target_hz must be positive");
  if (stream.rate_hz <= 0.0) raise(ErrorCode::Argument, "stream rate_hz must be positive");
  if (target_hz > stream.rate_hz * (1.0 + 1e-9)) {
    raise(ErrorCode::Argument, "upsampling not supported: stream at " +
                                   format_double(stream.rate_hz, 3) + " Hz, requested " +
                                   format_double(target_hz, 3) + " Hz");
  }
  const size_t n = stream.samples.size();
  if (n == 0) raise(ErrorCode::Argument, "cannot resample an empty stream");

  SensorStream out;
  out.rate_hz = target_hz;
  out.subject_id = stream.subject_id;
  out.dataset_id = stream.dataset_id;
  out.label = stream.label;

  const double step = stream.rate_hz / target_hz;  // input samples per output sample
  const size_t count = static_cast<size_t>(std::floor(static_cast<double>(n - 1) / step)) + 1;
  out.samples.reserve(count);
  for (size_t j = 0; j < count; ++j) {
    const double pos = static_cast<double>(j) * step;
    const size_t i0 = std::min(static_cast<size_t>(pos), n - 1);
    const size_t i1 = std::min(i0 + 1, n - 1);
    const double frac = pos - static_cast<double>(i0);
    Sample s;
    for (int c = 0; c < kNumChannels; ++c) {
      const size_t ci = static_cast<size_t>(c);
      s[ci] = (1.0 - frac) * stream.samples[i0][ci] + frac * stream.samples[i1][ci];
    }
    out.samples.push_back(s);
  }
  return out;
}

std::vector<IMUWindow> make_windows(const SensorStream& stream, int window_len, int stride) {
  if (window_len < 1) raise(ErrorCode::Argument, "window_len must be >= 1");
  if (stride < 1) raise(ErrorCode::Argument, "stride must be >= 1");

  const int n = static_cast<int>(stream.samples.size());
  std::vector<IMUWindow> windows;
  if (n < window_len) return windows;

  const int count = (n - window_len) / stride + 1;
  windows.reserve(static_cast<size_t>(count));
  for (int w = 0; w < count; ++w) {
    const int start = w * stride;
    IMUWindow win;
    win.data.resize(window_len, kNumChannels);
    for (int r = 0; r < window_len; ++r) {
      for (int c = 0; c < kNumChannels; ++c) {
        win.data(r, c) = stream.samples[static_cast<size_t>(start + r)][static_cast<size_t>(c)];
      }
    }
    win.rate_hz = stream.rate_hz;
    win.label = stream.label;
    win.subject_id = stream.subject_id;
    win.dataset_id = stream.dataset_id;
    win.window_id = stream.dataset_id + "/" + stream.subject_id + "/" +
                    stream.label.value_or("unlabeled") + "/" + std::to_string(start);
    windows.push_back(std::move(win));
  }
  return windows;
}

SplitResult split_source(const std::vector<IMUWindow>& windows, const SplitSpec& spec) {
  if (windows.empty()) raise(ErrorCode::Argument, "split_source requires a non-empty window list");
  if (spec.train_fraction <= 0.0 || spec.train_fraction > 1.0) {
    raise(ErrorCode::Argument, "train_fraction must be in (0, 1]");
  }

  const size_t n = windows.size();
  const size_t train_total =
      std::min(n, static_cast<size_t>(std::llround(spec.train_fraction * static_cast<double>(n))));

  // Stratify by label. Unlabeled windows form their own stratum.
  std::map<std::string, std::vector<size_t>> strata;
  for (size_t i = 0; i < n; ++i) strata[windows[i].label.value_or("")].push_back(i);

  // Largest-remainder apportionment so stratum counts sum to train_total.
  struct Share {
    std::string label;
    size_t base;
    double remainder;
    size_t size;
  };
  std::vector<Share> shares;
  size_t assigned = 0;
  for (const auto& [label, idx] : strata) {
    const double exact = spec.train_fraction * static_cast<double>(idx.size());
    size_t base = static_cast<size_t>(std::floor(exact));
    base = std::min(base, idx.size());
    shares.push_back({label, base, exact - std::floor(exact), idx.size()});
    assigned += base;
  }
  std::sort(shares.begin(), shares.end(), [](const Share& a, const Share& b) {
    if (a.remainder != b.remainder) return a.remainder > b.remainder;
    if (a.size != b.size) return a.size > b.size;
    return a.label < b.label;
  });
  size_t leftover = train_total > assigned ? train_total - assigned : 0;
  for (auto& share : shares) {
    if (leftover == 0) break;
    if (share.base < share.size) {
      ++share.base;
      --leftover;
    }
  }

  Rng rng(derive_seed(spec.seed, "split_source"));
  SplitResult result;
  std::map<std::string, size_t> take;
  for (const auto& share : shares) take[share.label] = share.base;
  for (auto& [label, idx] : strata) {
    rng.shuffle(idx);
    const size_t k = take[label];
    for (size_t i = 0; i < idx.size(); ++i) {
      (i < k ? result.train : result.val).push_back(windows[idx[i]]);
    }
  }

  // Deterministic output order independent of shuffle internals.
  const auto by_id = [](const IMUWindow& a, const IMUWindow& b) { return a.window_id < b.window_id; };
  std::sort(result.train.begin(), result.train.end(), by_id);
  std::sort(result.val.begin(), result.val.end(), by_id);
  return result;
}

void save_windows_jsonl(const std::filesystem::path& path, const std::vector<IMUWindow>& windows) {
  std::string out;
  for (const auto& w : windows) {
    ordered_json obj;
    obj["window_id"] = w.window_id;
    obj["dataset_id"] = w.dataset_id;
    obj["subject_id"] = w.subject_id;
    obj["rate_hz"] = w.rate_hz;
    if (w.label) {
      obj["label"] = *w.label;
    } else {
      obj["label"] = nullptr;
    }
    json data = json::array();
    for (Eigen::Index r = 0; r < w.data.rows(); ++r) {
      json row = json::array();
      for (int c = 0; c < kNumChannels; ++c) row.push_back(w.data(r, c));
      data.push_back(std::move(row));
    }
    obj["data"] = std::move(data);
    out += obj.dump();
    out += '\n';
  }
  write_text_file_atomic(path, out);
}

std::vector<IMUWindow> load_windows_jsonl(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  std::vector<IMUWindow> windows;
  int line_no = 0;
  for (const auto& line : split(text, '\n')) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    json obj;
    try {
      obj = json::parse(t);
    } catch (const json::parse_error& e) {
      raise(ErrorCode::Parse, "windows line " + std::to_string(line_no) + ": " + e.what());
    }
    IMUWindow w;
    w.window_id = obj.at("window_id").get<std::string>();
    w.dataset_id = obj.at("dataset_id").get<std::string>();
    w.subject_id = obj.at("subject_id").get<std::string>();
    w.rate_hz = obj.at("rate_hz").get<double>();
    if (obj.contains("label") && !obj["label"].is_null()) w.label = obj["label"].get<std::string>();
    const auto& data = obj.at("data");
    w.data.resize(static_cast<Eigen::Index>(data.size()), kNumChannels);
    for (size_t r = 0; r < data.size(); ++r) {
      const auto& row = data[r];
      if (row.size() != kNumChannels) {
        raise(ErrorCode::Parse,
              "windows line " + std::to_string(line_no) + ": row has " +
                  std::to_string(row.size()) + " channels, expected 6");
      }
      for (int c = 0; c < kNumChannels; ++c) {
        w.data(static_cast<Eigen::Index>(r), c) = row[static_cast<size_t>(c)].get<double>();
      }
    }
    windows.push_back(std::move(w));
  }
  return windows;
}

}  // namespace lanhar::dataset
