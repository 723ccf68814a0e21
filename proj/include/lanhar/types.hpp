#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace lanhar {

inline constexpr int kNumChannels = 6;
inline constexpr const char* kChannelNames[kNumChannels] = {"ax", "ay", "az", "gx", "gy", "gz"};
inline constexpr double kDefaultRateHz = 20.0;

// Row-major so a window serializes in sample order.
using WindowMatrix = Eigen::Matrix<double, Eigen::Dynamic, kNumChannels, Eigen::RowMajor>;

// One 6-channel sample: accelerometer (m/s^2) then gyroscope (rad/s).
using Sample = std::array<double, kNumChannels>;

struct SensorStream {
  std::vector<Sample> samples;
  double rate_hz = 0.0;
  std::string subject_id;
  std::string dataset_id;
  std::optional<std::string> label;  // canonical activity name when present
};

struct IMUWindow {
  WindowMatrix data;  // window_len x 6
  double rate_hz = kDefaultRateHz;
  std::optional<std::string> label;
  std::string window_id;  // unique within a corpus
  std::string subject_id;
  std::string dataset_id;
};

struct SplitSpec {
  double train_fraction = 0.8;  // in (0, 1]
  uint64_t seed = 0;
};

// Canonical activity vocabulary and the similarity categories used for
// category-level accuracy and the category contrastive terms.
const std::vector<std::string>& canonical_labels();
bool is_canonical_label(const std::string& label);

// The four activities shared by all supported datasets.
const std::vector<std::string>& common_activities();

class CategoryTable {
 public:
  // Default grouping: 1 = locomotion (walking, jogging, biking),
  // 2 = stationary (sitting, standing, lying), 3 = stairs.
  static CategoryTable defaults();

  explicit CategoryTable(std::map<std::string, int> mapping) : map_(std::move(mapping)) {}

  // Throws Error(Label) for labels outside the table.
  int category_of(const std::string& label) const;
  bool contains(const std::string& label) const { return map_.count(label) > 0; }
  const std::map<std::string, int>& mapping() const { return map_; }

 private:
  std::map<std::string, int> map_;
};

using EmbeddingVector = Eigen::VectorXd;

}  // namespace lanhar
