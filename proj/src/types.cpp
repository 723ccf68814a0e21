#include "lanhar/types.hpp"

#include <algorithm>

#include "lanhar/error.hpp"

namespace lanhar {

const std::vector<std::string>& canonical_labels() {
  static const std::vector<std::string> labels = {
      "walking", "sitting", "standing", "lying",
      "going_upstairs", "going_downstairs", "jogging", "biking"};
  return labels;
}

bool is_canonical_label(const std::string& label) {
  const auto& labels = canonical_labels();
  return std::find(labels.begin(), labels.end(), label) != labels.end();
}

const std::vector<std::string>& common_activities() {
  static const std::vector<std::string> labels = {"walking", "going_upstairs", "going_downstairs",
                                                  "sitting"};
  return labels;
}

CategoryTable CategoryTable::defaults() {
  return CategoryTable({{"walking", 1},
                        {"jogging", 1},
                        {"biking", 1},
                        {"sitting", 2},
                        {"standing", 2},
                        {"lying", 2},
                        {"going_upstairs", 3},
                        {"going_downstairs", 3}});
}

int CategoryTable::category_of(const std::string& label) const {
  auto it = map_.find(label);
  if (it == map_.end()) raise(ErrorCode::Label, "label has no category: " + label);
  return it->second;
}

}  // namespace lanhar
