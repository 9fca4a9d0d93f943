#pragma once

#include <cstddef>
#include <json.hpp>
#include <string>
#include <string_view>
#include <vector>

#include "thma/descriptor.hpp"

namespace thma {

// Detections with unique ids.
class LabelSet {
 public:
  LabelSet() = default;
  explicit LabelSet(std::vector<Detection> items);  // throws DuplicateItem

  const std::vector<Detection>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

 private:
  std::vector<Detection> items_;
};

struct MatchConfig {
  double distance_threshold = 0.5;  // meters, descriptor_distance gate
  double t_low = 0.3;
  double t_high = 0.8;

  void validate() const;
};

// Items with confidence strictly above t, in input order.
LabelSet threshold_subset(const LabelSet& outputs, double t);

struct MatchPair {
  std::string gt_id;
  std::string output_id;
  double distance = 0.0;

  friend bool operator==(const MatchPair&, const MatchPair&) = default;
};

// Greedy one-to-one matching over same-class pairs within the distance gate,
// nearest first; ties resolved by (gt id, output id).
std::vector<MatchPair> match(const LabelSet& gt, const LabelSet& outputs, const MatchConfig& config);

enum class Provenance { ConfirmedGT, HighConfModel };
std::string_view to_string(Provenance p);

struct RefinedItem {
  Detection detection;
  Provenance provenance = Provenance::ConfirmedGT;
};

struct RefinedLabelSet {
  std::vector<RefinedItem> items;

  std::size_t count(Provenance p) const;
  std::size_t size() const { return items.size(); }
};

// (gt matched into the low-confidence subset) union (high-confidence outputs
// not matched to an included gt item). Gt geometry wins for matched pairs.
RefinedLabelSet refine(const LabelSet& gt, const LabelSet& outputs, const MatchConfig& config);

// Same as refine but with an externally supplied gt <-> S_l matching.
RefinedLabelSet refine_with_matching(const LabelSet& gt, const LabelSet& outputs, const MatchConfig& config,
                                     const std::vector<MatchPair>& low_matching);

nlohmann::json refined_to_json(const RefinedLabelSet& refined);

}  // namespace thma
