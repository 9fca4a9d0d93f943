#include "thma/distill.hpp"

#include <algorithm>
#include <tuple>
#include <unordered_map>
#include <unordered_set>

#include "thma/error.hpp"
#include "thma/serialization.hpp"

namespace thma {

LabelSet::LabelSet(std::vector<Detection> items) : items_(std::move(items)) {
  std::unordered_set<std::string> ids;
  for (const auto& d : items_) {
    if (!ids.insert(d.id).second) throw Error(ErrorCode::DuplicateItem, "duplicate label id " + d.id);
  }
}

void MatchConfig::validate() const {
  if (!(t_low >= 0.0 && t_low <= 1.0 && t_high >= 0.0 && t_high <= 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "confidence thresholds must lie in [0, 1]");
  }
  if (!(t_low <= t_high)) throw Error(ErrorCode::InvalidConfig, "t_low must not exceed t_high");
  if (!(distance_threshold > 0.0)) throw Error(ErrorCode::InvalidConfig, "distance threshold must be > 0");
}

LabelSet threshold_subset(const LabelSet& outputs, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw Error(ErrorCode::InvalidArgument, "threshold outside [0, 1]");
  std::vector<Detection> kept;
  for (const auto& d : outputs) {
    if (d.confidence > t) kept.push_back(d);
  }
  return LabelSet(std::move(kept));
}

std::vector<MatchPair> match(const LabelSet& gt, const LabelSet& outputs, const MatchConfig& config) {
  std::vector<MatchPair> candidates;
  for (const auto& g : gt) {
    for (const auto& o : outputs) {
      if (g.cls() != o.cls()) continue;
      const double d = descriptor_distance(g.descriptor, o.descriptor);
      if (d <= config.distance_threshold) candidates.push_back({g.id, o.id, d});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const MatchPair& a, const MatchPair& b) {
    return std::tie(a.distance, a.gt_id, a.output_id) < std::tie(b.distance, b.gt_id, b.output_id);
  });

  std::unordered_set<std::string> used_gt;
  std::unordered_set<std::string> used_out;
  std::vector<MatchPair> pairs;
  for (auto& c : candidates) {
    if (used_gt.contains(c.gt_id) || used_out.contains(c.output_id)) continue;
    used_gt.insert(c.gt_id);
    used_out.insert(c.output_id);
    pairs.push_back(std::move(c));
  }
  return pairs;
}

std::string_view to_string(Provenance p) {
  return p == Provenance::ConfirmedGT ? "confirmed_gt" : "high_conf_model";
}

std::size_t RefinedLabelSet::count(Provenance p) const {
  return static_cast<std::size_t>(
      std::count_if(items.begin(), items.end(), [p](const RefinedItem& i) { return i.provenance == p; }));
}

RefinedLabelSet refine_with_matching(const LabelSet& gt, const LabelSet& outputs, const MatchConfig& config,
                                     const std::vector<MatchPair>& low_matching) {
  const LabelSet high = threshold_subset(outputs, config.t_high);

  std::unordered_set<std::string> confirmed_gt;
  std::unordered_set<std::string> absorbed_outputs;
  for (const auto& pair : low_matching) {
    confirmed_gt.insert(pair.gt_id);
    absorbed_outputs.insert(pair.output_id);
  }

  RefinedLabelSet result;
  for (const auto& g : gt) {
    if (confirmed_gt.contains(g.id)) result.items.push_back({g, Provenance::ConfirmedGT});
  }
  for (const auto& o : high) {
    if (!absorbed_outputs.contains(o.id)) result.items.push_back({o, Provenance::HighConfModel});
  }
  return result;
}

RefinedLabelSet refine(const LabelSet& gt, const LabelSet& outputs, const MatchConfig& config) {
  config.validate();
  const LabelSet low = threshold_subset(outputs, config.t_low);
  return refine_with_matching(gt, outputs, config, match(gt, low, config));
}

nlohmann::json refined_to_json(const RefinedLabelSet& refined) {
  auto arr = nlohmann::json::array();
  for (const auto& item : refined.items) {
    auto j = detection_to_json(item.detection);
    j["provenance"] = to_string(item.provenance);
    arr.push_back(std::move(j));
  }
  return {{"detections", std::move(arr)}};
}

}  // namespace thma
