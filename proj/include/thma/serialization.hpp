#pragma once

#include <filesystem>
#include <json.hpp>
#include <vector>

#include "thma/descriptor.hpp"

namespace thma {

// Detection wire format shared by the pipeline stages, the review service and
// the review console:
//   {"id", "class", "values": [...], "slots": [{"s", "values": [...]}],
//    "confidence", "source", "tile"}
nlohmann::json detection_to_json(const Detection& d);
// Parses and validates; throws MalformedJson or InvalidDescriptor.
Detection detection_from_json(const nlohmann::json& j);

// Label-set file: {"detections": [...]}.
nlohmann::json detections_to_json(const std::vector<Detection>& detections);
std::vector<Detection> detections_from_json(const nlohmann::json& j);

std::vector<Detection> load_detections(const std::filesystem::path& path);
void save_detections(const std::vector<Detection>& detections, const std::filesystem::path& path);

nlohmann::json load_json_file(const std::filesystem::path& path);
// Writes to a temporary sibling and renames over the target.
void save_json_file(const nlohmann::json& j, const std::filesystem::path& path);

}  // namespace thma
