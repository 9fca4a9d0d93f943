#include "thma/serialization.hpp"

#include <fstream>
#include <unordered_set>

#include "thma/error.hpp"

namespace thma {

using nlohmann::json;

namespace {

std::vector<double> values_from(const json& j) {
  if (!j.is_array()) throw Error(ErrorCode::MalformedJson, "'values' must be an array");
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_number()) throw Error(ErrorCode::MalformedJson, "'values' must hold numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

}  // namespace

json detection_to_json(const Detection& d) {
  json j{{"id", d.id},
         {"class", to_string(d.cls())},
         {"values", d.descriptor.values},
         {"confidence", d.confidence},
         {"source", to_string(d.source)}};
  if (!d.multi.slots.empty()) {
    json slots = json::array();
    for (const auto& slot : d.multi.slots) {
      json s{{"s", slot.activation}, {"values", slot.vector.values}};
      if (slot.vector.cls != d.cls()) s["class"] = to_string(slot.vector.cls);
      slots.push_back(std::move(s));
    }
    j["slots"] = std::move(slots);
  }
  if (!d.tile.empty()) j["tile"] = d.tile;
  return j;
}

Detection detection_from_json(const json& j) {
  Detection d;
  try {
    if (!j.is_object()) throw Error(ErrorCode::MalformedJson, "detection must be an object");
    d.id = j.at("id").get<std::string>();
    d.descriptor.cls = object_class_from_string(j.at("class").get<std::string>());
    d.descriptor.values = values_from(j.at("values"));
    d.confidence = j.at("confidence").get<double>();
    d.source = source_from_string(j.value("source", std::string("model")));
    d.tile = j.value("tile", std::string());
    if (auto it = j.find("slots"); it != j.end() && !it->is_null()) {
      if (!it->is_array()) throw Error(ErrorCode::MalformedJson, "'slots' must be an array");
      for (const auto& s : *it) {
        Slot slot;
        slot.activation = s.at("s").get<double>();
        slot.vector.cls = s.contains("class") ? object_class_from_string(s.at("class").get<std::string>())
                                              : d.descriptor.cls;
        slot.vector.values = values_from(s.at("values"));
        d.multi.slots.push_back(std::move(slot));
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedJson, std::string("detection: ") + e.what());
  }
  validate(d);
  return d;
}

json detections_to_json(const std::vector<Detection>& detections) {
  json arr = json::array();
  for (const auto& d : detections) arr.push_back(detection_to_json(d));
  return json{{"detections", std::move(arr)}};
}

std::vector<Detection> detections_from_json(const json& j) {
  const json* arr = &j;
  if (j.is_object()) {
    auto it = j.find("detections");
    if (it == j.end()) throw Error(ErrorCode::MalformedJson, "missing 'detections'");
    arr = &*it;
  }
  if (!arr->is_array()) throw Error(ErrorCode::MalformedJson, "'detections' must be an array");
  std::vector<Detection> out;
  std::unordered_set<std::string> ids;
  for (const auto& item : *arr) {
    out.push_back(detection_from_json(item));
    if (!ids.insert(out.back().id).second) {
      throw Error(ErrorCode::DuplicateItem, "duplicate detection id " + out.back().id);
    }
  }
  return out;
}

json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedJson, path.string() + ": " + e.what());
  }
}

void save_json_file(const json& j, const std::filesystem::path& path) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot create " + tmp.string());
    out << j.dump(2) << '\n';
    if (!out) throw Error(ErrorCode::Io, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot rename onto " + path.string() + ": " + ec.message());
}

std::vector<Detection> load_detections(const std::filesystem::path& path) {
  return detections_from_json(load_json_file(path));
}

void save_detections(const std::vector<Detection>& detections, const std::filesystem::path& path) {
  save_json_file(detections_to_json(detections), path);
}

}  // namespace thma
