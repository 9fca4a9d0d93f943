#include "thma/review_api.hpp"

#include <httplib.h>

#include <charconv>
#include <fstream>
#include <iterator>

#include "thma/bev.hpp"
#include "thma/error.hpp"
#include "thma/serialization.hpp"

namespace thma {

using nlohmann::json;

namespace {

ApiResponse json_response(int status, const json& j) { return {status, "application/json", j.dump()}; }

ApiResponse error_response(int status, const std::string& message) {
  return json_response(status, {{"error", message}});
}

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotFound: return 404;
    case ErrorCode::AlreadyDecided: return 409;
    case ErrorCode::MalformedDecision:
    case ErrorCode::MalformedJson:
    case ErrorCode::InvalidArgument:
    case ErrorCode::InvalidDescriptor:
    case ErrorCode::ClassMismatch: return 400;
    default: return 500;
  }
}

bool safe_id(const std::string& id) {
  if (id.empty() || id.size() > 200 || id.front() == '.') return false;
  for (char c : id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' ||
                    c == '-' || c == '.';
    if (!ok) return false;
  }
  return id.find("..") == std::string::npos;
}

template <typename T>
std::optional<T> parse_number(const std::string& s) {
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

// Points the console draws for a detection, in descriptor order.
std::vector<Vec3> overlay_points(const DescriptorVector& v) {
  switch (v.cls) {
    case ObjectClass::TrafficSign: {
      try {
        auto c = sign_corners(v);
        return {c.begin(), c.end()};
      } catch (const Error&) {
        return {v.point(0)};
      }
    }
    case ObjectClass::TrafficLight: return {v.point(0)};
    case ObjectClass::Pole:
    case ObjectClass::TrafficCone:
    case ObjectClass::Tunnel: return {v.point(0), v.point(1)};
    default: {
      std::vector<Vec3> pts;
      for (std::size_t k = 0; k < v.point_count(); ++k) pts.push_back(v.point(k));
      return pts;
    }
  }
}

}  // namespace

ReviewApi::ReviewApi(ReviewStore& store, std::optional<std::filesystem::path> tiles_dir)
    : store_(store), tiles_dir_(std::move(tiles_dir)) {}

ApiResponse ReviewApi::handle(const std::string& method, const std::string& path,
                              const std::map<std::string, std::string>& query, const std::string& body) const {
  try {
    constexpr std::string_view kItem = "/api/item/";
    constexpr std::string_view kTile = "/api/tile/";
    constexpr std::string_view kDecision = "/decision";
    if (method == "GET" && path == "/api/queue") return queue(query);
    if (method == "GET" && path == "/api/metrics") return metrics(query);
    if (path.starts_with(kItem)) {
      std::string rest = path.substr(kItem.size());
      if (method == "POST" && rest.ends_with(kDecision)) {
        return decide(rest.substr(0, rest.size() - kDecision.size()), body);
      }
      if (method == "GET" && rest.find('/') == std::string::npos) return item(rest);
    }
    if (method == "GET" && path.starts_with(kTile) && path.ends_with(".png")) {
      return tile(path.substr(kTile.size(), path.size() - kTile.size() - 4));
    }
    return error_response(404, "no route for " + method + " " + path);
  } catch (const Error& e) {
    return error_response(http_status(e.code()), e.what());
  } catch (const std::exception& e) {
    return error_response(500, e.what());
  }
}

ApiResponse ReviewApi::queue(const std::map<std::string, std::string>& query) const {
  std::optional<ReviewStatus> status;
  if (auto it = query.find("status"); it != query.end() && it->second != "all") {
    status = review_status_from_string(it->second);
  }
  std::size_t limit = static_cast<std::size_t>(-1);
  if (auto it = query.find("limit"); it != query.end()) {
    auto n = parse_number<std::size_t>(it->second);
    if (!n) return error_response(400, "limit must be a non-negative integer");
    limit = *n;
  }
  json items = json::array();
  for (const auto& item : store_.items(status, limit)) items.push_back(to_json(item));
  return json_response(200, {{"items", items}, {"count", items.size()}});
}

ApiResponse ReviewApi::item(const std::string& id) const {
  auto found = store_.item(id);
  if (!found) return error_response(404, "no review item " + id);
  json j = to_json(*found);
  j["tile"] = nullptr;
  j["overlay"] = nullptr;

  const std::string& tile_id = found->detection.tile;
  if (auto png = tile_path(tile_id); png && std::filesystem::exists(*png)) {
    try {
      const TileFrame frame = read_tile_frame(*png);
      j["tile"] = {{"id", tile_id}, {"url", "/api/tile/" + tile_id + ".png"}, {"size", frame.size}};
      const auto& shown = found->relabel ? found->relabel->descriptor : found->detection.descriptor;
      json pts = json::array();
      for (const auto& p : overlay_points(shown)) {
        const auto px = world_to_pixel(frame, p.x(), p.y());
        pts.push_back({px.col, px.row});
      }
      j["overlay"] = {{"kind", is_polyline(shown.cls) ? "polyline" : "keypoints"},
                      {"class", to_string(shown.cls)},
                      {"points", pts}};
    } catch (const Error&) {
      // Unreadable sidecar: serve the item without a tile so it stays decidable.
    }
  }
  return json_response(200, j);
}

ApiResponse ReviewApi::decide(const std::string& id, const std::string& body) const {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    return error_response(400, std::string("MalformedDecision: body is not JSON: ") + e.what());
  }
  const Decision decision = decision_from_json(j);
  return json_response(200, to_json(store_.apply_decision(id, decision)));
}

ApiResponse ReviewApi::metrics(const std::map<std::string, std::string>& query) const {
  double window = 3600.0;
  if (auto it = query.find("window"); it != query.end()) {
    auto w = parse_number<double>(it->second);
    if (!w || !(*w > 0.0)) return error_response(400, "window must be a positive number of seconds");
    window = *w;
  }
  return json_response(200, to_json(store_.metrics(window)));
}

ApiResponse ReviewApi::tile(const std::string& id) const {
  if (!safe_id(id)) return error_response(400, "invalid tile id");
  auto png = tile_path(id);
  if (!png || !std::filesystem::is_regular_file(*png)) return error_response(404, "no tile " + id);
  std::ifstream in(*png, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return {200, "image/png", std::move(bytes)};
}

std::optional<std::filesystem::path> ReviewApi::tile_path(const std::string& id) const {
  if (!tiles_dir_ || !safe_id(id)) return std::nullopt;
  return *tiles_dir_ / (id + ".png");
}

std::optional<std::filesystem::path> store_tiles_dir(const std::filesystem::path& store_dir) {
  const auto meta = store_dir / "store.json";
  if (!std::filesystem::exists(meta)) return std::nullopt;
  const json j = load_json_file(meta);
  if (!j.is_object() || !j.contains("tiles_dir") || !j["tiles_dir"].is_string()) return std::nullopt;
  std::filesystem::path p = j["tiles_dir"].get<std::string>();
  return p.is_relative() ? store_dir / p : p;
}

void set_store_tiles_dir(const std::filesystem::path& store_dir, const std::filesystem::path& tiles_dir) {
  std::filesystem::create_directories(store_dir);
  save_json_file({{"tiles_dir", std::filesystem::absolute(tiles_dir).string()}}, store_dir / "store.json");
}

void serve(ReviewApi& api, const std::string& host, int port) {
  httplib::Server server;
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
  auto dispatch = [&api](const httplib::Request& req, httplib::Response& res) {
    std::map<std::string, std::string> query;
    for (const auto& [k, v] : req.params) query.emplace(k, v);
    const ApiResponse out = api.handle(req.method, req.path, query, req.body);
    res.status = out.status;
    res.set_content(out.body, out.content_type);
  };
  server.Get(".*", dispatch);
  server.Post(".*", dispatch);
  server.Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  if (!server.listen(host, port)) throw Error(ErrorCode::Io, "cannot listen on " + host + ":" + std::to_string(port));
}

}  // namespace thma
