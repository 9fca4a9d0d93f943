#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "thma/review_store.hpp"

namespace thma {

struct ApiResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

// JSON API over a ReviewStore, independent of the socket layer:
//   GET  /api/queue?status=pending&limit=N
//   GET  /api/item/{id}
//   POST /api/item/{id}/decision
//   GET  /api/metrics?window=3600
//   GET  /api/tile/{id}.png
// Tiles are looked up as `<tiles_dir>/<id>.png` with their JSON sidecar.
class ReviewApi {
 public:
  ReviewApi(ReviewStore& store, std::optional<std::filesystem::path> tiles_dir = std::nullopt);

  ApiResponse handle(const std::string& method, const std::string& path,
                     const std::map<std::string, std::string>& query, const std::string& body) const;

  const std::optional<std::filesystem::path>& tiles_dir() const { return tiles_dir_; }

 private:
  ApiResponse queue(const std::map<std::string, std::string>& query) const;
  ApiResponse item(const std::string& id) const;
  ApiResponse decide(const std::string& id, const std::string& body) const;
  ApiResponse metrics(const std::map<std::string, std::string>& query) const;
  ApiResponse tile(const std::string& id) const;
  std::optional<std::filesystem::path> tile_path(const std::string& id) const;

  ReviewStore& store_;
  std::optional<std::filesystem::path> tiles_dir_;
};

// Tile directory recorded in `<store>/store.json`, if any.
std::optional<std::filesystem::path> store_tiles_dir(const std::filesystem::path& store_dir);
void set_store_tiles_dir(const std::filesystem::path& store_dir, const std::filesystem::path& tiles_dir);

// Blocks serving the API until the process is stopped.
void serve(ReviewApi& api, const std::string& host, int port);

}  // namespace thma
