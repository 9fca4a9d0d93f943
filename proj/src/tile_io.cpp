#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <json.hpp>
#include <string>

#include "thma/bev.hpp"
#include "thma/error.hpp"

namespace thma {

namespace {

using nlohmann::json;

[[noreturn]] void malformed(const std::filesystem::path& path, const std::string& why) {
  throw Error(ErrorCode::MalformedTileFile, path.string() + ": " + why);
}

void write_rgb_png(const std::filesystem::path& path, const std::vector<std::uint8_t>& rgb, int size) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(size);
  image.height = static_cast<png_uint_32>(size);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, rgb.data(), 0, nullptr)) {
    std::string why = image.message;
    png_image_free(&image);
    throw Error(ErrorCode::Io, "cannot write " + path.string() + ": " + why);
  }
}

// libpng's low-level writer reports errors by longjmp; only trivially
// destructible state is touched between setjmp and the jump.
bool write_bitmask_png(const char* path, const std::uint8_t* mask, png_uint_32 size, png_byte* row) {
  FILE* fp = std::fopen(path, "wb");
  if (fp == nullptr) return false;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    return false;
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, size, size, 1, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const png_uint_32 row_bytes = (size + 7) / 8;
  for (png_uint_32 r = 0; r < size; ++r) {
    for (png_uint_32 b = 0; b < row_bytes; ++b) row[b] = 0;
    for (png_uint_32 c = 0; c < size; ++c) {
      if (mask[static_cast<std::size_t>(r) * size + c] != 0) {
        row[c / 8] = static_cast<png_byte>(row[c / 8] | (0x80u >> (c % 8)));
      }
    }
    png_write_row(png, row);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return std::fclose(fp) == 0;
}

std::vector<std::uint8_t> read_png(const std::filesystem::path& path, png_uint_32 format, int expected_size,
                                   int channels) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    std::string why = image.message;
    png_image_free(&image);
    malformed(path, why);
  }
  if (image.width != static_cast<png_uint_32>(expected_size) ||
      image.height != static_cast<png_uint_32>(expected_size)) {
    png_image_free(&image);
    malformed(path, "dimensions do not match sidecar size");
  }
  image.format = format;
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(expected_size) * expected_size * channels);
  if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
    std::string why = image.message;
    png_image_free(&image);
    malformed(path, why);
  }
  return pixels;
}

json frame_to_json(const TileFrame& f) {
  return json{{"center", {f.center_x, f.center_y}}, {"heading", f.heading},
              {"resolution", f.resolution},        {"size", f.size},
              {"ground_ref_z", f.ground_ref_z},    {"z_span", f.z_span}};
}

}  // namespace

std::filesystem::path tile_sidecar_path(const std::filesystem::path& png_path) {
  auto p = png_path;
  return p.replace_extension(".json");
}

std::filesystem::path tile_occupancy_path(const std::filesystem::path& png_path) {
  auto p = png_path;
  return p.replace_extension(".occ.png");
}

void write_tile(const BevTile& tile, const std::filesystem::path& path) {
  tile.frame.validate();
  const auto n = static_cast<std::size_t>(tile.frame.size);
  if (tile.channels.size() != n * n * BevTile::kChannels || tile.occupancy.size() != n * n) {
    throw Error(ErrorCode::InvalidArgument, "tile buffers do not match frame size");
  }
  write_rgb_png(path, tile.channels, tile.frame.size);
  std::vector<png_byte> row((n + 7) / 8);
  const auto occ = tile_occupancy_path(path);
  if (!write_bitmask_png(occ.c_str(), tile.occupancy.data(), static_cast<png_uint_32>(n), row.data())) {
    throw Error(ErrorCode::Io, "cannot write " + occ.string());
  }
  std::ofstream sidecar(tile_sidecar_path(path), std::ios::trunc);
  if (!sidecar) throw Error(ErrorCode::Io, "cannot write " + tile_sidecar_path(path).string());
  sidecar << frame_to_json(tile.frame).dump(2) << '\n';
}

TileFrame read_tile_frame(const std::filesystem::path& png_path) {
  const auto path = tile_sidecar_path(png_path);
  std::ifstream in(path);
  if (!in) malformed(path, "missing sidecar");
  TileFrame f;
  try {
    const json j = json::parse(in);
    const auto& center = j.at("center");
    if (!center.is_array() || center.size() != 2) malformed(path, "center must be [x, y]");
    f.center_x = center[0].get<double>();
    f.center_y = center[1].get<double>();
    f.heading = j.at("heading").get<double>();
    f.resolution = j.at("resolution").get<double>();
    f.size = j.at("size").get<int>();
    f.ground_ref_z = j.at("ground_ref_z").get<double>();
    f.z_span = j.at("z_span").get<double>();
    f.validate();
  } catch (const json::exception& e) {
    malformed(path, e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::MalformedTileFile) throw;
    malformed(path, e.what());
  }
  return f;
}

BevTile read_tile(const std::filesystem::path& path) {
  BevTile tile(read_tile_frame(path));
  tile.channels = read_png(path, PNG_FORMAT_RGB, tile.frame.size, 3);
  auto occ = read_png(tile_occupancy_path(path), PNG_FORMAT_GRAY, tile.frame.size, 1);
  for (std::size_t i = 0; i < occ.size(); ++i) tile.occupancy[i] = occ[i] != 0 ? 1 : 0;
  return tile;
}

}  // namespace thma
