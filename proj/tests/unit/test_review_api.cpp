#include <gtest/gtest.h>

#include <fstream>
#include <iterator>

#include "oracles.hpp"
#include "thma/bev.hpp"
#include "thma/review_api.hpp"

using namespace thma;
using nlohmann::json;

namespace {

Detection pole(const std::string& id, double conf, double x) {
  Detection d;
  d.id = id;
  d.descriptor = make_pole({x, 0, 5}, {x, 0, 0});
  d.confidence = conf;
  d.source = Source::Model;
  d.tile = "tile_0000";
  return d;
}

class ReviewApiTest : public ::testing::Test {
 protected:
  void SetUp() override {
    TileFrame f;
    f.size = 64;
    write_tile(BevTile(f), tiles / "tile_0000.png");
    store.ingest(route(std::vector<Detection>{pole("auto", 0.95, 0.0), pole("p1", 0.5, 0.5), pole("p2", 0.4, 1.0)}, {0.7}));
  }

  ApiResponse get(const std::string& path, std::map<std::string, std::string> q = {}) {
    return api.handle("GET", path, q, "");
  }
  ApiResponse post(const std::string& path, const std::string& body) { return api.handle("POST", path, {}, body); }

  oracle::TempDir root;
  std::filesystem::path tiles = [this] {
    auto p = root / "tiles";
    std::filesystem::create_directories(p);
    return p;
  }();
  ReviewStore store{root / "store"};
  ReviewApi api{store, tiles};
};

}  // namespace

TEST_F(ReviewApiTest, Queue) {
  auto r = get("/api/queue", {{"status", "pending"}});
  ASSERT_EQ(r.status, 200);
  auto j = json::parse(r.body);
  EXPECT_EQ(j["count"], 2);
  EXPECT_EQ(j["items"][0]["id"], "p1");
  EXPECT_EQ(json::parse(get("/api/queue", {{"limit", "1"}}).body)["count"], 1);
  EXPECT_EQ(json::parse(get("/api/queue", {{"status", "all"}}).body)["count"], 2);
  EXPECT_EQ(get("/api/queue", {{"status", "bogus"}}).status, 400);
  EXPECT_EQ(get("/api/queue", {{"limit", "-3"}}).status, 400);
}

TEST_F(ReviewApiTest, ItemWithOverlay) {
  auto r = get("/api/item/p1");
  ASSERT_EQ(r.status, 200);
  auto j = json::parse(r.body);
  EXPECT_EQ(j["status"], "pending");
  EXPECT_EQ(j["tile"]["url"], "/api/tile/tile_0000.png");
  EXPECT_EQ(j["tile"]["size"], 64);
  EXPECT_EQ(j["overlay"]["kind"], "keypoints");
  ASSERT_EQ(j["overlay"]["points"].size(), 2u);
  // 0.5 m ahead of a north-facing tile center: 10 px above the middle row.
  EXPECT_NEAR(j["overlay"]["points"][0][0].get<double>(), 32.0, 1e-9);
  EXPECT_NEAR(j["overlay"]["points"][0][1].get<double>(), 22.0, 1e-9);
  EXPECT_EQ(get("/api/item/missing").status, 404);
}

TEST_F(ReviewApiTest, ItemWithoutTile) {
  std::filesystem::remove(tiles / "tile_0000.png");
  auto j = json::parse(get("/api/item/p1").body);
  EXPECT_TRUE(j["tile"].is_null());
  EXPECT_TRUE(j["overlay"].is_null());
}

TEST_F(ReviewApiTest, Decisions) {
  auto r = post("/api/item/p1/decision", R"({"decision":"accept","reviewer":"a"})");
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(json::parse(r.body)["status"], "accepted");
  EXPECT_EQ(post("/api/item/p1/decision", R"({"decision":"reject"})").status, 409);
  EXPECT_EQ(post("/api/item/zzz/decision", R"({"decision":"reject"})").status, 404);
  EXPECT_EQ(post("/api/item/p2/decision", R"({"decision":"relabel"})").status, 400);
  EXPECT_EQ(post("/api/item/p2/decision", "{not json").status, 400);
  EXPECT_EQ(store.item("p2")->status, ReviewStatus::Pending);

  r = post("/api/item/p2/decision",
           R"({"decision":"relabel","relabel":{"class":"pole","values":[2,0,5,2,0,0]}})");
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(json::parse(r.body)["status"], "relabeled");
  // Overlay now follows the replacement geometry.
  auto j = json::parse(get("/api/item/p2").body);
  EXPECT_NEAR(j["overlay"]["points"][0][1].get<double>(), 32.0 - 40.0, 1e-9);
}

TEST_F(ReviewApiTest, Metrics) {
  auto r = get("/api/metrics");
  ASSERT_EQ(r.status, 200);
  auto j = json::parse(r.body);
  EXPECT_EQ(j["total"], 3);
  EXPECT_NEAR(j["automation_ratio"].get<double>(), 1.0 / 3.0, 1e-12);
  EXPECT_EQ(get("/api/metrics", {{"window", "0"}}).status, 400);
  EXPECT_EQ(get("/api/metrics", {{"window", "abc"}}).status, 400);
  EXPECT_EQ(get("/api/metrics", {{"window", "60"}}).status, 200);
}

TEST_F(ReviewApiTest, TileBytes) {
  auto r = get("/api/tile/tile_0000.png");
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.content_type, "image/png");
  std::ifstream in(tiles / "tile_0000.png", std::ios::binary);
  std::string want((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_EQ(r.body, want);
  EXPECT_EQ(get("/api/tile/nope.png").status, 404);
  EXPECT_EQ(get("/api/tile/../store/events.jsonl.png").status, 400);
  EXPECT_EQ(get("/api/tile/..%2Fx.png").status, 400);
}

TEST_F(ReviewApiTest, UnknownRoute) {
  EXPECT_EQ(get("/api/nothing").status, 404);
  EXPECT_EQ(api.handle("DELETE", "/api/item/p1", {}, "").status, 404);
}

TEST(StoreTilesDir, RoundTrip) {
  oracle::TempDir root;
  EXPECT_FALSE(store_tiles_dir(root.path()).has_value());
  set_store_tiles_dir(root / "s", root / "t");
  EXPECT_EQ(*store_tiles_dir(root / "s"), std::filesystem::absolute(root / "t"));
}
