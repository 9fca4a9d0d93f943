// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <Eigen/Geometry>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "thma/bev.hpp"
#include "thma/descriptor.hpp"
#include "thma/distill.hpp"
#include "thma/pipeline.hpp"
#include "thma/review_store.hpp"
#include "thma/segnumerics.hpp"
#include "thma/serialization.hpp"
#include "thma/spatial_index.hpp"
#include "thma/synth.hpp"

using namespace thma;
using Steady = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    if (!ok && pass) detail << "first failure: " << what << "; ";
    pass = pass && ok;
  }
};

double seconds_since(Steady::time_point t0) {
  return std::chrono::duration<double>(Steady::now() - t0).count();
}

TileFrame random_frame(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> c(-500, 500), h(-std::numbers::pi, std::numbers::pi), res(0.02, 0.2),
      z(-20, 80), span(2, 12);
  TileFrame f;
  f.center_x = c(rng);
  f.center_y = c(rng);
  f.heading = h(rng);
  f.resolution = res(rng);
  f.size = 8 + static_cast<int>(rng() % 121);
  f.ground_ref_z = z(rng);
  f.z_span = span(rng);
  return f;
}

std::vector<Point3> cloud_around(const TileFrame& f, std::size_t n, std::mt19937_64& rng) {
  const double reach = f.footprint() * 0.8;
  std::uniform_real_distribution<double> xy(-reach, reach), z(-0.7, 0.7);
  std::vector<Point3> pts(n);
  for (auto& p : pts) {
    p.x = f.center_x + xy(rng);
    p.y = f.center_y + xy(rng);
    p.z = f.ground_ref_z + z(rng) * f.z_span;  // some outside the window on both sides
    p.intensity = static_cast<std::uint16_t>(rng() % 300);
    p.time = 0.0;
  }
  return pts;
}

Outcome raster_oracle() {
  Outcome o;
  std::mt19937_64 rng(101);
  const auto t0 = Steady::now();
  std::size_t total_points = 0;
  for (int c = 0; c < 200; ++c) {
    const TileFrame f = random_frame(rng);
    const std::size_t n = 1 + rng() % 50000;
    total_points += n;
    const auto pts = cloud_around(f, n, rng);
    const PointCloud cloud(pts, Frame::PlanarMeters);
    const GridIndex index(cloud, 1.0 + static_cast<double>(rng() % 5));
    const bool direct = rasterize(cloud, f) == oracle::rasterize(pts, f);
    const bool indexed = rasterize(index, f) == oracle::rasterize(pts, f);
    o.check(direct && indexed, "case " + std::to_string(c));
  }
  const double secs = seconds_since(t0);
  o.check(secs < 60.0, "runtime");
  o.detail << "200 cases, " << total_points << " points, " << secs << " s";
  return o;
}

Outcome raster_geometry() {
  Outcome o;
  std::mt19937_64 rng(202);
  int rot = 0, perm = 0;
  for (int c = 0; c < 100; ++c) {
    // Rotation: points at pixel centers at least one pixel from the border.
    TileFrame f = random_frame(rng);
    std::uniform_int_distribution<int> pix(1, f.size - 2);
    std::uniform_real_distribution<double> zz(-0.45, 0.45), th(-std::numbers::pi, std::numbers::pi);
    std::vector<Point3> pts(1 + rng() % 2000);
    for (auto& p : pts) {
      const auto [x, y] = pixel_to_world(f, pix(rng) + 0.5, pix(rng) + 0.5);
      p = {x, y, f.ground_ref_z + zz(rng) * f.z_span, std::uint16_t(rng() % 256), 0};
    }
    const double theta = th(rng);
    TileFrame g = f;
    g.heading = f.heading + theta;
    auto turned = pts;
    for (auto& p : turned) {
      const double dx = p.x - f.center_x, dy = p.y - f.center_y;
      p.x = f.center_x + dx * std::cos(theta) - dy * std::sin(theta);
      p.y = f.center_y + dx * std::sin(theta) + dy * std::cos(theta);
    }
    const auto a = rasterize(PointCloud(pts, Frame::PlanarMeters), f);
    const auto b = rasterize(PointCloud(turned, Frame::PlanarMeters), g);
    const bool rot_ok = a.channels == b.channels && a.occupancy == b.occupancy;
    rot += rot_ok;
    o.check(rot_ok, "rotation case " + std::to_string(c));

    // Permutation: arbitrary cloud, shuffled.
    const TileFrame h = random_frame(rng);
    auto cloud = cloud_around(h, 1 + rng() % 20000, rng);
    const auto before = rasterize(PointCloud(cloud, Frame::PlanarMeters), h);
    std::shuffle(cloud.begin(), cloud.end(), rng);
    const bool perm_ok = rasterize(PointCloud(cloud, Frame::PlanarMeters), h) == before;
    perm += perm_ok;
    o.check(perm_ok, "permutation case " + std::to_string(c));
  }
  o.detail << "rotation " << rot << "/100, permutation " << perm << "/100";
  return o;
}

Outcome bev_constants(const std::filesystem::path& run_dir) {
  Outcome o;
  std::size_t tiles = 0, occupied = 0;
  const std::size_t expected = load_json_file(run_dir / "report.json")["counts"]["tiles"].get<std::size_t>();
  for (std::size_t k = 0; k < expected; ++k) {
    const auto t = read_tile(run_dir / "tiles" / (tile_id(k) + ".png"));
    ++tiles;
    o.check(t.frame.size == 1024, "tile size");
    o.check(t.frame.resolution == 0.05, "resolution");
    o.check(t.channels.size() == 1024u * 1024u * 3u, "channel buffer");
    for (int r = 0; r < t.size(); ++r) {
      for (int c = 0; c < t.size(); ++c) {
        if (!t.occupied(r, c)) continue;
        ++occupied;
        if (t.at(r, c, BevTile::HighestZ) < t.at(r, c, BevTile::LowestZ)) {
          o.check(false, "channel1 < channel2");
        }
      }
    }
  }
  o.check(tiles > 0, "no tiles");
  o.detail << tiles << " tiles of 1024x1024 at 0.05 m/px, " << occupied << " occupied pixels checked";
  return o;
}

Detection pole_det(const std::string& id, double x, double y, double conf) {
  Detection d;
  d.id = id;
  d.descriptor = make_pole({x, y, 5}, {x, y, 0});
  d.confidence = conf;
  d.source = Source::Model;
  return d;
}

LabelSet random_set(std::mt19937_64& rng, const std::string& prefix, int n, bool gt) {
  std::uniform_real_distribution<double> x(0, 6), c(0, 1);
  std::vector<Detection> v;
  for (int i = 0; i < n; ++i) v.push_back(pole_det(prefix + std::to_string(i), x(rng), x(rng) * 0.1, gt ? 1.0 : c(rng)));
  return LabelSet(v);
}

std::set<std::string> ids(const LabelSet& s) {
  std::set<std::string> out;
  for (const auto& d : s) out.insert(d.id);
  return out;
}

std::set<std::string> ids(const RefinedLabelSet& s, std::optional<Provenance> p = std::nullopt) {
  std::set<std::string> out;
  for (const auto& it : s.items)
    if (!p || it.provenance == *p) out.insert(it.detection.id);
  return out;
}

Outcome distillation() {
  Outcome o;
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 1000; ++i) {
    const auto gt = random_set(rng, "g", rng() % 9, true);
    const auto out = random_set(rng, "o", rng() % 9, false);
    const double a = u(rng), b = u(rng);
    const MatchConfig cfg{0.5, std::min(a, b), std::max(a, b)};
    const auto sl = ids(threshold_subset(out, cfg.t_low));
    for (const auto& id : ids(threshold_subset(out, cfg.t_high))) o.check(sl.contains(id), "S_h not in S_l");
    o.check(refine(gt, LabelSet(), cfg).size() == 0, "empty outputs");
    const auto r = refine(gt, out, cfg);
    o.check(r.size() <= gt.size() + threshold_subset(out, cfg.t_high).size(), "size bound");

    const double lower_high = cfg.t_low + (cfg.t_high - cfg.t_low) * u(rng);
    const auto r_low = refine(gt, out, {0.5, cfg.t_low, lower_high});
    for (const auto& id : ids(r, Provenance::HighConfModel)) {
      o.check(ids(r_low, Provenance::HighConfModel).contains(id), "lowering t_high removed " + id);
    }
    const double raised_low = cfg.t_low + (cfg.t_high - cfg.t_low) * u(rng);
    const auto r_raised = refine(gt, out, {0.5, raised_low, cfg.t_high});
    for (const auto& id : ids(r_raised, Provenance::ConfirmedGT)) {
      o.check(ids(r, Provenance::ConfirmedGT).contains(id), "raising t_low added " + id);
    }
  }

  int agreeing = 0, divergent = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto gt = random_set(rng, "g", rng() % 7, true);
    const auto out = random_set(rng, "o", rng() % 7, false);
    const MatchConfig cfg{0.5, 0.3, 0.8};
    const auto sl = threshold_subset(out, cfg.t_low);
    const auto greedy = match(gt, sl, cfg);
    const auto best = oracle::best_matching(gt, sl, cfg);
    std::set<std::pair<std::string, std::string>> kg, kb;
    for (const auto& p : greedy) kg.emplace(p.gt_id, p.output_id);
    for (const auto& p : best) kb.emplace(p.gt_id, p.output_id);
    if (kg != kb) {
      ++divergent;
      continue;
    }
    ++agreeing;
    o.check(ids(refine(gt, out, cfg)) == ids(refine_with_matching(gt, out, cfg, best)), "membership");
  }
  o.detail << "1000 property instances; brute force: " << agreeing << " agreeing, " << divergent
           << " divergent (greedy not optimal, excluded)";
  return o;
}

double angle_gap(double a, double b) {
  return std::abs(std::remainder(a - b, 2.0 * std::numbers::pi));
}

Outcome descriptor_geometry() {
  Outcome o;
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> u(-50, 50), th(-std::numbers::pi, std::numbers::pi), r(0.05, 2.0);
  double worst_yaw = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Vec3 bottom(u(rng), u(rng), 0.0);
    const double yaw0 = th(rng), lean = r(rng);
    const Vec3 apex = bottom + Vec3(lean * std::cos(yaw0), lean * std::sin(yaw0), 6.0);
    const double theta = th(rng);
    const Eigen::AngleAxisd rz(theta, Vec3::UnitZ());
    const double before = pole_yaw(make_pole(apex, bottom));
    const double after = pole_yaw(make_pole(rz * apex, rz * bottom));
    worst_yaw = std::max(worst_yaw, angle_gap(after, before + theta));
  }
  o.check(worst_yaw <= 1e-9, "pole yaw equivariance");

  double worst_plane = 0.0, worst_centroid = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Vec3 center(u(rng), u(rng), u(rng));
    Vec3 a = Vec3::Random().normalized();
    Vec3 b = a.unitOrthogonal();
    const Eigen::AngleAxisd spin(th(rng), a);
    b = spin * b;
    const auto corners = sign_corners(make_sign(center, a, b, r(rng), r(rng)));
    const Vec3 n = a.cross(b).normalized();
    Vec3 sum = Vec3::Zero();
    for (const auto& c : corners) {
      worst_plane = std::max(worst_plane, std::abs((c - center).dot(n)));
      sum += c;
    }
    worst_centroid = std::max(worst_centroid, (sum / 4.0 - center).cwiseAbs().maxCoeff());
  }
  o.check(worst_plane <= 1e-9, "sign coplanarity");
  o.check(worst_centroid <= 1e-12, "sign centroid");

  const auto cone = cone_geometry(make_cone({3, 4, 0}, {0, 0, 0}, 0.2));
  o.check(cone.height == 5.0 && cone.axis == Vec3(0.6, 0.8, 0.0), "cone 3-4-5");
  o.detail << "max yaw error " << worst_yaw << " rad, max plane offset " << worst_plane << ", max centroid error "
           << worst_centroid << ", cone height " << cone.height;
  return o;
}

Outcome attention_kernels() {
  using namespace thma::seg;
  Outcome o;
  std::mt19937_64 rng(505);
  std::normal_distribution<double> n01(0, 1);
  auto mat = [&](long r, long c, double s = 1.0) {
    TokenMatrix m(r, c);
    for (long i = 0; i < r; ++i)
      for (long j = 0; j < c; ++j) m(i, j) = s * n01(rng);
    return m;
  };
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const long n = 1 + rng() % 32, c = 1 + rng() % 16, d = 1 + rng() % 16;
    const auto x = mat(n, c);
    const auto wq = mat(c, d), wk = mat(c, d), wv = mat(c, d);
    const auto got = sr_attention(x, AttentionParams::identity_reduction(wq, wk, wv));
    const auto want = oracle::attention(oracle::matmul(x, wq), oracle::matmul(x, wk), oracle::matmul(x, wv));
    worst = std::max(worst, (got - want).cwiseAbs().maxCoeff());
  }
  o.check(worst <= 1e-6, "attention equivalence");

  double worst_sum = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto s = softmax_rows(mat(1 + rng() % 20, 1 + rng() % 40, 30.0));
    for (long r = 0; r < s.rows(); ++r) worst_sum = std::max(worst_sum, std::abs(s.row(r).sum() - 1.0));
  }
  o.check(worst_sum <= 1e-9, "softmax row sums");

  bool identity = true;
  for (int i = 0; i < 20; ++i) {
    const int h = 1 + rng() % 6, w = 1 + rng() % 6, c = 1 + rng() % 5;
    const auto x = mat(h * w, c);
    identity = identity && mix_ffn(x, {h, w}, FfnParams::zeros(c, 4 * c)) == x;
  }
  o.check(identity, "mix-ffn identity");

  const auto m = mae_mask(196, 0.75, 9);
  const bool counts = m.masked.size() == 147 && m.visible.size() == 49;
  const auto again = mae_mask(196, 0.75, 9);
  const bool repro = again.masked == m.masked && again.visible == m.visible;
  o.check(counts && repro, "mae mask");
  o.detail << "max attention error " << worst << ", max softmax row-sum error " << worst_sum
           << ", ffn identity exact, mask 147/49 reproducible";
  return o;
}

Outcome golden_run(const std::filesystem::path& run_dir) {
  Outcome o;
  const auto t0 = Steady::now();
  const std::string cmd = std::string(THMA_CLI) + " run --out " + run_dir.string() + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  const double secs = seconds_since(t0);
  o.check(rc == 0, "thma run exit status");
  if (rc != 0) return o;
  const auto report = load_json_file(run_dir / "report.json");
  const auto& c = report["counts"];
  o.check(c["tiles"] == 2, "tiles");
  o.check(c["detections"] == 11, "detections");
  o.check(c["refined"] == 11, "refined");
  o.check(c["queued"] == 0, "queue size");
  o.check(report["pole_recall"] == 1.0, "pole recall");
  o.check(secs < 120.0, "runtime");
  o.detail << "tiles " << c["tiles"] << ", detections " << c["detections"] << ", refined " << c["refined"]
           << ", queued " << c["queued"] << ", pole recall " << report["pole_recall"] << ", " << secs << " s";
  return o;
}

Outcome throughput() {
  Outcome o;
  SceneConfig cfg;
  cfg.road_length = 2300;
  const auto scene = generate_scene(cfg);
  const auto t0 = Steady::now();
  const GridIndex index(scene.cloud, 2.0);
  const auto frames = plan_tiles(scene.trajectory);
  const auto tiles = rasterize_tiles(index, frames, {}, 4);
  const double secs = seconds_since(t0);
  o.check(scene.cloud.size() >= 5'000'000, "cloud size");
  o.check(tiles.size() == frames.size(), "tile count");
  o.check(secs < 30.0, "runtime");
  o.detail << scene.cloud.size() << " points into " << tiles.size() << " tiles with 4 jobs in " << secs << " s";
  return o;
}

Outcome durability() {
  Outcome o;
  constexpr int kItems = 1000;
  oracle::TempDir dir("thma-durable");
  {
    ReviewStore store(dir.path());
    std::vector<Detection> dets;
    for (int i = 0; i < kItems; ++i) dets.push_back(pole_det("q" + std::to_string(i), i * 0.1, 0, 0.5));
    store.ingest(route(dets, {0.7}));
  }
  std::mt19937_64 plan(606);
  std::vector<DecisionKind> kinds(kItems);
  for (auto& k : kinds) k = static_cast<DecisionKind>(plan() % 3);
  std::vector<int> order(kItems);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), plan);

  std::set<int> acked;
  int kills = 0;
  std::size_t cursor = 0;
  while (cursor < order.size()) {
    int fds[2];
    if (::pipe(fds) != 0) {
      o.check(false, "pipe");
      break;
    }
    const std::size_t start = cursor;
    const pid_t pid = ::fork();
    if (pid == 0) {
      ::close(fds[0]);
      ReviewStore store(dir.path());
      for (std::size_t k = start; k < order.size(); ++k) {
        const int id = order[k];
        Decision d{kinds[id], std::nullopt, "bot"};
        if (d.kind == DecisionKind::Relabel) d.relabel = pole_det("r", id * 0.1, 1.0, 1.0);
        store.apply_decision("q" + std::to_string(id), d);
        if (::write(fds[1], &id, sizeof id) != sizeof id) ::_exit(3);
      }
      ::_exit(0);
    }
    ::close(fds[1]);
    const std::size_t budget = 50 + plan() % 200;
    int id = 0;
    std::size_t got = 0;
    while (got < budget && ::read(fds[0], &id, sizeof id) == sizeof id) {
      acked.insert(id);
      ++got;
    }
    ::kill(pid, SIGKILL);
    ::waitpid(pid, nullptr, 0);
    while (::read(fds[0], &id, sizeof id) == sizeof id) acked.insert(id);
    ::close(fds[0]);
    ++kills;
    // Resume after everything that reached the log, acknowledged or not.
    ReviewStore probe(dir.path());
    while (cursor < order.size() && probe.item("q" + std::to_string(order[cursor]))->status != ReviewStatus::Pending) {
      ++cursor;
    }
  }

  ReviewStore store(dir.path());
  std::size_t lost = 0, wrong = 0;
  for (int id : acked) {
    const auto item = store.item("q" + std::to_string(id));
    const ReviewStatus want = kinds[id] == DecisionKind::Accept   ? ReviewStatus::Accepted
                              : kinds[id] == DecisionKind::Reject ? ReviewStatus::Rejected
                                                                  : ReviewStatus::Relabeled;
    if (item->status == ReviewStatus::Pending) ++lost;
    else if (item->status != want) ++wrong;
  }
  std::size_t decided = 0;
  for (int id = 0; id < kItems; ++id) decided += store.item("q" + std::to_string(id))->status != ReviewStatus::Pending;
  o.check(decided == kItems, "not every decision reached the log");
  o.check(lost == 0 && wrong == 0, "acknowledged decision lost");

  oracle::TempDir fixture("thma-ratio");
  ReviewStore ratio_store(fixture.path());
  std::vector<Detection> ten;
  for (int i = 0; i < 10; ++i) ten.push_back(pole_det("f" + std::to_string(i), i, 0, i < 9 ? 0.9 : 0.1));
  ratio_store.ingest(route(ten, {0.7}));
  const auto m = ratio_store.metrics(3600);
  o.check(m.automation_ratio && *m.automation_ratio == 0.9, "9/10 ratio");
  oracle::TempDir empty_dir("thma-empty");
  o.check(!ReviewStore(empty_dir.path()).metrics(3600).automation_ratio, "empty ratio");

  o.detail << decided << " decisions logged, " << acked.size() << " acknowledged across " << kills << " killed writers, " << lost
           << " lost, " << wrong << " wrong; 9/10 -> " << (m.automation_ratio ? *m.automation_ratio : -1.0);
  return o;
}

}  // namespace

int main() {
  oracle::TempDir run("thma-golden");
  const auto run_dir = run.path() / "run";
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"rasterizer oracle equivalence", raster_oracle},
      {"rasterizer geometry", raster_geometry},
      {"end-to-end golden run", [&] { return golden_run(run_dir); }},
      {"BEV constants", [&] { return bev_constants(run_dir); }},
      {"distillation", distillation},
      {"descriptor geometry", descriptor_geometry},
      {"attention kernels", attention_kernels},
      {"throughput smoke benchmark", throughput},
      {"active-loop durability", durability},
  };
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "exception: " << e.what();
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail.str() << std::endl;
  }
  std::cout << (failures ? "acceptance: " + std::to_string(failures) + " failing" : "acceptance: all passing")
            << std::endl;
  return failures ? 1 : 0;
}
