#include <gtest/gtest.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <fstream>
#include <random>
#include <set>
#include <thread>

#include "oracles.hpp"
#include "thma/error.hpp"
#include "thma/review_store.hpp"
#include "thma/serialization.hpp"

using namespace thma;

namespace {

Detection pole(const std::string& id, double conf, double x = 0.0) {
  Detection d;
  d.id = id;
  d.descriptor = make_pole({x, 0, 5}, {x, 0, 0});
  d.confidence = conf;
  d.source = Source::Model;
  d.tile = "tile_0000";
  return d;
}

std::vector<Detection> batch(const std::vector<double>& confs) {
  std::vector<Detection> out;
  for (std::size_t i = 0; i < confs.size(); ++i) out.push_back(pole("d" + std::to_string(i), confs[i], double(i)));
  return out;
}

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no thma::Error thrown";
  return ErrorCode::Io;
}

struct FakeClock {
  double now = 1000.0;
  Clock fn() {
    return [this] { return now; };
  }
};

}  // namespace

TEST(Route, Examples) {
  auto r = route(batch({0.95, 0.5}), {0.7});
  EXPECT_EQ(r.accepted.size(), 1u);
  ASSERT_EQ(r.queue.size(), 1u);
  EXPECT_EQ(r.queue[0].status, ReviewStatus::Pending);
  EXPECT_EQ(r.queue[0].id, "d1");

  r = route(batch({0.9, 0.8, 1.0}), {1.0});
  EXPECT_TRUE(r.accepted.empty());
  EXPECT_EQ(r.queue.size(), 3u);

  r = route(batch({0.7}), {0.7});
  EXPECT_EQ(r.queue.size(), 1u);  // strict >
  EXPECT_THROW(route(batch({0.5}), {1.5}), Error);
}

TEST(Route, PartitionIsExactAndOrdered) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> confs(rng() % 30);
    for (auto& c : confs) c = u(rng);
    const auto dets = batch(confs);
    const double th = u(rng);
    const auto r = route(dets, {th});
    ASSERT_EQ(r.accepted.size() + r.queue.size(), dets.size());
    std::size_t a = 0, q = 0;
    for (const auto& d : dets) {
      if (d.confidence > th) {
        ASSERT_EQ(r.accepted[a++].id, d.id);
      } else {
        ASSERT_EQ(r.queue[q++].detection, d);
      }
    }
  }
}

TEST(Decision, Parsing) {
  using nlohmann::json;
  EXPECT_EQ(decision_from_json({{"decision", "accept"}}).kind, DecisionKind::Accept);
  EXPECT_EQ(decision_from_json({{"decision", "reject"}, {"reviewer", "ann-3"}}).reviewer, "ann-3");
  EXPECT_EQ(code_of([] { decision_from_json({{"decision", "relabel"}}); }), ErrorCode::MalformedDecision);
  EXPECT_EQ(code_of([] { decision_from_json({{"decision", "maybe"}}); }), ErrorCode::MalformedDecision);
  EXPECT_EQ(code_of([] { decision_from_json(json::array()); }), ErrorCode::MalformedDecision);
  const json relabel = {{"decision", "relabel"},
                        {"relabel", {{"class", "pole"}, {"values", {1, 1, 5, 1, 1, 0}}}}};
  const auto d = decision_from_json(relabel);
  ASSERT_TRUE(d.relabel.has_value());
  EXPECT_EQ(d.relabel->source, Source::Human);
  EXPECT_EQ(d.relabel->confidence, 1.0);
}

TEST(ReviewStore, StateMachine) {
  oracle::TempDir dir;
  ReviewStore store(dir.path());
  store.ingest(route(batch({0.1, 0.2, 0.3}), {0.7}));
  auto item = store.apply_decision("d0", {DecisionKind::Accept, std::nullopt, ""});
  EXPECT_EQ(item.status, ReviewStatus::Accepted);
  EXPECT_TRUE(item.decided.has_value());
  EXPECT_EQ(code_of([&] { store.apply_decision("d0", {DecisionKind::Reject, std::nullopt, ""}); }),
            ErrorCode::AlreadyDecided);
  EXPECT_EQ(code_of([&] { store.apply_decision("nope", {DecisionKind::Accept, std::nullopt, ""}); }),
            ErrorCode::NotFound);
  EXPECT_EQ(code_of([&] { store.apply_decision("d1", {DecisionKind::Relabel, std::nullopt, ""}); }),
            ErrorCode::MalformedDecision);
  EXPECT_EQ(store.item("d1")->status, ReviewStatus::Pending);
  EXPECT_EQ(store.items(ReviewStatus::Pending).size(), 2u);
  EXPECT_EQ(store.items(std::nullopt, 1).size(), 1u);
}

TEST(ReviewStore, DuplicateIngest) {
  oracle::TempDir dir;
  ReviewStore store(dir.path());
  store.ingest(route(batch({0.9, 0.1}), {0.7}));
  EXPECT_EQ(code_of([&] { store.ingest(route(batch({0.1}), {0.7})); }), ErrorCode::DuplicateItem);
  EXPECT_EQ(code_of([&] { store.ingest(route(batch({0.95}), {0.7})); }), ErrorCode::DuplicateItem);
}

TEST(ReviewStore, ExportFeedback) {
  oracle::TempDir dir;
  ReviewStore store(dir.path());
  EXPECT_TRUE(store.export_feedback().empty());
  store.ingest(route(std::vector<Detection>{pole("auto", 0.9), pole("rel", 0.5), pole("rej", 0.4)}, {0.7}));
  Detection replacement = pole("ignored", 0.3, 7.0);
  store.apply_decision("rel", {DecisionKind::Relabel, replacement, "ann"});
  store.apply_decision("rej", {DecisionKind::Reject, std::nullopt, "ann"});
  const auto fb = store.export_feedback();
  ASSERT_EQ(fb.size(), 2u);
  EXPECT_EQ(fb.items()[0].id, "auto");
  EXPECT_EQ(fb.items()[0].confidence, 1.0);
  EXPECT_EQ(fb.items()[0].source, Source::Model);
  const auto& rel = fb.items()[1];
  EXPECT_EQ(rel.id, "rel");
  EXPECT_EQ(rel.source, Source::Human);
  EXPECT_EQ(rel.confidence, 1.0);
  EXPECT_EQ(rel.descriptor, replacement.descriptor);
  for (const auto& d : fb) EXPECT_NE(d.id, "rej");
}

TEST(ReviewStore, MetricsArithmetic) {
  oracle::TempDir dir;
  FakeClock clock;
  ReviewStore store(dir.path(), clock.fn());
  auto m = store.metrics(60);
  EXPECT_EQ(m.total, 0u);
  EXPECT_FALSE(m.automation_ratio.has_value());

  std::vector<double> confs(90, 0.9);
  confs.insert(confs.end(), 10, 0.1);
  store.ingest(route(batch(confs), {0.7}));
  m = store.metrics(60);
  EXPECT_EQ(m.total, 100u);
  EXPECT_EQ(m.auto_accepted + m.reviewed, m.total);
  EXPECT_DOUBLE_EQ(*m.automation_ratio, 0.9);
  EXPECT_DOUBLE_EQ(m.throughput, 90.0 / 60.0);

  clock.now += 30;
  store.apply_decision("d95", {DecisionKind::Accept, std::nullopt, ""});
  m = store.metrics(60);
  EXPECT_DOUBLE_EQ(*m.automation_ratio, 0.9);  // review outcomes do not move the ratio
  EXPECT_EQ(m.decided, 1u);
  EXPECT_EQ(m.pending, 9u);
  EXPECT_DOUBLE_EQ(m.throughput, 91.0 / 60.0);
  clock.now += 40;  // routing now falls outside the window
  EXPECT_DOUBLE_EQ(store.metrics(60).throughput, 1.0 / 60.0);
  EXPECT_THROW(store.metrics(0), Error);
}

TEST(ReviewStore, NineOfTen) {
  oracle::TempDir dir;
  ReviewStore store(dir.path());
  store.ingest(route(batch({0.9, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9, 0.1}), {0.7}));
  EXPECT_DOUBLE_EQ(*store.metrics(3600).automation_ratio, 0.9);
}

TEST(ReviewStore, ReplayRestoresState) {
  oracle::TempDir dir;
  {
    ReviewStore store(dir.path());
    store.ingest(route(std::vector<Detection>{pole("a", 0.9), pole("b", 0.5), pole("c", 0.4)}, {0.7}));
    store.apply_decision("b", {DecisionKind::Relabel, pole("x", 0.1, 3.0), "r1"});
  }
  ReviewStore again(dir.path());
  EXPECT_EQ(again.replayed_events(), 4u);
  const auto b = again.item("b");
  ASSERT_TRUE(b);
  EXPECT_EQ(b->status, ReviewStatus::Relabeled);
  EXPECT_EQ(b->reviewer, "r1");
  ASSERT_TRUE(b->relabel);
  EXPECT_EQ(b->relabel->descriptor, pole("x", 0.1, 3.0).descriptor);
  EXPECT_EQ(again.item("c")->status, ReviewStatus::Pending);
  EXPECT_EQ(again.export_feedback().size(), 2u);
}

TEST(ReviewStore, TornTailIsDropped) {
  oracle::TempDir dir;
  {
    ReviewStore store(dir.path());
    store.ingest(route(batch({0.1, 0.2}), {0.7}));
  }
  std::ofstream(dir / "events.jsonl", std::ios::app) << R"({"seq":9,"ts":1,"type":"decis)";
  ReviewStore again(dir.path());
  EXPECT_GT(again.discarded_tail_bytes(), 0u);
  EXPECT_EQ(again.items(ReviewStatus::Pending).size(), 2u);
  again.apply_decision("d0", {DecisionKind::Accept, std::nullopt, ""});
}

TEST(ReviewStore, CorruptMiddleIsAnError) {
  oracle::TempDir dir;
  {
    ReviewStore store(dir.path());
    store.ingest(route(batch({0.1}), {0.7}));
  }
  {
    std::ofstream f(dir / "events.jsonl", std::ios::app);
    f << "garbage\n";
    f << R"({"seq":5,"ts":1,"type":"decision","item":"d0","decision":"accept"})" << "\n";
  }
  EXPECT_THROW(ReviewStore(dir.path()), Error);
}

TEST(ReviewStore, SingleWriterLock) {
  oracle::TempDir dir;
  ReviewStore store(dir.path());
  EXPECT_THROW(ReviewStore(dir.path()), Error);
}

TEST(ReviewStore, SnapshotsAreImmutable) {
  oracle::TempDir dir;
  ReviewStore store(dir.path());
  store.ingest(route(batch({0.1}), {0.7}));
  const auto before = store.snapshot();
  store.apply_decision("d0", {DecisionKind::Reject, std::nullopt, ""});
  EXPECT_EQ(before->items.at("d0")->status, ReviewStatus::Pending);
  EXPECT_EQ(store.snapshot()->items.at("d0")->status, ReviewStatus::Rejected);
}

TEST(ReviewStore, ConcurrentReadersDuringWrites) {
  oracle::TempDir dir;
  ReviewStore store(dir.path());
  std::vector<double> confs(200, 0.1);
  store.ingest(route(batch(confs), {0.7}));
  std::atomic<bool> done{false};
  std::vector<std::jthread> readers;
  std::atomic<int> bad{0};
  for (int r = 0; r < 4; ++r) {
    readers.emplace_back([&] {
      while (!done) {
        const auto m = store.metrics(3600);
        if (m.pending + m.decided != 200) ++bad;
      }
    });
  }
  for (int i = 0; i < 200; ++i) store.apply_decision("d" + std::to_string(i), {DecisionKind::Accept, std::nullopt, ""});
  done = true;
  readers.clear();
  EXPECT_EQ(bad.load(), 0);
}

TEST(ReviewStore, KilledWriterLosesNoAcknowledgedDecision) {
  oracle::TempDir dir;
  constexpr int kItems = 300;
  {
    ReviewStore store(dir.path());
    std::vector<double> confs(kItems, 0.1);
    store.ingest(route(batch(confs), {0.7}));
  }
  int fds[2];
  ASSERT_EQ(::pipe(fds), 0);
  const pid_t pid = ::fork();
  ASSERT_GE(pid, 0);
  if (pid == 0) {
    ::close(fds[0]);
    ReviewStore store(dir.path());
    std::mt19937_64 rng(77);
    for (int i = 0; i < kItems; ++i) {
      const auto kind = static_cast<DecisionKind>(rng() % 2);
      store.apply_decision("d" + std::to_string(i), {kind, std::nullopt, ""});
      const std::int32_t ack = i;
      if (::write(fds[1], &ack, sizeof ack) != sizeof ack) ::_exit(3);
    }
    ::pause();
    ::_exit(0);
  }
  ::close(fds[1]);
  std::set<int> acked;
  std::int32_t v;
  while (acked.size() < 120 && ::read(fds[0], &v, sizeof v) == sizeof v) acked.insert(v);
  ::kill(pid, SIGKILL);
  int status = 0;
  ::waitpid(pid, &status, 0);
  while (::read(fds[0], &v, sizeof v) == sizeof v) acked.insert(v);
  ::close(fds[0]);

  ReviewStore store(dir.path());
  ASSERT_GE(acked.size(), 120u);
  for (int id : acked) {
    EXPECT_NE(store.item("d" + std::to_string(id))->status, ReviewStatus::Pending) << id;
  }
}
