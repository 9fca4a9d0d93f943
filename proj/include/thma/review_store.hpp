#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "thma/descriptor.hpp"
#include "thma/distill.hpp"

namespace thma {

struct RouteConfig {
  double t_auto = 0.7;  // strictly above goes straight to production

  void validate() const;
};

enum class ReviewStatus { Pending, Accepted, Rejected, Relabeled };
std::string_view to_string(ReviewStatus s);
ReviewStatus review_status_from_string(std::string_view s);

struct ReviewItem {
  std::string id;
  Detection detection;
  ReviewStatus status = ReviewStatus::Pending;
  std::optional<Detection> relabel;  // present iff status == Relabeled
  double created = 0.0;              // seconds since epoch
  std::optional<double> decided;     // present iff status != Pending
  std::string reviewer;
};

nlohmann::json to_json(const ReviewItem& item);

struct RouteResult {
  std::vector<Detection> accepted;
  std::vector<ReviewItem> queue;
};

// Exact, order-preserving split on confidence > t_auto. Queued items get the
// detection id as item id and `now` as creation time.
RouteResult route(std::span<const Detection> detections, const RouteConfig& config, double now = 0.0);

enum class DecisionKind { Accept, Reject, Relabel };

struct Decision {
  DecisionKind kind = DecisionKind::Accept;
  std::optional<Detection> relabel;
  std::string reviewer;
};

// {"decision": "accept"|"reject"|"relabel", "relabel": {...}, "reviewer": "..."}.
// Throws MalformedDecision; relabel payloads may omit id, confidence and
// source since those are overwritten on apply.
Decision decision_from_json(const nlohmann::json& j);

struct LoopMetrics {
  std::size_t total = 0;
  std::size_t auto_accepted = 0;
  std::size_t reviewed = 0;  // routed to human review, decided or not
  std::size_t pending = 0;
  std::size_t decided = 0;
  std::optional<double> automation_ratio;  // absent when total == 0
  double window = 0.0;
  double throughput = 0.0;  // items finalized (auto-accepted or decided) per second in window
};

nlohmann::json to_json(const LoopMetrics& m);

// State rebuilt from the event log. Never mutated once published.
struct StoreSnapshot {
  struct AutoEntry {
    std::shared_ptr<const Detection> detection;
    double time = 0.0;
  };
  std::vector<AutoEntry> auto_accepted;
  std::vector<std::string> order;  // review item ids in routing order
  std::unordered_map<std::string, std::shared_ptr<const ReviewItem>> items;
};

using Clock = std::function<double()>;
double wall_clock_seconds();

// Durable review queue. Every mutation is appended to `<dir>/events.jsonl` and
// fsynced before it returns; construction replays the log. One process may own
// a store directory at a time (advisory lock on the log).
class ReviewStore {
 public:
  static constexpr std::string_view kLogName = "events.jsonl";

  explicit ReviewStore(std::filesystem::path dir, Clock clock = wall_clock_seconds);
  ~ReviewStore();
  ReviewStore(const ReviewStore&) = delete;
  ReviewStore& operator=(const ReviewStore&) = delete;

  // Persists a routing outcome. Throws DuplicateItem if any id is already known.
  void ingest(const RouteResult& routed);

  // Throws NotFound, AlreadyDecided or MalformedDecision.
  ReviewItem apply_decision(const std::string& item_id, const Decision& decision);

  std::shared_ptr<const StoreSnapshot> snapshot() const;

  std::optional<ReviewItem> item(const std::string& id) const;
  // Items in routing order, optionally filtered by status.
  std::vector<ReviewItem> items(std::optional<ReviewStatus> status = std::nullopt,
                                std::size_t limit = static_cast<std::size_t>(-1)) const;

  // Auto-accepted detections, human-accepted items and relabel replacements,
  // all with confidence 1.0; rejected items never appear.
  LabelSet export_feedback() const;

  LoopMetrics metrics(double window_seconds) const;

  const std::filesystem::path& directory() const { return dir_; }
  std::size_t replayed_events() const { return replayed_; }
  // Bytes of an incomplete trailing record dropped during replay.
  std::size_t discarded_tail_bytes() const { return discarded_tail_; }

 private:
  void replay();
  void apply_event(StoreSnapshot& state, const nlohmann::json& event) const;
  void append(const std::vector<nlohmann::json>& events);

  std::filesystem::path dir_;
  Clock clock_;
  int fd_ = -1;
  std::uint64_t next_seq_ = 1;
  std::size_t replayed_ = 0;
  std::size_t discarded_tail_ = 0;

  std::mutex writer_;
  mutable std::mutex publish_;
  std::shared_ptr<const StoreSnapshot> current_;
};

}  // namespace thma
