#include "thma/review_store.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unordered_set>

#include "thma/error.hpp"
#include "thma/serialization.hpp"

namespace thma {

using nlohmann::json;

namespace {

[[noreturn]] void io_error(const std::string& what) {
  throw Error(ErrorCode::Io, what + ": " + std::strerror(errno));
}

void write_all(int fd, const std::string& bytes) {
  std::size_t done = 0;
  while (done < bytes.size()) {
    const ssize_t n = ::write(fd, bytes.data() + done, bytes.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      io_error("event log write");
    }
    done += static_cast<std::size_t>(n);
  }
}

std::string_view decision_name(DecisionKind k) {
  switch (k) {
    case DecisionKind::Accept: return "accept";
    case DecisionKind::Reject: return "reject";
    case DecisionKind::Relabel: return "relabel";
  }
  return "accept";
}

// Replacement detection as stored: item id, human source, full confidence.
Detection normalized_relabel(const ReviewItem& item, Detection relabel) {
  relabel.id = item.id;
  relabel.source = Source::Human;
  relabel.confidence = 1.0;
  if (relabel.tile.empty()) relabel.tile = item.detection.tile;
  return relabel;
}

}  // namespace

void RouteConfig::validate() const {
  if (!(t_auto >= 0.0 && t_auto <= 1.0)) throw Error(ErrorCode::InvalidConfig, "t_auto must lie in [0, 1]");
}

std::string_view to_string(ReviewStatus s) {
  switch (s) {
    case ReviewStatus::Pending: return "pending";
    case ReviewStatus::Accepted: return "accepted";
    case ReviewStatus::Rejected: return "rejected";
    case ReviewStatus::Relabeled: return "relabeled";
  }
  return "pending";
}

ReviewStatus review_status_from_string(std::string_view s) {
  if (s == "pending") return ReviewStatus::Pending;
  if (s == "accepted") return ReviewStatus::Accepted;
  if (s == "rejected") return ReviewStatus::Rejected;
  if (s == "relabeled") return ReviewStatus::Relabeled;
  throw Error(ErrorCode::InvalidArgument, "unknown review status '" + std::string(s) + "'");
}

json to_json(const ReviewItem& item) {
  json j{{"id", item.id},
         {"status", to_string(item.status)},
         {"detection", detection_to_json(item.detection)},
         {"created", item.created}};
  j["relabel"] = item.relabel ? detection_to_json(*item.relabel) : json(nullptr);
  j["decided"] = item.decided ? json(*item.decided) : json(nullptr);
  if (!item.reviewer.empty()) j["reviewer"] = item.reviewer;
  return j;
}

json to_json(const LoopMetrics& m) {
  return {{"total", m.total},
          {"auto_accepted", m.auto_accepted},
          {"reviewed", m.reviewed},
          {"pending", m.pending},
          {"decided", m.decided},
          {"automation_ratio", m.automation_ratio ? json(*m.automation_ratio) : json(nullptr)},
          {"window", m.window},
          {"throughput", m.throughput}};
}

RouteResult route(std::span<const Detection> detections, const RouteConfig& config, double now) {
  config.validate();
  RouteResult out;
  for (const auto& d : detections) {
    if (d.confidence > config.t_auto) {
      out.accepted.push_back(d);
    } else {
      ReviewItem item;
      item.id = d.id;
      item.detection = d;
      item.created = now;
      out.queue.push_back(std::move(item));
    }
  }
  return out;
}

Decision decision_from_json(const json& j) {
  auto malformed = [](const std::string& why) { return Error(ErrorCode::MalformedDecision, why); };
  if (!j.is_object()) throw malformed("decision body must be an object");
  auto it = j.find("decision");
  if (it == j.end() || !it->is_string()) throw malformed("missing 'decision'");
  Decision d;
  const auto kind = it->get<std::string>();
  if (kind == "accept") {
    d.kind = DecisionKind::Accept;
  } else if (kind == "reject") {
    d.kind = DecisionKind::Reject;
  } else if (kind == "relabel") {
    d.kind = DecisionKind::Relabel;
    auto r = j.find("relabel");
    if (r == j.end() || !r->is_object()) throw malformed("relabel decision needs a 'relabel' detection");
    json payload = *r;
    if (!payload.contains("id")) payload["id"] = "relabel";
    payload["confidence"] = 1.0;
    payload["source"] = "human";
    try {
      d.relabel = detection_from_json(payload);
    } catch (const Error& e) {
      throw malformed(std::string("invalid relabel detection: ") + e.what());
    }
  } else {
    throw malformed("unknown decision '" + kind + "'");
  }
  if (auto rv = j.find("reviewer"); rv != j.end() && rv->is_string()) d.reviewer = rv->get<std::string>();
  return d;
}

double wall_clock_seconds() {
  using namespace std::chrono;
  return duration<double>(system_clock::now().time_since_epoch()).count();
}

// ---------------------------------------------------------------------------

ReviewStore::ReviewStore(std::filesystem::path dir, Clock clock)
    : dir_(std::move(dir)), clock_(std::move(clock)), current_(std::make_shared<StoreSnapshot>()) {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create store " + dir_.string() + ": " + ec.message());
  const auto log = dir_ / kLogName;
  fd_ = ::open(log.c_str(), O_RDWR | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) io_error("open " + log.string());
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw Error(ErrorCode::Io, "store " + dir_.string() + " is held by another process");
  }
  try {
    replay();
  } catch (...) {
    ::close(fd_);
    fd_ = -1;
    throw;
  }
}

ReviewStore::~ReviewStore() {
  if (fd_ >= 0) ::close(fd_);
}

void ReviewStore::replay() {
  const auto log = dir_ / kLogName;
  std::string text;
  {
    std::ifstream in(log, std::ios::binary);
    text.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  // A record is complete only once its newline is on disk; anything after the
  // last newline is a torn append that was never acknowledged.
  const auto last_nl = text.rfind('\n');
  const std::size_t complete = last_nl == std::string::npos ? 0 : last_nl + 1;
  if (complete < text.size()) {
    discarded_tail_ = text.size() - complete;
    if (::ftruncate(fd_, static_cast<off_t>(complete)) != 0) io_error("truncate " + log.string());
    text.resize(complete);
  }

  auto state = std::make_shared<StoreSnapshot>();
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    const auto nl = text.find('\n', start);
    const std::string_view line(text.data() + start, nl - start);
    start = nl + 1;
    ++line_no;
    if (line.empty()) continue;
    json event;
    try {
      event = json::parse(line);
      apply_event(*state, event);
    } catch (const std::exception& e) {
      throw Error(ErrorCode::MalformedJson,
                  log.string() + " line " + std::to_string(line_no) + ": corrupt event: " + e.what());
    }
    next_seq_ = std::max<std::uint64_t>(next_seq_, event.value("seq", std::uint64_t{0}) + 1);
    ++replayed_;
  }
  current_ = std::move(state);
}

void ReviewStore::apply_event(StoreSnapshot& state, const json& event) const {
  const auto type = event.at("type").get<std::string>();
  const double ts = event.at("ts").get<double>();
  if (type == "auto_accept") {
    state.auto_accepted.push_back(
        {std::make_shared<const Detection>(detection_from_json(event.at("detection"))), ts});
  } else if (type == "enqueue") {
    auto item = std::make_shared<ReviewItem>();
    item->id = event.at("item").get<std::string>();
    item->detection = detection_from_json(event.at("detection"));
    item->created = ts;
    if (!state.items.emplace(item->id, item).second) {
      throw Error(ErrorCode::DuplicateItem, "item " + item->id + " enqueued twice");
    }
    state.order.push_back(item->id);
  } else if (type == "decision") {
    const auto id = event.at("item").get<std::string>();
    auto it = state.items.find(id);
    if (it == state.items.end()) throw Error(ErrorCode::NotFound, "decision for unknown item " + id);
    if (it->second->status != ReviewStatus::Pending) {
      throw Error(ErrorCode::AlreadyDecided, "second decision for item " + id);
    }
    auto item = std::make_shared<ReviewItem>(*it->second);
    const auto kind = event.at("decision").get<std::string>();
    if (kind == "accept") {
      item->status = ReviewStatus::Accepted;
    } else if (kind == "reject") {
      item->status = ReviewStatus::Rejected;
    } else if (kind == "relabel") {
      item->status = ReviewStatus::Relabeled;
      item->relabel = detection_from_json(event.at("relabel"));
    } else {
      throw Error(ErrorCode::MalformedDecision, "unknown decision " + kind);
    }
    item->decided = ts;
    item->reviewer = event.value("reviewer", std::string());
    it->second = std::move(item);
  } else {
    throw Error(ErrorCode::MalformedJson, "unknown event type " + type);
  }
}

void ReviewStore::append(const std::vector<json>& events) {
  std::string batch;
  for (const auto& e : events) {
    batch += e.dump();
    batch += '\n';
  }
  write_all(fd_, batch);
  if (::fdatasync(fd_) != 0) io_error("fdatasync event log");
}

void ReviewStore::ingest(const RouteResult& routed) {
  std::lock_guard lock(writer_);
  const auto base = snapshot();

  std::unordered_set<std::string> seen;
  for (const auto& e : base->auto_accepted) seen.insert(e.detection->id);
  for (const auto& id : base->order) seen.insert(id);
  auto claim = [&](const std::string& id) {
    if (!seen.insert(id).second) throw Error(ErrorCode::DuplicateItem, "id " + id + " already routed");
  };

  const double now = clock_();
  std::vector<json> events;
  for (const auto& d : routed.accepted) {
    validate(d);
    claim(d.id);
    events.push_back({{"seq", next_seq_++}, {"ts", now}, {"type", "auto_accept"}, {"detection", detection_to_json(d)}});
  }
  for (const auto& item : routed.queue) {
    validate(item.detection);
    if (item.status != ReviewStatus::Pending) {
      throw Error(ErrorCode::InvalidArgument, "routed item " + item.id + " is not pending");
    }
    claim(item.id);
    events.push_back({{"seq", next_seq_++},
                      {"ts", now},
                      {"type", "enqueue"},
                      {"item", item.id},
                      {"detection", detection_to_json(item.detection)}});
  }
  if (events.empty()) return;

  auto next = std::make_shared<StoreSnapshot>(*base);
  for (const auto& e : events) apply_event(*next, e);
  append(events);
  std::lock_guard publish(publish_);
  current_ = std::move(next);
}

ReviewItem ReviewStore::apply_decision(const std::string& item_id, const Decision& decision) {
  std::lock_guard lock(writer_);
  const auto base = snapshot();
  auto it = base->items.find(item_id);
  if (it == base->items.end()) throw Error(ErrorCode::NotFound, "no review item " + item_id);
  const ReviewItem& item = *it->second;
  if (item.status != ReviewStatus::Pending) {
    throw Error(ErrorCode::AlreadyDecided, "item " + item_id + " is already " + std::string(to_string(item.status)));
  }
  if (decision.kind == DecisionKind::Relabel && !decision.relabel) {
    throw Error(ErrorCode::MalformedDecision, "relabel decision without a replacement detection");
  }

  json event{{"seq", next_seq_},
             {"ts", clock_()},
             {"type", "decision"},
             {"item", item_id},
             {"decision", decision_name(decision.kind)}};
  if (decision.kind == DecisionKind::Relabel) {
    Detection replacement = normalized_relabel(item, *decision.relabel);
    validate(replacement);
    event["relabel"] = detection_to_json(replacement);
  }
  if (!decision.reviewer.empty()) event["reviewer"] = decision.reviewer;

  auto next = std::make_shared<StoreSnapshot>(*base);
  apply_event(*next, event);
  append({event});
  ++next_seq_;
  ReviewItem updated = *next->items.at(item_id);
  std::lock_guard publish(publish_);
  current_ = std::move(next);
  return updated;
}

std::shared_ptr<const StoreSnapshot> ReviewStore::snapshot() const {
  std::lock_guard lock(publish_);
  return current_;
}

std::optional<ReviewItem> ReviewStore::item(const std::string& id) const {
  const auto snap = snapshot();
  auto it = snap->items.find(id);
  if (it == snap->items.end()) return std::nullopt;
  return *it->second;
}

std::vector<ReviewItem> ReviewStore::items(std::optional<ReviewStatus> status, std::size_t limit) const {
  const auto snap = snapshot();
  std::vector<ReviewItem> out;
  for (const auto& id : snap->order) {
    if (out.size() >= limit) break;
    const auto& item = *snap->items.at(id);
    if (!status || item.status == *status) out.push_back(item);
  }
  return out;
}

LabelSet ReviewStore::export_feedback() const {
  const auto snap = snapshot();
  std::vector<Detection> out;
  for (const auto& e : snap->auto_accepted) {
    Detection d = *e.detection;
    d.confidence = 1.0;
    out.push_back(std::move(d));
  }
  for (const auto& id : snap->order) {
    const auto& item = *snap->items.at(id);
    if (item.status == ReviewStatus::Accepted) {
      Detection d = item.detection;
      d.confidence = 1.0;
      d.source = Source::Human;
      out.push_back(std::move(d));
    } else if (item.status == ReviewStatus::Relabeled) {
      out.push_back(*item.relabel);
    }
  }
  return LabelSet(std::move(out));
}

LoopMetrics ReviewStore::metrics(double window_seconds) const {
  if (!(window_seconds > 0.0)) throw Error(ErrorCode::InvalidArgument, "metrics window must be > 0");
  const auto snap = snapshot();
  const double now = clock_();
  const double since = now - window_seconds;

  LoopMetrics m;
  m.window = window_seconds;
  m.auto_accepted = snap->auto_accepted.size();
  m.reviewed = snap->order.size();
  m.total = m.auto_accepted + m.reviewed;
  if (m.total > 0) m.automation_ratio = static_cast<double>(m.auto_accepted) / static_cast<double>(m.total);

  std::size_t finalized = 0;
  for (const auto& e : snap->auto_accepted) {
    if (e.time >= since) ++finalized;
  }
  for (const auto& [id, item] : snap->items) {
    if (item->status == ReviewStatus::Pending) {
      ++m.pending;
    } else {
      ++m.decided;
      if (*item->decided >= since) ++finalized;
    }
  }
  m.throughput = static_cast<double>(finalized) / window_seconds;
  return m;
}

}  // namespace thma
