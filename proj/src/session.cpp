#include "tminfer/session.hpp"

#include <cstdio>
#include <map>

#include <nlohmann/json.hpp>

#include "tminfer/error.hpp"
#include "tminfer/fetch.hpp"

namespace tminfer {

ResultSet make_results(const ExecutionPlan& plan, const NdArray& probabilities) {
  const auto& labels = plan.labels();
  if (probabilities.size() != labels.size()) {
    throw Error(ErrorCode::ShapeMismatch, std::to_string(probabilities.size()) +
                                              " probabilities for " +
                                              std::to_string(labels.size()) + " labels");
  }
  ResultSet results;
  results.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) results.push_back({labels[i], probabilities[i]});
  return results;
}

std::string format_result(std::span<const Prediction> results) {
  std::string out = "[";
  char number[64];
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (i) out += ",";
    std::snprintf(number, sizeof number, "%.6f", static_cast<double>(results[i].probability));
    out += R"({"label":)" + nlohmann::json(results[i].label).dump() + R"(,"probability":)" +
           number + "}";
  }
  return out + "]";
}

void LatestFrameSource::push(Frame frame) {
  std::lock_guard lock(mu_);
  frame_ = std::move(frame);
}

std::optional<Frame> LatestFrameSource::current_frame() {
  std::lock_guard lock(mu_);
  return frame_;
}

std::string_view to_string(SessionStatus status) noexcept {
  switch (status) {
    case SessionStatus::Empty: return "Empty";
    case SessionStatus::Loading: return "Loading";
    case SessionStatus::Ready: return "Ready";
    case SessionStatus::Stopped: return "Stopped";
    case SessionStatus::Failed: return "Failed";
  }
  return "?";
}

std::string_view to_string(EventKind kind) noexcept {
  switch (kind) {
    case EventKind::ClassifierReady: return "ClassifierReady";
    case EventKind::GotClassification: return "GotClassification";
    case EventKind::ClassificationError: return "ClassificationError";
    case EventKind::LoadError: return "LoadError";
  }
  return "?";
}

bool is_supported_model_url(std::string_view url) {
  for (std::string_view scheme : {"http://", "https://", "file://"}) {
    if (url.size() > scheme.size() && url.substr(0, scheme.size()) == scheme) return true;
  }
  return false;
}

struct ClassifierSession::Core {
  mutable std::mutex mu;
  SessionStatus status = SessionStatus::Empty;
  std::string failure_reason;
  std::optional<std::string> model_url;
  std::shared_ptr<const ExecutionPlan> plan;
  std::shared_ptr<FrameSource> source;
  // Bumped by anything that invalidates an in-flight load.
  std::uint64_t generation = 0;
  std::uint64_t next_request = 0;
  BundleLoader loader;
  bool queue_events = true;

  // Touched only from executor tasks, which never run concurrently.
  std::uint64_t next_seq = 0;

  std::mutex events_mu;
  std::condition_variable events_cv;
  std::deque<SessionEvent> events;

  std::mutex subscribers_mu;
  std::map<std::size_t, Subscriber> subscribers;
  std::size_t next_token = 0;

  void emit(SessionEvent event) {
    event.seq = ++next_seq;
    std::vector<Subscriber> targets;
    {
      std::lock_guard lock(subscribers_mu);
      for (const auto& [token, fn] : subscribers) targets.push_back(fn);
    }
    for (const auto& fn : targets) fn(event);
    if (queue_events) {
      {
        std::lock_guard lock(events_mu);
        events.push_back(std::move(event));
      }
      events_cv.notify_all();
    }
  }
};

namespace {

std::string load_failure_reason(const Error& e) {
  switch (e.code()) {
    case ErrorCode::FetchFailed:
    case ErrorCode::Timeout:
    case ErrorCode::IoError:
    case ErrorCode::InvalidUrl:
      return "fetch failed: " + std::string(e.what());
    default:
      return "invalid model: " + std::string(e.what());
  }
}

}  // namespace

ClassifierSession::ClassifierSession(SessionConfig config) : core_(std::make_shared<Core>()) {
  if (config.model_url) set_model_url(*config.model_url);
  core_->loader = config.loader ? std::move(config.loader) : BundleLoader([](const std::string& url) {
    return fetch_bundle(resolve(url), default_cache_dir(), FetchPolicy::PreferCache);
  });
  core_->queue_events = config.queue_events;
  executor_ = config.executor ? std::move(config.executor) : std::make_shared<ThreadExecutor>();
}

ClassifierSession::~ClassifierSession() = default;

void ClassifierSession::set_model_url(const std::string& url) {
  if (!is_supported_model_url(url)) throw Error(ErrorCode::InvalidUrl, url);
  std::lock_guard lock(core_->mu);
  core_->model_url = url;
  core_->plan.reset();
  core_->status = SessionStatus::Empty;
  core_->failure_reason.clear();
  ++core_->generation;
}

std::optional<std::string> ClassifierSession::model_url() const {
  std::lock_guard lock(core_->mu);
  return core_->model_url;
}

void ClassifierSession::attach_source(std::shared_ptr<FrameSource> source) {
  std::shared_ptr<FrameSource> previous;
  std::lock_guard lock(core_->mu);
  previous = std::exchange(core_->source, std::move(source));
}

void ClassifierSession::load() {
  std::lock_guard lock(core_->mu);
  const std::uint64_t generation = ++core_->generation;
  core_->plan.reset();
  if (!core_->model_url) {
    core_->status = SessionStatus::Failed;
    core_->failure_reason = "no model url";
    executor_->post([core = core_] {
      core->emit({.kind = EventKind::LoadError, .reason = "no model url"});
    });
    return;
  }
  core_->status = SessionStatus::Loading;
  core_->failure_reason.clear();
  executor_->post([core = core_, url = *core_->model_url, generation] {
    std::shared_ptr<const ExecutionPlan> plan;
    std::string failure;
    try {
      plan = std::make_shared<const ExecutionPlan>(build_plan(core->loader(url)));
    } catch (const Error& e) {
      failure = load_failure_reason(e);
    } catch (const std::exception& e) {
      failure = std::string("load failed: ") + e.what();
    }
    {
      std::lock_guard lock(core->mu);
      if (generation != core->generation) {
        failure = "load superseded";
      } else if (plan) {
        core->plan = plan;
        core->status = SessionStatus::Ready;
      } else {
        core->status = SessionStatus::Failed;
        core->failure_reason = failure;
      }
    }
    if (failure.empty()) {
      core->emit({.kind = EventKind::ClassifierReady});
    } else {
      core->emit({.kind = EventKind::LoadError, .reason = failure});
    }
  });
}

std::uint64_t ClassifierSession::classify_frame() {
  std::lock_guard lock(core_->mu);
  if (core_->status != SessionStatus::Ready) {
    throw Error(ErrorCode::NotReady, "session is " + std::string(to_string(core_->status)));
  }
  const std::uint64_t id = ++core_->next_request;
  auto fail = [this, id](std::string reason) {
    executor_->post([core = core_, id, reason = std::move(reason)] {
      core->emit({.kind = EventKind::ClassificationError, .request_id = id, .reason = reason});
    });
  };
  if (!core_->source) {
    fail("no source");
    return id;
  }
  std::optional<Frame> frame;
  try {
    frame = core_->source->current_frame();
  } catch (const std::exception& e) {
    fail(std::string("frame capture failed: ") + e.what());
    return id;
  }
  if (!frame) {
    fail("no frame available");
    return id;
  }
  executor_->post([core = core_, plan = core_->plan, id, frame = std::move(*frame)] {
    SessionEvent event{.request_id = id, .source_id = frame.source_id};
    try {
      const auto input = preprocess(frame, plan->image_size());
      event.results = make_results(*plan, plan->run(input));
      event.kind = EventKind::GotClassification;
    } catch (const std::exception& e) {
      event.kind = EventKind::ClassificationError;
      event.reason = e.what();
    }
    core->emit(std::move(event));
  });
  return id;
}

void ClassifierSession::stop() {
  std::shared_ptr<FrameSource> released;
  std::lock_guard lock(core_->mu);
  released = std::move(core_->source);
  core_->source.reset();
  core_->plan.reset();
  core_->status = SessionStatus::Stopped;
  ++core_->generation;
}

SessionStatus ClassifierSession::status() const {
  std::lock_guard lock(core_->mu);
  return core_->status;
}

std::string ClassifierSession::failure_reason() const {
  std::lock_guard lock(core_->mu);
  return core_->failure_reason;
}

std::shared_ptr<const ExecutionPlan> ClassifierSession::plan() const {
  std::lock_guard lock(core_->mu);
  return core_->plan;
}

std::size_t ClassifierSession::subscribe(Subscriber subscriber) {
  std::lock_guard lock(core_->subscribers_mu);
  const auto token = ++core_->next_token;
  core_->subscribers.emplace(token, std::move(subscriber));
  return token;
}

void ClassifierSession::unsubscribe(std::size_t token) {
  std::lock_guard lock(core_->subscribers_mu);
  core_->subscribers.erase(token);
}

std::vector<SessionEvent> ClassifierSession::poll() {
  std::lock_guard lock(core_->events_mu);
  std::vector<SessionEvent> out(std::make_move_iterator(core_->events.begin()),
                                std::make_move_iterator(core_->events.end()));
  core_->events.clear();
  return out;
}

std::optional<SessionEvent> ClassifierSession::wait_event(std::chrono::milliseconds timeout) {
  std::unique_lock lock(core_->events_mu);
  if (!core_->events_cv.wait_for(lock, timeout, [this] { return !core_->events.empty(); })) {
    return std::nullopt;
  }
  SessionEvent event = std::move(core_->events.front());
  core_->events.pop_front();
  return event;
}

std::shared_ptr<ClassifierSession> new_session(SessionConfig config) {
  return std::make_shared<ClassifierSession>(std::move(config));
}

}  // namespace tminfer
