#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tminfer/bundle.hpp"
#include "tminfer/executor.hpp"
#include "tminfer/graph.hpp"
#include "tminfer/vision.hpp"

// Event-driven classifier session modelled on the App Inventor extension
// blocks: URL_Model, WebView (here: a frame source), ClassifierReady,
// ClassifyVideoData, GotClassification and StopWebcam.
namespace tminfer {

struct Prediction {
  std::string label;
  float probability = 0.0f;

  friend bool operator==(const Prediction&, const Prediction&) = default;
};

// One Prediction per class, in metadata label order.
using ResultSet = std::vector<Prediction>;

ResultSet make_results(const ExecutionPlan& plan, const NdArray& probabilities);

// `[{"label":"...","probability":0.900000},...]`, six decimals, input order.
std::string format_result(std::span<const Prediction> results);

// Pull-based frame provider: the session asks for the current frame at the
// moment classify_frame() is called.
class FrameSource {
 public:
  virtual ~FrameSource() = default;
  virtual std::optional<Frame> current_frame() = 0;
};

// Holds whatever frame was last pushed into it.
class LatestFrameSource final : public FrameSource {
 public:
  void push(Frame frame);
  std::optional<Frame> current_frame() override;

 private:
  std::mutex mu_;
  std::optional<Frame> frame_;
};

enum class SessionStatus { Empty, Loading, Ready, Stopped, Failed };

std::string_view to_string(SessionStatus status) noexcept;

enum class EventKind { ClassifierReady, GotClassification, ClassificationError, LoadError };

std::string_view to_string(EventKind kind) noexcept;

struct SessionEvent {
  EventKind kind = EventKind::ClassifierReady;
  std::uint64_t seq = 0;
  // Set for GotClassification and ClassificationError.
  std::optional<std::uint64_t> request_id;
  ResultSet results;
  std::string reason;
  // Identifies the captured frame for classification events.
  std::string source_id;
};

using BundleLoader = std::function<ModelBundle(const std::string& url)>;

struct SessionConfig {
  std::optional<std::string> model_url;
  // Defaults to fetch_bundle() against the default cache directory.
  BundleLoader loader;
  // Defaults to a private ThreadExecutor.
  std::shared_ptr<Executor> executor;
  // Keep delivered events for poll()/wait_event(). Disable when only subscribing.
  bool queue_events = true;
};

class ClassifierSession {
 public:
  using Subscriber = std::function<void(const SessionEvent&)>;

  explicit ClassifierSession(SessionConfig config = {});
  ~ClassifierSession();
  ClassifierSession(const ClassifierSession&) = delete;
  ClassifierSession& operator=(const ClassifierSession&) = delete;

  // Accepts http, https and file URLs. Discards any loaded plan.
  void set_model_url(const std::string& url);
  std::optional<std::string> model_url() const;

  void attach_source(std::shared_ptr<FrameSource> source);

  // Asynchronous. Completion is reported as ClassifierReady or LoadError.
  void load();

  // Captures the source's frame now and queues it. Throws Error(NotReady)
  // unless the session is Ready.
  std::uint64_t classify_frame();

  void stop();

  SessionStatus status() const;
  std::string failure_reason() const;
  std::shared_ptr<const ExecutionPlan> plan() const;

  // Subscribers run on the session's executor, one event at a time, in seq order.
  std::size_t subscribe(Subscriber subscriber);
  void unsubscribe(std::size_t token);

  std::vector<SessionEvent> poll();
  std::optional<SessionEvent> wait_event(std::chrono::milliseconds timeout);

 private:
  struct Core;
  std::shared_ptr<Core> core_;
  std::shared_ptr<Executor> executor_;
};

// The extension's instance getter: a fresh, independent session in Empty.
std::shared_ptr<ClassifierSession> new_session(SessionConfig config = {});

// http(s) and file URLs are valid model URLs.
bool is_supported_model_url(std::string_view url);

}  // namespace tminfer
