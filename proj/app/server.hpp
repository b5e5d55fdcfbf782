#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <string>

#include "tminfer/session.hpp"

namespace httplib {
class Server;
}

namespace tminfer::app {

struct ServerOptions {
  std::string model_ref;
  std::filesystem::path cache_dir;
  std::chrono::milliseconds request_timeout{30'000};
  // Overrides fetching, mostly for tests.
  BundleLoader loader;
};

// One model, one session. Every /classify request is funnelled through the
// session's FIFO and answered with the session wire format.
//
//   GET  /healthz   200 "ok"
//   GET  /metadata  labels, image size, model name (503 until ready)
//   POST /classify  raw PNG/JPEG body or multipart field "image"
class ClassificationServer {
 public:
  ClassificationServer(ServerOptions options, std::ostream& log);
  ~ClassificationServer();
  ClassificationServer(const ClassificationServer&) = delete;
  ClassificationServer& operator=(const ClassificationServer&) = delete;

  // Starts loading the model in the background.
  void start_loading();

  // Returns the bound port, or nullopt when binding fails. Port 0 picks a free port.
  std::optional<int> bind(const std::string& host, int port);
  // Serves until stop(). Requires a successful bind().
  void listen();
  void stop();

  bool ready() const { return ready_; }
  // Set when the model failed to load.
  std::optional<std::string> load_failure() const;
  // Blocks until the model is ready or failed, or the timeout passes.
  bool wait_until_loaded(std::chrono::milliseconds timeout);

 private:
  struct Reply {
    int status = 200;
    std::string body;
    std::string content_type = "text/plain";
  };

  Reply classify(const std::string& bytes);
  void on_event(const SessionEvent& event);
  void log_line(const std::string& line);

  ServerOptions options_;
  std::ostream& log_;
  std::mutex log_mu_;
  std::unique_ptr<httplib::Server> http_;
  std::shared_ptr<ClassifierSession> session_;
  std::shared_ptr<LatestFrameSource> source_;

  std::atomic<bool> ready_{false};
  mutable std::mutex state_mu_;
  std::condition_variable state_cv_;
  std::optional<std::string> load_failure_;
  std::optional<Metadata> metadata_;

  // Serializes push + classify so each request classifies its own frame.
  std::mutex submit_mu_;
  std::uint64_t next_frame_ = 0;
  std::map<std::uint64_t, SessionEvent> completions_;
  std::set<std::uint64_t> abandoned_;
};

}  // namespace tminfer::app
