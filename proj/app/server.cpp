#include "server.hpp"

#include <httplib.h>

#include <nlohmann/json.hpp>

#include "tminfer/error.hpp"
#include "tminfer/fetch.hpp"
#include "tminfer/vision.hpp"

namespace tminfer::app {

ClassificationServer::ClassificationServer(ServerOptions options, std::ostream& log)
    : options_(std::move(options)), log_(log), http_(std::make_unique<httplib::Server>()),
      source_(std::make_shared<LatestFrameSource>()) {
  // httplib's default adds SO_REUSEPORT, which lets a second server share a busy port.
  http_->set_socket_options([](socket_t sock) {
    int yes = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
  });
  BundleLoader fetch = options_.loader;
  if (!fetch) {
    fetch = [cache = options_.cache_dir](const std::string& url) {
      return fetch_bundle(resolve(url), cache, FetchPolicy::PreferCache);
    };
  }
  SessionConfig config;
  config.model_url = resolve_model_ref(options_.model_ref).base;
  config.loader = [this, fetch](const std::string& url) {
    ModelBundle bundle = fetch(url);
    std::lock_guard lock(state_mu_);
    metadata_ = bundle.metadata;
    return bundle;
  };
  config.queue_events = false;
  session_ = new_session(std::move(config));
  session_->attach_source(source_);
  session_->subscribe([this](const SessionEvent& e) { on_event(e); });

  http_->Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("ok", "text/plain");
  });

  http_->Get("/metadata", [this](const httplib::Request&, httplib::Response& res) {
    if (!ready_) {
      res.status = 503;
      res.set_content("model not ready", "text/plain");
      return;
    }
    std::lock_guard lock(state_mu_);
    const nlohmann::json body{{"labels", metadata_->labels},
                              {"image_size", metadata_->image_size},
                              {"model_name", metadata_->model_name}};
    res.set_content(body.dump(), "application/json");
  });

  http_->Post("/classify", [this](const httplib::Request& req, httplib::Response& res) {
    Reply reply;
    if (req.is_multipart_form_data()) {
      if (!req.has_file("image")) {
        reply = {400, "multipart body has no \"image\" field"};
      } else {
        reply = classify(req.get_file_value("image").content);
      }
    } else {
      reply = classify(req.body);
    }
    res.status = reply.status;
    res.set_content(reply.body, reply.content_type);
  });

  http_->set_logger([this](const httplib::Request& req, const httplib::Response& res) {
    log_line(req.method + " " + req.path + " " + std::to_string(res.status));
  });
}

ClassificationServer::~ClassificationServer() {
  stop();
  // Drain the session's executor while the members its callbacks touch are alive.
  session_->stop();
  session_.reset();
}

void ClassificationServer::start_loading() { session_->load(); }

std::optional<int> ClassificationServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = http_->bind_to_any_port(host);
    if (bound <= 0) return std::nullopt;
    return bound;
  }
  if (!http_->bind_to_port(host, port)) return std::nullopt;
  return port;
}

void ClassificationServer::listen() { http_->listen_after_bind(); }

void ClassificationServer::stop() {
  http_->stop();
  state_cv_.notify_all();
}

std::optional<std::string> ClassificationServer::load_failure() const {
  std::lock_guard lock(state_mu_);
  return load_failure_;
}

bool ClassificationServer::wait_until_loaded(std::chrono::milliseconds timeout) {
  std::unique_lock lock(state_mu_);
  return state_cv_.wait_for(lock, timeout, [this] { return ready_ || load_failure_.has_value(); });
}

ClassificationServer::Reply ClassificationServer::classify(const std::string& bytes) {
  if (!ready_) return {503, "model not ready"};
  Frame frame;
  try {
    frame = decode_image(std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
  } catch (const Error& e) {
    return {415, std::string("cannot decode image: ") + e.what()};
  }

  std::uint64_t id = 0;
  {
    std::lock_guard submit(submit_mu_);
    frame.source_id = "request-" + std::to_string(++next_frame_);
    source_->push(std::move(frame));
    try {
      id = session_->classify_frame();
    } catch (const Error& e) {
      return {503, e.what()};
    }
  }

  std::unique_lock lock(state_mu_);
  const bool done = state_cv_.wait_for(lock, options_.request_timeout, [&] { return completions_.contains(id); });
  if (!done) {
    abandoned_.insert(id);
    return {503, "classification timed out"};
  }
  SessionEvent event = std::move(completions_.at(id));
  completions_.erase(id);
  lock.unlock();
  if (event.kind != EventKind::GotClassification) return {500, event.reason};
  return {200, format_result(event.results), "application/json"};
}

void ClassificationServer::on_event(const SessionEvent& event) {
  switch (event.kind) {
    case EventKind::ClassifierReady: {
      {
        std::lock_guard lock(state_mu_);
        ready_ = true;
      }
      state_cv_.notify_all();
      log_line("model ready");
      break;
    }
    case EventKind::LoadError: {
      {
        std::lock_guard lock(state_mu_);
        load_failure_ = event.reason;
      }
      state_cv_.notify_all();
      log_line("model load failed: " + event.reason);
      break;
    }
    case EventKind::GotClassification:
    case EventKind::ClassificationError: {
      {
        std::lock_guard lock(state_mu_);
        const auto id = *event.request_id;
        if (abandoned_.erase(id) == 0) completions_.emplace(id, event);
      }
      state_cv_.notify_all();
      break;
    }
  }
}

void ClassificationServer::log_line(const std::string& line) {
  std::lock_guard lock(log_mu_);
  log_ << line << std::endl;
}

}  // namespace tminfer::app
