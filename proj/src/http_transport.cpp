#include <httplib.h>

#include <random>
#include <thread>

#include "tminfer/error.hpp"
#include "tminfer/fetch.hpp"

namespace tminfer {

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

SplitUrl split_url(const std::string& url) {
  const auto sep = url.find("://");
  if (sep == std::string::npos) throw Error(ErrorCode::InvalidUrl, url);
  const auto slash = url.find('/', sep + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

bool retryable_status(int status) { return status == 408 || status == 429 || status >= 500; }

}  // namespace

HttpTransport::HttpTransport(HttpOptions options) : options_(options) {}

Bytes HttpTransport::get(const std::string& url) {
  const auto [origin, path] = split_url(url);
  httplib::Client client(origin);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(options_.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(options_.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  client.set_follow_location(true);

  std::mt19937 rng(std::random_device{}());
  std::string cause;
  bool timed_out = false;
  for (int attempt = 0; attempt <= options_.retries; ++attempt) {
    if (attempt > 0) {
      const auto base = options_.backoff * (1 << (attempt - 1));
      std::uniform_int_distribution<long long> jitter(0, std::max<long long>(options_.backoff.count(), 1));
      std::this_thread::sleep_for(base + std::chrono::milliseconds(jitter(rng)));
    }
    auto res = client.Get(path);
    if (!res) {
      timed_out = res.error() == httplib::Error::ConnectionTimeout || res.error() == httplib::Error::Read;
      cause = httplib::to_string(res.error());
      continue;
    }
    if (res->status == 200) return Bytes(res->body.begin(), res->body.end());
    timed_out = false;
    cause = "HTTP " + std::to_string(res->status);
    if (!retryable_status(res->status)) break;
  }
  throw Error(timed_out ? ErrorCode::Timeout : ErrorCode::FetchFailed, url + ": " + cause);
}

}  // namespace tminfer
