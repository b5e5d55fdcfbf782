#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tminfer/bundle.hpp"

namespace tminfer {

// A hosted (http/https) or local (file) model base plus the derived file URLs.
struct BundleLocator {
  std::string base;  // always ends in '/'
  std::string model_url;
  std::string metadata_url;

  bool is_local() const { return base.starts_with("file://"); }
  std::string url_for(std::string_view relative_path) const { return base + std::string(relative_path); }
  // Filesystem directory of a file:// locator.
  std::filesystem::path local_dir() const;

  friend bool operator==(const BundleLocator&, const BundleLocator&) = default;
};

// Normalizes `url` to a base ending in '/'. A trailing model.json or
// metadata.json file name is stripped. Throws Error(InvalidUrl).
BundleLocator resolve(std::string_view url);

// Turns a CLI model reference (URL or local directory) into a locator.
BundleLocator resolve_model_ref(std::string_view ref);

class Transport {
 public:
  virtual ~Transport() = default;
  // Returns the body of a successful GET. Throws Error(FetchFailed | Timeout).
  virtual Bytes get(const std::string& url) = 0;
};

struct HttpOptions {
  std::chrono::milliseconds timeout{30'000};
  int retries = 2;
  std::chrono::milliseconds backoff{250};
};

// cpp-httplib backed client with retry, exponential backoff and jitter.
class HttpTransport final : public Transport {
 public:
  explicit HttpTransport(HttpOptions options = {});
  Bytes get(const std::string& url) override;

 private:
  HttpOptions options_;
};

// Serves file:// URLs from disk.
class FileTransport final : public Transport {
 public:
  Bytes get(const std::string& url) override;
};

// File operations used to populate the cache. Swappable so tests can inject
// failures between any two writes.
class CacheFileSystem {
 public:
  virtual ~CacheFileSystem() = default;
  virtual void create_directories(const std::filesystem::path& dir);
  virtual void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
  virtual void rename(const std::filesystem::path& from, const std::filesystem::path& to);
  virtual void remove_all(const std::filesystem::path& path);
};

enum class FetchPolicy { PreferCache, Refresh };

struct FetchOptions {
  // Defaults to HttpTransport for http(s) and FileTransport for file URLs.
  std::shared_ptr<Transport> transport;
  std::shared_ptr<CacheFileSystem> fs;
};

struct FetchReport {
  bool cache_hit = false;
  bool refetched_after_corruption = false;
  std::filesystem::path entry_dir;  // empty for local bundles
  std::vector<std::pair<std::string, std::size_t>> files;  // url, byte count
};

inline constexpr std::string_view kEntryMetaFile = "entry.meta";

// Hex SHA-256 of the normalized base URL.
std::string cache_key(const BundleLocator& locator);

// Cache directory from TMINFER_CACHE_DIR, else $XDG_CACHE_HOME/tminfer,
// else ~/.cache/tminfer.
std::filesystem::path default_cache_dir();

ModelBundle fetch_bundle(const BundleLocator& locator, const std::filesystem::path& cache_dir,
                         FetchPolicy policy, const FetchOptions& options = {},
                         FetchReport* report = nullptr);

// True when the entry exists, its entry.meta is marked complete, and every
// recorded file is present with the recorded size.
bool is_complete_entry(const std::filesystem::path& cache_dir, const std::string& key);

// Removes one entry (by key) or every entry. Returns how many were removed.
std::size_t purge(const std::filesystem::path& cache_dir,
                  const std::optional<std::string>& key = std::nullopt);

}  // namespace tminfer
