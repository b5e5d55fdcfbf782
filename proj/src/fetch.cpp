#include "tminfer/fetch.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdlib>
#include <ctime>
#include <fstream>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "tminfer/error.hpp"

namespace tminfer {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kFileScheme = "file://";

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string as_text(const Bytes& b) { return std::string(b.begin(), b.end()); }

Bytes as_bytes(const std::string& s) { return Bytes(s.begin(), s.end()); }

// Exclusive advisory lock on <cache_dir>/<key>.lock for the lifetime of the object.
class KeyLock {
 public:
  explicit KeyLock(const fs::path& path) {
    fd_ = ::open(path.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
    if (fd_ < 0) throw Error(ErrorCode::IoError, "cannot open lock file " + path.string());
    if (::flock(fd_, LOCK_EX) != 0) {
      ::close(fd_);
      throw Error(ErrorCode::IoError, "cannot lock " + path.string());
    }
  }
  ~KeyLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  KeyLock(const KeyLock&) = delete;
  KeyLock& operator=(const KeyLock&) = delete;

 private:
  int fd_ = -1;
};

struct Downloaded {
  ModelBundle bundle;
  // Cache file name -> bytes, in download order.
  std::vector<std::pair<std::string, Bytes>> files;
};

Downloaded download(const BundleLocator& locator, Transport& transport, FetchReport& report) {
  Downloaded out;
  Bytes model = transport.get(locator.model_url);
  report.files.emplace_back(locator.model_url, model.size());
  Topology topo = parse_topology(as_text(model));

  Bytes metadata = transport.get(locator.metadata_url);
  report.files.emplace_back(locator.metadata_url, metadata.size());
  Metadata meta = parse_metadata(as_text(metadata));

  std::map<std::string, Bytes> blobs;
  out.files.emplace_back(std::string(kModelFile), std::move(model));
  out.files.emplace_back(std::string(kMetadataFile), std::move(metadata));
  for (const auto& path : weight_paths(topo.manifest)) {
    const auto url = locator.url_for(path);
    Bytes blob = transport.get(url);
    report.files.emplace_back(url, blob.size());
    blobs[path] = blob;
    out.files.emplace_back(path, std::move(blob));
  }
  WeightStore weights = decode_weights(topo.manifest, blobs);
  out.bundle = assemble_bundle(std::move(meta), std::move(topo), std::move(weights));
  return out;
}

json read_entry_meta(const fs::path& entry) {
  std::ifstream in(entry / kEntryMetaFile);
  if (!in) throw Error(ErrorCode::CacheCorrupt, "missing entry.meta in " + entry.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CacheCorrupt, std::string("unreadable entry.meta: ") + e.what());
  }
}

void verify_entry(const fs::path& entry) {
  const json meta = read_entry_meta(entry);
  if (!meta.value("complete", false)) throw Error(ErrorCode::CacheCorrupt, "entry incomplete");
  const auto files = meta.find("files");
  if (files == meta.end() || !files->is_object() || files->empty()) {
    throw Error(ErrorCode::CacheCorrupt, "entry.meta lists no files");
  }
  for (const auto& [name, info] : files->items()) {
    std::error_code ec;
    const auto size = fs::file_size(entry / name, ec);
    if (ec) throw Error(ErrorCode::CacheCorrupt, "missing cached file " + name);
    if (size != info.value("size", std::uintmax_t{0}) || !info.contains("size")) {
      throw Error(ErrorCode::CacheCorrupt, "size mismatch for cached " + name);
    }
  }
}

ModelBundle load_entry(const fs::path& entry, const BundleLocator& locator, FetchReport& report) {
  verify_entry(entry);
  try {
    Topology topo = parse_topology(as_text(read_file_bytes(entry / kModelFile)));
    Metadata meta = parse_metadata(as_text(read_file_bytes(entry / kMetadataFile)));
    std::map<std::string, Bytes> blobs;
    for (const auto& path : weight_paths(topo.manifest)) {
      blobs[path] = read_file_bytes(entry / path);
    }
    report.files.clear();
    report.files.emplace_back(locator.model_url, fs::file_size(entry / kModelFile));
    report.files.emplace_back(locator.metadata_url, fs::file_size(entry / kMetadataFile));
    for (const auto& [path, blob] : blobs) report.files.emplace_back(locator.url_for(path), blob.size());
    WeightStore weights = decode_weights(topo.manifest, blobs);
    return assemble_bundle(std::move(meta), std::move(topo), std::move(weights));
  } catch (const Error& e) {
    throw Error(ErrorCode::CacheCorrupt, std::string("cached bundle unusable: ") + e.what());
  }
}

std::string temp_prefix(const std::string& key) { return ".tmp-" + key + "-"; }

void remove_stale_temps(const fs::path& cache_dir, const std::string& key) {
  std::error_code ec;
  for (const auto& item : fs::directory_iterator(cache_dir, ec)) {
    if (item.path().filename().string().starts_with(temp_prefix(key))) fs::remove_all(item.path(), ec);
  }
}

void commit_entry(CacheFileSystem& files_fs, const fs::path& cache_dir, const std::string& key,
                  const BundleLocator& locator, const std::vector<std::pair<std::string, Bytes>>& files) {
  static std::atomic<unsigned> counter{0};
  const fs::path tmp = cache_dir / (temp_prefix(key) + std::to_string(::getpid()) + "-" +
                                    std::to_string(counter++));
  const fs::path entry = cache_dir / key;
  try {
    files_fs.create_directories(tmp);
    json meta = {{"base_url", locator.base}, {"created_at", utc_timestamp()}, {"complete", true}};
    json listing = json::object();
    for (const auto& [name, bytes] : files) {
      const fs::path target = tmp / name;
      if (target.parent_path() != tmp) files_fs.create_directories(target.parent_path());
      files_fs.write_file(target, bytes);
      listing[name] = {{"size", bytes.size()}, {"fetched_at", utc_timestamp()}};
    }
    meta["files"] = std::move(listing);
    files_fs.write_file(tmp / kEntryMetaFile, as_bytes(meta.dump(1) + "\n"));
    if (fs::exists(entry)) files_fs.remove_all(entry);
    files_fs.rename(tmp, entry);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(tmp, ec);
    throw;
  }
}

bool is_hex_key(const std::string& name) {
  return name.size() == 64 && std::all_of(name.begin(), name.end(), [](char c) {
           return std::isdigit(static_cast<unsigned char>(c)) || (c >= 'a' && c <= 'f');
         });
}

}  // namespace

fs::path BundleLocator::local_dir() const {
  if (!is_local()) throw Error(ErrorCode::InvalidUrl, base + " is not a file URL");
  return fs::path(base.substr(kFileScheme.size()));
}

BundleLocator resolve(std::string_view url) {
  std::string s(url);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.erase(s.begin());

  const auto sep = s.find("://");
  if (sep == std::string::npos) throw Error(ErrorCode::InvalidUrl, "missing scheme in '" + s + "'");
  const std::string scheme = lower(s.substr(0, sep));
  std::string rest = s.substr(sep + 3);
  if (scheme != "http" && scheme != "https" && scheme != "file") {
    throw Error(ErrorCode::InvalidUrl, "unsupported scheme '" + scheme + "'");
  }
  if (rest.find_first_of("?#") != std::string::npos) {
    throw Error(ErrorCode::InvalidUrl, "query or fragment not allowed in model URL");
  }
  if (scheme == "file") {
    if (rest.empty() || rest.front() != '/') {
      throw Error(ErrorCode::InvalidUrl, "file URL must carry an absolute path");
    }
  } else {
    const auto slash = rest.find('/');
    const std::string host = rest.substr(0, slash);
    if (host.empty() || host.find_first_of(" \t") != std::string::npos) {
      throw Error(ErrorCode::InvalidUrl, "missing host in '" + s + "'");
    }
    rest = lower(host) + (slash == std::string::npos ? "" : rest.substr(slash));
  }

  for (std::string_view file : {kModelFile, kMetadataFile}) {
    if (rest.ends_with("/" + std::string(file))) rest.resize(rest.size() - file.size());
  }
  if (rest.back() != '/') rest += '/';

  BundleLocator loc;
  loc.base = scheme + "://" + rest;
  loc.model_url = loc.base + std::string(kModelFile);
  loc.metadata_url = loc.base + std::string(kMetadataFile);
  return loc;
}

BundleLocator resolve_model_ref(std::string_view ref) {
  if (ref.find("://") != std::string_view::npos) return resolve(ref);
  std::error_code ec;
  fs::path path(ref);
  if (fs::is_regular_file(path, ec) && path.filename() == kModelFile) path = path.parent_path();
  if (!fs::is_directory(path, ec)) {
    throw Error(ErrorCode::InvalidUrl, "'" + std::string(ref) + "' is neither a URL nor a bundle directory");
  }
  return resolve(std::string(kFileScheme) + fs::weakly_canonical(fs::absolute(path)).string());
}

Bytes FileTransport::get(const std::string& url) {
  if (!url.starts_with(kFileScheme)) throw Error(ErrorCode::FetchFailed, url + ": not a file URL");
  try {
    return read_file_bytes(url.substr(kFileScheme.size()));
  } catch (const Error& e) {
    throw Error(ErrorCode::FetchFailed, url + ": " + e.detail());
  }
}

void CacheFileSystem::create_directories(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "mkdir " + dir.string() + ": " + ec.message());
}

void CacheFileSystem::write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out) throw Error(ErrorCode::IoError, "write " + path.string());
}

void CacheFileSystem::rename(const fs::path& from, const fs::path& to) {
  std::error_code ec;
  fs::rename(from, to, ec);
  if (ec) throw Error(ErrorCode::IoError, "rename " + from.string() + ": " + ec.message());
}

void CacheFileSystem::remove_all(const fs::path& path) {
  std::error_code ec;
  fs::remove_all(path, ec);
  if (ec) throw Error(ErrorCode::IoError, "remove " + path.string() + ": " + ec.message());
}

std::string cache_key(const BundleLocator& locator) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(locator.base.data(), locator.base.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::IoError, "sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex += kHex[digest[i] >> 4];
    hex += kHex[digest[i] & 0xF];
  }
  return hex;
}

fs::path default_cache_dir() {
  if (const char* dir = std::getenv("TMINFER_CACHE_DIR"); dir && *dir) return dir;
  if (const char* xdg = std::getenv("XDG_CACHE_HOME"); xdg && *xdg) return fs::path(xdg) / "tminfer";
  if (const char* home = std::getenv("HOME"); home && *home) return fs::path(home) / ".cache" / "tminfer";
  return fs::temp_directory_path() / "tminfer-cache";
}

ModelBundle fetch_bundle(const BundleLocator& locator, const fs::path& cache_dir, FetchPolicy policy,
                         const FetchOptions& options, FetchReport* report) {
  FetchReport scratch;
  FetchReport& rep = report ? *report : scratch;
  rep = FetchReport{};

  if (locator.is_local()) {
    auto transport = options.transport ? options.transport : std::make_shared<FileTransport>();
    return download(locator, *transport, rep).bundle;
  }

  auto files_fs = options.fs ? options.fs : std::make_shared<CacheFileSystem>();
  files_fs->create_directories(cache_dir);
  const std::string key = cache_key(locator);
  const fs::path entry = cache_dir / key;
  rep.entry_dir = entry;

  KeyLock lock(cache_dir / (key + ".lock"));
  remove_stale_temps(cache_dir, key);

  bool corrupt = false;
  if (policy == FetchPolicy::PreferCache && fs::exists(entry)) {
    try {
      ModelBundle bundle = load_entry(entry, locator, rep);
      rep.cache_hit = true;
      return bundle;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::CacheCorrupt) throw;
      corrupt = true;
      rep.refetched_after_corruption = true;
      files_fs->remove_all(entry);
    }
  }

  auto transport = options.transport ? options.transport : std::make_shared<HttpTransport>();
  Downloaded fresh;
  try {
    fresh = download(locator, *transport, rep);
  } catch (const Error& e) {
    if (corrupt) {
      throw Error(ErrorCode::CacheCorrupt, "entry invalidated and refetch failed: " + std::string(e.what()));
    }
    throw;
  }
  commit_entry(*files_fs, cache_dir, key, locator, fresh.files);
  return std::move(fresh.bundle);
}

bool is_complete_entry(const fs::path& cache_dir, const std::string& key) {
  try {
    verify_entry(cache_dir / key);
    return true;
  } catch (const Error&) {
    return false;
  }
}

std::size_t purge(const fs::path& cache_dir, const std::optional<std::string>& key) {
  std::error_code ec;
  if (!fs::is_directory(cache_dir, ec)) return 0;
  std::size_t removed = 0;
  auto remove = [&](const fs::path& p) {
    fs::remove_all(p, ec);
    if (ec) throw Error(ErrorCode::IoError, "remove " + p.string() + ": " + ec.message());
  };
  if (key) {
    const fs::path entry = cache_dir / *key;
    if (fs::exists(entry)) {
      remove(entry);
      ++removed;
    }
    fs::remove(cache_dir / (*key + ".lock"), ec);
    return removed;
  }
  for (const auto& item : fs::directory_iterator(cache_dir)) {
    const auto name = item.path().filename().string();
    if (item.is_directory() && is_hex_key(name)) {
      remove(item.path());
      ++removed;
    } else if (name.starts_with(".tmp-") || (name.ends_with(".lock") && is_hex_key(name.substr(0, 64)))) {
      remove(item.path());
    }
  }
  return removed;
}

}  // namespace tminfer
