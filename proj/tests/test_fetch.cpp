#include <httplib.h>

#include <chrono>
#include <thread>

#include "cache_faults.hpp"
#include "doctest.h"
#include "test_support.hpp"
#include "tminfer/fetch.hpp"

using namespace tminfer;
namespace fs = std::filesystem;
using namespace std::chrono_literals;

namespace {

template <class Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::IoError;
}

const std::string kBase = "https://models.example/tm/abc/";

std::shared_ptr<testing::MapTransport> fixture_transport(const char* id = "tiny_dense") {
  auto t = std::make_shared<testing::MapTransport>();
  t->serve_directory(kBase, testing::fixtures_dir() / id);
  return t;
}

// Everything observable about a bundle, serialized.
std::string fingerprint(const ModelBundle& b) {
  nlohmann::json j{{"labels", b.metadata.labels}, {"size", b.metadata.image_size}};
  std::string out = j.dump();
  const auto blobs = encode_weights(b.manifest, b.weights);
  for (const auto& [path, bytes] : blobs) out += path + std::string(bytes.begin(), bytes.end());
  return out;
}

}  // namespace

TEST_CASE("resolve: trailing slash and file names") {
  for (const char* url : {"https://teachablemachine.withgoogle.com/models/abc/",
                          "https://teachablemachine.withgoogle.com/models/abc",
                          "https://teachablemachine.withgoogle.com/models/abc/model.json",
                          "https://teachablemachine.withgoogle.com/models/abc/metadata.json",
                          "HTTPS://TeachableMachine.withgoogle.com/models/abc/"}) {
    CAPTURE(url);
    const auto loc = resolve(url);
    CHECK(loc.base == "https://teachablemachine.withgoogle.com/models/abc/");
    CHECK(loc.model_url == "https://teachablemachine.withgoogle.com/models/abc/model.json");
    CHECK(loc.metadata_url == "https://teachablemachine.withgoogle.com/models/abc/metadata.json");
    CHECK(!loc.is_local());
  }
  const auto local = resolve("file:///bundles/x/");
  CHECK(local.is_local());
  CHECK(local.model_url == "file:///bundles/x/model.json");
  CHECK(local.local_dir() == fs::path("/bundles/x/"));
  CHECK(resolve("http://host:8080/m").base == "http://host:8080/m/");
  CHECK(resolve("https://h").base == "https://h/");

  for (const char* bad : {"ftp://x/", "no-scheme", "https:///path", "https://h/m?x=1", "https://h/m#f",
                          "file://relative/path"}) {
    CAPTURE(bad);
    CHECK(code_of([&] { resolve(bad); }) == ErrorCode::InvalidUrl);
  }
}

TEST_CASE("resolve_model_ref: directories become file urls") {
  const auto dir = testing::fixtures_dir() / "tiny_dense";
  const auto loc = resolve_model_ref(dir.string());
  CHECK(loc.is_local());
  CHECK(fs::equivalent(loc.local_dir(), dir));
  CHECK(resolve_model_ref((dir / "model.json").string()).base == loc.base);
  CHECK(code_of([] { resolve_model_ref("/definitely/not/here"); }) == ErrorCode::InvalidUrl);
}

TEST_CASE("cache_key and default_cache_dir") {
  const auto a = cache_key(resolve(kBase));
  CHECK(a.size() == 64);
  CHECK(a == cache_key(resolve("https://models.example/tm/abc")));
  CHECK(a != cache_key(resolve("https://models.example/tm/abd/")));
  // SHA-256("abc") to pin the digest.
  BundleLocator raw{.base = "abc"};
  CHECK(cache_key(raw) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");

  ::setenv("TMINFER_CACHE_DIR", "/tmp/tm-cache-test", 1);
  CHECK(default_cache_dir() == fs::path("/tmp/tm-cache-test"));
  ::unsetenv("TMINFER_CACHE_DIR");
  ::setenv("XDG_CACHE_HOME", "/tmp/xdg", 1);
  CHECK(default_cache_dir() == fs::path("/tmp/xdg/tminfer"));
  ::unsetenv("XDG_CACHE_HOME");
}

TEST_CASE("fetch_bundle: local directories bypass the cache") {
  testing::TempDir cache;
  FetchReport report;
  const auto bundle =
      fetch_bundle(resolve_model_ref((testing::fixtures_dir() / "tiny_dense").string()), cache.path(),
                   FetchPolicy::PreferCache, {}, &report);
  CHECK(class_count(bundle) == 2);
  CHECK(report.entry_dir.empty());
  CHECK(report.files.size() == 3);
  CHECK(fs::is_empty(cache.path()));
}

TEST_CASE("fetch_bundle: download, cache hit, offline, refresh") {
  testing::TempDir cache;
  auto transport = fixture_transport();
  const auto loc = resolve(kBase);
  FetchReport report;

  const auto first = fetch_bundle(loc, cache.path(), FetchPolicy::PreferCache, {.transport = transport}, &report);
  CHECK(!report.cache_hit);
  REQUIRE(report.files.size() == 3);
  CHECK(report.files[0].first == loc.model_url);
  CHECK(report.files[1].first == loc.metadata_url);
  CHECK(report.files[2].first == kBase + "weights.bin");
  CHECK(report.files[2].second == 98 * 4);
  CHECK(transport->requests == 3);
  const auto key = cache_key(loc);
  CHECK(is_complete_entry(cache.path(), key));
  for (const char* name : {"model.json", "metadata.json", "weights.bin"}) {
    CHECK(read_file_bytes(cache.path() / key / name) == read_file_bytes(testing::fixtures_dir() / "tiny_dense" / name));
  }

  transport->offline = true;
  for (int run = 0; run < 3; ++run) {
    const auto again = fetch_bundle(loc, cache.path(), FetchPolicy::PreferCache, {.transport = transport}, &report);
    CHECK(report.cache_hit);
    CHECK(fingerprint(again) == fingerprint(first));
  }
  CHECK(encode_weights(first.manifest, first.weights).at("weights.bin") ==
        read_file_bytes(testing::fixtures_dir() / "tiny_dense/weights.bin"));

  CHECK(code_of([&] { fetch_bundle(loc, cache.path(), FetchPolicy::Refresh, {.transport = transport}); }) ==
        ErrorCode::FetchFailed);
  CHECK(is_complete_entry(cache.path(), key));  // a failed refresh keeps the old entry

  transport->offline = false;
  fetch_bundle(loc, cache.path(), FetchPolicy::Refresh, {.transport = transport}, &report);
  CHECK(!report.cache_hit);
  CHECK(is_complete_entry(cache.path(), key));
}

TEST_CASE("fetch_bundle: corrupt entries are refetched once") {
  testing::TempDir cache;
  auto transport = fixture_transport();
  const auto loc = resolve(kBase);
  const auto key = cache_key(loc);
  fetch_bundle(loc, cache.path(), FetchPolicy::PreferCache, {.transport = transport});

  // Truncate the weights behind the cache's back.
  {
    std::ofstream(cache.path() / key / "weights.bin", std::ios::binary | std::ios::trunc) << "xx";
  }
  CHECK(!is_complete_entry(cache.path(), key));
  FetchReport report;
  fetch_bundle(loc, cache.path(), FetchPolicy::PreferCache, {.transport = transport}, &report);
  CHECK(report.refetched_after_corruption);
  CHECK(is_complete_entry(cache.path(), key));

  // Corrupt and offline: CacheCorrupt, and the bad entry is gone.
  {
    std::ofstream(cache.path() / key / "model.json", std::ios::trunc) << "{";
  }
  transport->offline = true;
  CHECK(code_of([&] { fetch_bundle(loc, cache.path(), FetchPolicy::PreferCache, {.transport = transport}); }) ==
        ErrorCode::CacheCorrupt);
  CHECK(!fs::exists(cache.path() / key));
}

TEST_CASE("fetch_bundle: invalid remote bundles are not cached") {
  testing::TempDir cache;
  auto transport = fixture_transport();
  transport->put(kBase + "weights.bin", Bytes(10, 0));
  const auto loc = resolve(kBase);
  CHECK(code_of([&] { fetch_bundle(loc, cache.path(), FetchPolicy::PreferCache, {.transport = transport}); }) ==
        ErrorCode::ByteLengthMismatch);
  CHECK(!fs::exists(cache.path() / cache_key(loc)));

  auto missing = std::make_shared<testing::MapTransport>();
  CHECK(code_of([&] { fetch_bundle(loc, cache.path(), FetchPolicy::PreferCache, {.transport = missing}); }) ==
        ErrorCode::FetchFailed);
}

TEST_CASE("cache atomicity under injected faults") {
  const auto loc = resolve(kBase);
  const auto key = cache_key(loc);

  // Count the operations of one clean population.
  int total_ops = 0;
  {
    testing::TempDir cache;
    auto fs_probe = std::make_shared<testing::FaultyCacheFs>();
    fetch_bundle(loc, cache.path(), FetchPolicy::PreferCache, {.transport = fixture_transport("mini_conv_nested"), .fs = fs_probe});
    total_ops = fs_probe->operations;
  }
  REQUIRE(total_ops >= 5);

  for (bool with_old_entry : {false, true}) {
    for (int fail_at = 1; fail_at <= total_ops + 1; ++fail_at) {
      CAPTURE(with_old_entry);
      CAPTURE(fail_at);
      testing::TempDir cache;
      auto transport = fixture_transport("mini_conv_nested");
      if (with_old_entry) fetch_bundle(loc, cache.path(), FetchPolicy::PreferCache, {.transport = transport});

      auto faulty = std::make_shared<testing::FaultyCacheFs>();
      faulty->fail_at = fail_at;
      bool complete_before_rename = false;
      faulty->probe = [&] {
        // A crash here must not leave a complete entry that was not there before.
        if (!with_old_entry && is_complete_entry(cache.path(), key)) complete_before_rename = true;
      };
      bool faulted = false;
      try {
        fetch_bundle(loc, cache.path(), FetchPolicy::Refresh, {.transport = transport, .fs = faulty});
      } catch (const testing::InjectedFault&) {
        faulted = true;
      }
      CHECK(!complete_before_rename);
      CHECK(faulted == (fail_at <= faulty->operations));
      if (faulted && !with_old_entry) CHECK(!is_complete_entry(cache.path(), key));

      // Whatever was left behind, a clean fetch recovers and serves the exact bundle offline.
      fetch_bundle(loc, cache.path(), FetchPolicy::PreferCache, {.transport = transport});
      transport->offline = true;
      FetchReport report;
      const auto b = fetch_bundle(loc, cache.path(), FetchPolicy::PreferCache, {.transport = transport}, &report);
      CHECK(report.cache_hit);
      CHECK(encode_weights(b.manifest, b.weights).at("weights.bin") ==
            read_file_bytes(testing::fixtures_dir() / "mini_conv_nested/weights.bin"));
      for (const auto& item : fs::directory_iterator(cache.path())) {
        CHECK(!item.path().filename().string().starts_with(".tmp-"));
      }
    }
  }
}

TEST_CASE("stale temp directories are ignored and removed") {
  testing::TempDir cache;
  const auto loc = resolve(kBase);
  const auto key = cache_key(loc);
  const auto stale = cache.path() / (".tmp-" + key + "-999999-0");
  fs::create_directories(stale);
  std::ofstream(stale / "entry.meta") << R"({"complete":true,"files":{}})";
  CHECK(!is_complete_entry(cache.path(), key));
  fetch_bundle(loc, cache.path(), FetchPolicy::PreferCache, {.transport = fixture_transport()});
  CHECK(!fs::exists(stale));
}

TEST_CASE("same-key fetches are serialized") {
  testing::TempDir cache;
  auto transport = fixture_transport();
  const auto loc = resolve(kBase);
  std::vector<std::thread> threads;
  std::atomic<int> hits{0};
  for (int i = 0; i < 6; ++i) {
    threads.emplace_back([&] {
      FetchReport report;
      fetch_bundle(loc, cache.path(), FetchPolicy::PreferCache, {.transport = transport}, &report);
      if (report.cache_hit) ++hits;
    });
  }
  for (auto& t : threads) t.join();
  CHECK(transport->requests == 3);
  CHECK(hits == 5);
}

TEST_CASE("purge") {
  testing::TempDir cache;
  auto transport = fixture_transport();
  transport->serve_directory("https://models.example/other/", testing::fixtures_dir() / "tiny_dense");
  const auto a = resolve(kBase), b = resolve("https://models.example/other/");
  fetch_bundle(a, cache.path(), FetchPolicy::PreferCache, {.transport = transport});
  fetch_bundle(b, cache.path(), FetchPolicy::PreferCache, {.transport = transport});
  CHECK(purge(cache.path(), cache_key(a)) == 1);
  CHECK(!fs::exists(cache.path() / cache_key(a)));
  CHECK(is_complete_entry(cache.path(), cache_key(b)));
  CHECK(purge(cache.path()) == 1);
  CHECK(fs::is_empty(cache.path()));
  CHECK(purge(cache.path() / "missing") == 0);
}

TEST_CASE("http transport: serve, 404, retry, timeout") {
  httplib::Server server;
  std::atomic<int> flaky_calls{0};
  server.set_mount_point("/tm/", (testing::fixtures_dir() / "tiny_dense").string());
  server.Get("/flaky", [&](const httplib::Request&, httplib::Response& res) {
    if (++flaky_calls < 3) {
      res.status = 503;
    } else {
      res.set_content("ok", "text/plain");
    }
  });
  server.Get("/slow", [](const httplib::Request&, httplib::Response& res) {
    std::this_thread::sleep_for(400ms);
    res.set_content("late", "text/plain");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread worker([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  const std::string origin = "http://127.0.0.1:" + std::to_string(port);

  HttpTransport fast({.timeout = 150ms, .retries = 2, .backoff = 1ms});
  const auto body = fast.get(origin + "/flaky");
  CHECK(std::string(body.begin(), body.end()) == "ok");
  CHECK(flaky_calls == 3);

  CHECK(code_of([&] { fast.get(origin + "/nothing"); }) == ErrorCode::FetchFailed);
  CHECK(code_of([&] { HttpTransport({.timeout = 100ms, .retries = 0, .backoff = 1ms}).get(origin + "/slow"); }) ==
        ErrorCode::Timeout);

  testing::TempDir cache;
  FetchReport report;
  const auto bundle = fetch_bundle(resolve(origin + "/tm"), cache.path(), FetchPolicy::PreferCache, {}, &report);
  CHECK(class_count(bundle) == 2);
  CHECK(!report.cache_hit);

  server.stop();
  worker.join();
  // Offline now: the cache still serves.
  fetch_bundle(resolve(origin + "/tm"), cache.path(), FetchPolicy::PreferCache, {}, &report);
  CHECK(report.cache_hit);
}
