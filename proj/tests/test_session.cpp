#include <atomic>
#include <thread>

#include "doctest.h"
#include "session_harness.hpp"
#include "test_support.hpp"
#include "tminfer/fetch.hpp"
#include "tminfer/vision.hpp"

using namespace tminfer;
using namespace std::chrono_literals;

namespace {

const std::string kTinyUrl = "https://models.example/tiny/";
const std::string kConvUrl = "https://models.example/conv/";

testing::ScheduleBundles schedule_bundles() {
  testing::ScheduleBundles b;
  b.by_url[kTinyUrl] = read_bundle_directory(testing::fixtures_dir() / "tiny_dense");
  b.by_url[kConvUrl] = read_bundle_directory(testing::fixtures_dir() / "mini_conv_nested");
  return b;
}

struct Harness {
  std::shared_ptr<ManualExecutor> executor = std::make_shared<ManualExecutor>();
  std::shared_ptr<ClassifierSession> session;
  std::vector<SessionEvent> events;

  explicit Harness(std::optional<std::string> url = kTinyUrl) {
    auto bundles = std::make_shared<testing::ScheduleBundles>(schedule_bundles());
    SessionConfig config{.model_url = url,
                         .loader =
                             [bundles](const std::string& u) {
                               auto it = bundles->by_url.find(u);
                               if (it == bundles->by_url.end()) throw Error(ErrorCode::FetchFailed, u);
                               return it->second;
                             },
                         .executor = executor};
    session = new_session(config);
    session->subscribe([this](const SessionEvent& e) { events.push_back(e); });
  }

  void ready() {
    session->load();
    executor->run_all();
    REQUIRE(session->status() == SessionStatus::Ready);
  }
};

Frame golden_frame(const char* fixture, const char* image) {
  auto f = decode_image_file(testing::fixtures_dir() / fixture / "images" / image);
  f.source_id = image;
  return f;
}

}  // namespace

TEST_CASE("format_result") {
  const ResultSet r{{"plastic garbage", 0.9f}, {"metal", 0.1f}};
  CHECK(format_result(r) ==
        R"([{"label":"plastic garbage","probability":0.900000},{"label":"metal","probability":0.100000}])");
  CHECK(format_result(r) == format_result(r));
  const ResultSet quoted{{"a \"b\"\\", 1.0f}};
  CHECK(format_result(quoted) == R"([{"label":"a \"b\"\\","probability":1.000000}])");
}

TEST_CASE("new_session and set_model_url") {
  auto a = new_session({.executor = std::make_shared<ManualExecutor>()});
  CHECK(a->status() == SessionStatus::Empty);
  CHECK(!a->model_url());

  a->set_model_url("https://teachablemachine.withgoogle.com/models/abc/");
  CHECK(a->model_url() == "https://teachablemachine.withgoogle.com/models/abc/");
  CHECK(a->status() == SessionStatus::Empty);
  CHECK_THROWS_AS(a->set_model_url("ftp://x"), Error);

  auto preset = new_session({.model_url = kTinyUrl, .executor = std::make_shared<ManualExecutor>()});
  CHECK(preset->model_url() == kTinyUrl);

  Harness h;
  h.ready();
  h.session->set_model_url(kConvUrl);
  CHECK(h.session->status() == SessionStatus::Empty);
  CHECK(h.session->plan() == nullptr);
}

TEST_CASE("sessions are independent") {
  Harness a, b;
  a.ready();
  CHECK(a.events.size() == 1);
  CHECK(b.events.empty());
  CHECK(b.session->status() == SessionStatus::Empty);
}

TEST_CASE("load: success, unreachable, no url") {
  Harness ok;
  ok.session->load();
  CHECK(ok.session->status() == SessionStatus::Loading);
  CHECK_THROWS_AS(ok.session->classify_frame(), Error);
  ok.executor->run_all();
  REQUIRE(ok.events.size() == 1);
  CHECK(ok.events[0].kind == EventKind::ClassifierReady);
  CHECK(ok.session->status() == SessionStatus::Ready);

  Harness bad("http://unreachable.invalid/m/");
  bad.session->load();
  bad.executor->run_all();
  REQUIRE(bad.events.size() == 1);
  CHECK(bad.events[0].kind == EventKind::LoadError);
  CHECK(bad.events[0].reason.rfind("fetch failed", 0) == 0);
  CHECK(bad.session->status() == SessionStatus::Failed);
  CHECK(bad.session->failure_reason().rfind("fetch failed", 0) == 0);

  Harness none(std::nullopt);
  none.session->load();
  none.executor->run_all();
  REQUIRE(none.events.size() == 1);
  CHECK(none.events[0].kind == EventKind::LoadError);
  CHECK(none.events[0].reason == "no model url");
}

TEST_CASE("a load that fails to parse is an invalid model") {
  SessionConfig config{.model_url = kTinyUrl,
                       .loader = [](const std::string&) -> ModelBundle {
                         throw Error(ErrorCode::UnsupportedDtype, "w has dtype int32");
                       },
                       .executor = std::make_shared<ManualExecutor>()};
  auto ex = std::static_pointer_cast<ManualExecutor>(config.executor);
  auto s = new_session(config);
  s->load();
  ex->run_all();
  CHECK(s->status() == SessionStatus::Failed);
  CHECK(s->failure_reason().rfind("invalid model", 0) == 0);
}

TEST_CASE("classify: golden frame, no source, FIFO capture-at-invocation") {
  Harness h;
  h.ready();
  h.events.clear();

  const auto none = h.session->classify_frame();
  h.executor->run_all();
  REQUIRE(h.events.size() == 1);
  CHECK(h.events[0].kind == EventKind::ClassificationError);
  CHECK(h.events[0].reason == "no source");
  CHECK(h.events[0].request_id == none);

  auto source = std::make_shared<LatestFrameSource>();
  h.session->attach_source(source);
  const auto empty = h.session->classify_frame();
  h.executor->run_all();
  CHECK(h.events.back().reason == "no frame available");
  CHECK(h.events.back().request_id == empty);
  h.events.clear();

  const auto golden = testing::read_json(testing::fixtures_dir() / "tiny_dense/golden.json");
  source->push(golden_frame("tiny_dense", "random.png"));
  const auto first = h.session->classify_frame();
  source->push(golden_frame("tiny_dense", "gray.png"));
  const auto second = h.session->classify_frame();
  CHECK(second > first);
  h.executor->run_all();
  REQUIRE(h.events.size() == 2);
  CHECK(h.events[0].request_id == first);
  CHECK(h.events[0].source_id == "random.png");
  CHECK(h.events[1].request_id == second);
  CHECK(h.events[1].source_id == "gray.png");
  CHECK(h.events[0].seq < h.events[1].seq);

  for (std::size_t k = 0; k < 2; ++k) {
    const auto& ev = h.events[k];
    REQUIRE(ev.kind == EventKind::GotClassification);
    const auto& c = golden.at("cases")[k];
    REQUIRE(ev.results.size() == 2);
    CHECK(ev.results[0].label == "plastic garbage");
    CHECK(ev.results[1].label == "metal");
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(std::abs(ev.results[i].probability - c.at("probabilities")[i].get<double>()) <= 1e-4);
    }
  }
}

TEST_CASE("attach_source replaces and releases the previous source") {
  Harness h;
  h.ready();
  auto first = std::make_shared<LatestFrameSource>();
  std::weak_ptr<LatestFrameSource> weak = first;
  h.session->attach_source(first);
  first.reset();
  CHECK(!weak.expired());
  auto second = std::make_shared<LatestFrameSource>();
  second->push(golden_frame("tiny_dense", "gray.png"));
  h.session->attach_source(second);
  CHECK(weak.expired());
  h.session->classify_frame();
  h.executor->run_all();
  CHECK(h.events.back().source_id == "gray.png");
}

TEST_CASE("stop: in-flight completes, idempotent, reusable") {
  Harness h;
  h.ready();
  auto source = std::make_shared<LatestFrameSource>();
  std::weak_ptr<LatestFrameSource> weak = source;
  source->push(golden_frame("tiny_dense", "random.png"));
  h.session->attach_source(source);
  const auto id = h.session->classify_frame();
  h.session->stop();
  source.reset();
  CHECK(weak.expired());
  CHECK(h.session->status() == SessionStatus::Stopped);
  CHECK_THROWS_AS(h.session->classify_frame(), Error);
  h.session->stop();
  CHECK(h.session->status() == SessionStatus::Stopped);
  h.executor->run_all();
  CHECK(h.events.back().kind == EventKind::GotClassification);
  CHECK(h.events.back().request_id == id);

  h.session->load();
  h.executor->run_all();
  CHECK(h.session->status() == SessionStatus::Ready);
  auto again = std::make_shared<LatestFrameSource>();
  again->push(golden_frame("tiny_dense", "gray.png"));
  h.session->attach_source(again);
  h.session->classify_frame();
  h.executor->run_all();
  CHECK(h.events.back().kind == EventKind::GotClassification);
}

TEST_CASE("superseded load reports LoadError and never Ready") {
  Harness h;
  h.session->load();
  h.session->set_model_url(kConvUrl);
  h.executor->run_all();
  REQUIRE(h.events.size() == 1);
  CHECK(h.events[0].kind == EventKind::LoadError);
  CHECK(h.events[0].reason == "load superseded");
  CHECK(h.session->status() == SessionStatus::Empty);
}

TEST_CASE("poll and wait_event see the same events as subscribers") {
  Harness h;
  h.ready();
  const auto polled = h.session->poll();
  REQUIRE(polled.size() == 1);
  CHECK(polled[0].seq == h.events[0].seq);
  CHECK(h.session->poll().empty());
  CHECK(!h.session->wait_event(1ms));
}

TEST_CASE("randomized schedules satisfy the session contract") {
  const auto bundles = schedule_bundles();
  testing::ScheduleStats total;
  for (unsigned seed = 1; seed <= 300; ++seed) {
    testing::ScheduleRunner runner(bundles, seed);
    const auto error = runner.run(150);
    CAPTURE(seed);
    CHECK(error == "");
    total.ready_events += runner.stats().ready_events;
    total.classifications += runner.stats().classifications;
  }
  // The schedules must actually exercise the interesting paths.
  CHECK(total.ready_events > 50);
  CHECK(total.classifications > 200);
}

TEST_CASE("thread executor: file url end to end with wait_event") {
  const auto url = resolve_model_ref((testing::fixtures_dir() / "mini_conv_flat").string()).base;
  auto session = new_session({.model_url = url});
  session->load();
  auto ready = session->wait_event(10s);
  REQUIRE(ready);
  REQUIRE(ready->kind == EventKind::ClassifierReady);

  auto source = std::make_shared<LatestFrameSource>();
  session->attach_source(source);
  std::atomic<int> seen{0};
  session->subscribe([&](const SessionEvent&) { ++seen; });
  std::vector<std::uint64_t> ids;
  for (const char* img : {"random.png", "gray.png", "gradient.png"}) {
    source->push(golden_frame("mini_conv_flat", img));
    ids.push_back(session->classify_frame());
  }
  std::vector<std::uint64_t> got;
  while (got.size() < ids.size()) {
    auto e = session->wait_event(10s);
    REQUIRE(e);
    REQUIRE(e->kind == EventKind::GotClassification);
    CHECK(e->results[0].label == "cardboard");
    got.push_back(*e->request_id);
  }
  CHECK(got == ids);
  session->stop();
  CHECK(seen == 3);
}
