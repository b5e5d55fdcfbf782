#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cctype>
#include <csignal>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <thread>

#include <nlohmann/json.hpp>

#include "report.hpp"
#include "server.hpp"
#include "tminfer/error.hpp"
#include "tminfer/fetch.hpp"
#include "tminfer/graph.hpp"
#include "tminfer/vision.hpp"

namespace tminfer::app {

namespace fs = std::filesystem;
using namespace std::chrono_literals;

namespace {

struct Options {
  std::string cache_dir;
  std::string format = "table";
  std::optional<std::size_t> top_k;
  int port = 8080;
  std::string host = "127.0.0.1";
  bool refresh = false;
  bool follow = false;
  bool from_stdin = false;
  std::string model_ref;
  std::vector<std::string> paths;
};

fs::path cache_dir_of(const Options& o) { return o.cache_dir.empty() ? default_cache_dir() : fs::path(o.cache_dir); }

bool interrupted(const CliContext& ctx) { return ctx.interrupted && ctx.interrupted->load(); }

ModelBundle load_bundle(const Options& o, FetchPolicy policy = FetchPolicy::PreferCache,
                        FetchReport* report = nullptr) {
  return fetch_bundle(resolve_model_ref(o.model_ref), cache_dir_of(o), policy, {}, report);
}

int cmd_fetch(const Options& o, CliContext& ctx) {
  FetchReport report;
  load_bundle(o, o.refresh ? FetchPolicy::Refresh : FetchPolicy::PreferCache, &report);
  for (const auto& [url, bytes] : report.files) ctx.out << url << "  " << bytes << " bytes\n";
  if (report.entry_dir.empty()) {
    ctx.out << "local bundle, cache bypassed\n";
  } else if (report.cache_hit) {
    ctx.out << "cache hit: " << report.entry_dir.string() << '\n';
  } else {
    if (report.refetched_after_corruption) ctx.out << "cache entry was corrupt, refetched\n";
    ctx.out << "cached: " << report.entry_dir.string() << '\n';
  }
  return kExitOk;
}

nlohmann::json inspect_json(const ModelBundle& bundle, const ExecutionPlan& plan) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : plan.nodes()) {
    nodes.push_back({{"name", n.name},
                     {"class_name", n.class_name},
                     {"op", n.describe()},
                     {"output_shape", n.output_shape},
                     {"parameters", n.parameter_count}});
  }
  return {{"model_name", bundle.metadata.model_name},
          {"labels", bundle.metadata.labels},
          {"image_size", bundle.metadata.image_size},
          {"library_versions", bundle.metadata.library_versions},
          {"timestamp", bundle.metadata.timestamp},
          {"input_shape", plan.input_shape()},
          {"nodes", nodes},
          {"parameters", plan.parameter_count()},
          {"warnings", plan.warnings()}};
}

int cmd_inspect(const Options& o, OutputFormat format, CliContext& ctx) {
  const ModelBundle bundle = load_bundle(o);
  const ExecutionPlan plan = build_plan(bundle);
  if (format == OutputFormat::Json) {
    ctx.out << inspect_json(bundle, plan).dump() << '\n';
    return kExitOk;
  }
  if (format == OutputFormat::Csv) {
    ctx.out << "index,name,op,output_shape,parameters\n";
    for (std::size_t i = 0; i < plan.nodes().size(); ++i) {
      const auto& n = plan.nodes()[i];
      ctx.out << i << ',' << csv_field(n.name) << ',' << csv_field(n.describe()) << ','
              << csv_field(shape_to_string(n.output_shape)) << ',' << n.parameter_count << '\n';
    }
    return kExitOk;
  }
  const auto& m = bundle.metadata;
  ctx.out << "model:      " << (m.model_name.empty() ? "(unnamed)" : m.model_name) << '\n';
  ctx.out << "labels:     ";
  for (std::size_t i = 0; i < m.labels.size(); ++i) ctx.out << (i ? ", " : "") << m.labels[i];
  ctx.out << "\nimage size: " << m.image_size << '\n';
  if (!m.library_versions.empty()) {
    ctx.out << "versions:  ";
    for (const auto& [k, v] : m.library_versions) ctx.out << ' ' << k << '=' << v;
    ctx.out << '\n';
  }
  if (!m.timestamp.empty()) ctx.out << "timestamp:  " << m.timestamp << '\n';
  ctx.out << '\n' << summarize(plan);
  return kExitOk;
}

int cmd_classify(const Options& o, OutputFormat format, CliContext& ctx) {
  const ExecutionPlan plan = build_plan(load_bundle(o));
  ResultWriter writer(ctx.out, format);
  bool skipped = false;
  for (const auto& path : o.paths) {
    try {
      const Frame frame = decode_image_file(path);
      const auto probs = plan.run(preprocess(frame, plan.image_size()));
      writer.write(path, rank(make_results(plan, probs), o.top_k));
    } catch (const Error& e) {
      ctx.err << "skipped " << path << ": " << e.what() << '\n';
      skipped = true;
    }
  }
  return skipped ? kExitPartial : kExitOk;
}

bool is_image_name(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

// Drives a session over a frame sequence, printing one row per classification.
class StreamRunner {
 public:
  StreamRunner(const Options& o, OutputFormat format, CliContext& ctx) : o_(o), ctx_(ctx), writer_(ctx.out, format) {}

  int run() {
    const auto locator = resolve_model_ref(o_.model_ref);
    const auto cache = cache_dir_of(o_);
    session_ = new_session({.model_url = locator.base, .loader = [cache](const std::string& url) {
                              return fetch_bundle(resolve(url), cache, FetchPolicy::PreferCache);
                            }});
    session_->load();
    const auto loaded = session_->wait_event(120s);
    if (!loaded || loaded->kind != EventKind::ClassifierReady) {
      ctx_.err << "load failed: " << (loaded ? loaded->reason : "timed out") << '\n';
      return kExitFatal;
    }
    session_->attach_source(source_);

    if (o_.from_stdin) {
      std::string line;
      while (!interrupted(ctx_) && std::getline(ctx_.in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) submit(line);
      }
    } else {
      scan_directory();
    }
    drain(true);
    session_->stop();
    return partial_ ? kExitPartial : kExitOk;
  }

 private:
  void scan_directory() {
    const fs::path dir = o_.paths.front();
    std::set<fs::path> done;
    std::map<fs::path, std::uintmax_t> last_size;
    while (!interrupted(ctx_)) {
      std::vector<fs::path> ready;
      std::error_code ec;
      for (const auto& item : fs::directory_iterator(dir, ec)) {
        const auto& p = item.path();
        if (!item.is_regular_file() || !is_image_name(p) || done.contains(p)) continue;
        const auto size = item.file_size(ec);
        // While following, wait until a file stops growing.
        if (o_.follow && (!last_size.contains(p) || last_size[p] != size)) {
          last_size[p] = size;
          continue;
        }
        ready.push_back(p);
      }
      std::sort(ready.begin(), ready.end());
      for (const auto& p : ready) {
        if (interrupted(ctx_)) break;
        done.insert(p);
        submit(p.string());
      }
      if (!o_.follow) break;
      drain(false);
      std::this_thread::sleep_for(100ms);
    }
  }

  void submit(const std::string& path) {
    Frame frame;
    try {
      frame = decode_image_file(path);
    } catch (const Error& e) {
      ctx_.err << "skipped " << path << ": " << e.what() << '\n';
      partial_ = true;
      return;
    }
    frame.source_id = path;
    source_->push(std::move(frame));
    session_->classify_frame();
    ++outstanding_;
    drain(false);
  }

  void drain(bool wait) {
    while (outstanding_ > 0) {
      auto e = session_->wait_event(wait ? 30s : 0ms);
      if (!e) {
        if (wait) {
          ctx_.err << "timed out waiting for classifications\n";
          partial_ = true;
        }
        return;
      }
      if (e->kind == EventKind::GotClassification) {
        writer_.write(e->source_id, rank(e->results, o_.top_k));
      } else {
        ctx_.err << "classification failed for " << e->source_id << ": " << e->reason << '\n';
        partial_ = true;
      }
      --outstanding_;
    }
  }

  const Options& o_;
  CliContext& ctx_;
  ResultWriter writer_;
  std::shared_ptr<ClassifierSession> session_;
  std::shared_ptr<LatestFrameSource> source_ = std::make_shared<LatestFrameSource>();
  std::size_t outstanding_ = 0;
  bool partial_ = false;
};

int cmd_serve(const Options& o, CliContext& ctx) {
  ClassificationServer server({.model_ref = o.model_ref, .cache_dir = cache_dir_of(o)}, ctx.err);
  const auto port = server.bind(o.host, o.port);
  if (!port) {
    ctx.err << "cannot bind " << o.host << ':' << o.port << '\n';
    return kExitFatal;
  }
  server.start_loading();
  std::thread worker([&] { server.listen(); });
  ctx.err << "listening on " << o.host << ':' << *port << '\n';
  if (ctx.on_listening) ctx.on_listening(*port);
  int code = kExitOk;
  while (!interrupted(ctx)) {
    if (server.load_failure()) {
      code = kExitFatal;
      break;
    }
    std::this_thread::sleep_for(50ms);
  }
  server.stop();
  worker.join();
  return code;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, CliContext& ctx) {
  CLI::App app{"Teachable Machine image model runtime", "tminfer"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--cache-dir", o.cache_dir, "Bundle cache directory (default: $TMINFER_CACHE_DIR)");
  app.add_option("--format", o.format, "Output format")->check(CLI::IsMember({"json", "csv", "table"}));

  auto model_arg = [&](CLI::App* sub) {
    sub->fallthrough();
    sub->add_option("MODEL_REF", o.model_ref, "Model URL or local bundle directory")->required();
  };

  auto* fetch = app.add_subcommand("fetch", "Download a bundle into the cache");
  model_arg(fetch);
  fetch->add_flag("--refresh", o.refresh, "Ignore any cached copy");

  auto* inspect = app.add_subcommand("inspect", "Print metadata and the layer graph");
  model_arg(inspect);

  auto* classify = app.add_subcommand("classify", "Classify image files");
  model_arg(classify);
  classify->add_option("--top-k", o.top_k, "Only the k most likely classes")->check(CLI::PositiveNumber);
  classify->add_option("PATHS", o.paths, "PNG or JPEG files")->required();

  auto* stream = app.add_subcommand("stream", "Classify a frame sequence through a session");
  model_arg(stream);
  stream->add_option("--top-k", o.top_k, "Only the k most likely classes")->check(CLI::PositiveNumber);
  stream->add_flag("--stdin", o.from_stdin, "Read image paths from stdin, one per line");
  stream->add_flag("--follow", o.follow, "Keep watching the directory until interrupted");
  stream->add_option("DIR", o.paths, "Directory of frames, processed in name order")->expected(0, 1);

  auto* serve = app.add_subcommand("serve", "Serve classification over HTTP");
  model_arg(serve);
  serve->add_option("--port", o.port, "Listen port")->check(CLI::Range(1, 65535));
  serve->add_option("--host", o.host, "Listen address");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
    if (stream->parsed() && o.from_stdin == !o.paths.empty()) {
      throw CLI::ValidationError("stream", "give either a directory or --stdin");
    }
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, ctx.out, ctx.err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  const OutputFormat format = *parse_format(o.format);
  try {
    if (fetch->parsed()) return cmd_fetch(o, ctx);
    if (inspect->parsed()) return cmd_inspect(o, format, ctx);
    if (classify->parsed()) return cmd_classify(o, format, ctx);
    if (stream->parsed()) return StreamRunner(o, format, ctx).run();
    return cmd_serve(o, ctx);
  } catch (const Error& e) {
    ctx.err << "error: " << e.what() << '\n';
    return kExitFatal;
  } catch (const std::exception& e) {
    ctx.err << "error: " << e.what() << '\n';
    return kExitFatal;
  }
}

namespace {

std::atomic<bool> g_interrupted{false};

extern "C" void on_signal(int) { g_interrupted = true; }

}  // namespace

int main_entry(int argc, char** argv) {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::vector<std::string> args(argv + 1, argv + argc);
  CliContext ctx{std::cout, std::cerr, std::cin, &g_interrupted, {}};
  return run_cli(args, ctx);
}

}  // namespace tminfer::app
