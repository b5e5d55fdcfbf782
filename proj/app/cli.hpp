#pragma once

#include <atomic>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace tminfer::app {

inline constexpr int kExitOk = 0;
inline constexpr int kExitPartial = 1;
inline constexpr int kExitFatal = 2;
inline constexpr int kExitUsage = 64;

struct CliContext {
  std::ostream& out;
  std::ostream& err;
  std::istream& in;
  // stream and serve return once this becomes true.
  const std::atomic<bool>* interrupted = nullptr;
  // Called by serve once the port is bound.
  std::function<void(int port)> on_listening;
};

// args excludes the program name.
int run_cli(const std::vector<std::string>& args, CliContext& ctx);

// Process entry point: wires stdio and SIGINT/SIGTERM.
int main_entry(int argc, char** argv);

}  // namespace tminfer::app
