#include "llmfs/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace llmfs {
namespace {

std::mutex g_mutex;
WarningSink g_sink;
std::atomic<bool> g_quiet{false};

}  // namespace

void warn(std::string_view message) {
  std::lock_guard lock(g_mutex);
  if (g_sink) {
    g_sink(message);
    return;
  }
  if (!g_quiet.load()) std::cerr << "warning: " << message << '\n';
}

WarningSink set_warning_sink(WarningSink sink) {
  std::lock_guard lock(g_mutex);
  auto previous = std::move(g_sink);
  g_sink = std::move(sink);
  return previous;
}

void set_quiet(bool quiet) { g_quiet.store(quiet); }

}  // namespace llmfs
