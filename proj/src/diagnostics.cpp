#include "facade_gp/diagnostics.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace facade_gp::log {
namespace {

std::atomic<int> g_level{1};
std::mutex g_mutex;

void emit(std::string_view tag, std::string_view message) {
  std::lock_guard lock(g_mutex);
  std::cerr << "[" << tag << "] " << message << '\n';
}

}  // namespace

void set_verbosity(int level) { g_level = level; }
int verbosity() { return g_level; }

void warn(std::string_view message) {
  if (g_level >= 1) emit("warn", message);
}
void info(std::string_view message) {
  if (g_level >= 2) emit("info", message);
}
void debug(std::string_view message) {
  if (g_level >= 3) emit("debug", message);
}

}  // namespace facade_gp::log
