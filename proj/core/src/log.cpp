#include "flowplan/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string_view>

namespace flowplan::log {
namespace {

Level parse_level(const char* text) {
  if (text == nullptr) return Level::info;
  std::string_view v(text);
  if (v == "debug") return Level::debug;
  if (v == "warn" || v == "warning") return Level::warn;
  if (v == "error") return Level::error;
  if (v == "off" || v == "quiet") return Level::off;
  return Level::info;
}

std::atomic<int>& level_slot() {
  static std::atomic<int> slot{static_cast<int>(parse_level(std::getenv("FLOWPLAN_LOG")))};
  return slot;
}

std::atomic<std::size_t> g_warnings{0};
std::mutex g_mutex;

const char* tag(Level level) {
  switch (level) {
    case Level::debug: return "debug";
    case Level::info: return "info";
    case Level::warn: return "warn";
    case Level::error: return "error";
    default: return "";
  }
}

}  // namespace

Level threshold() { return static_cast<Level>(level_slot().load()); }

void set_threshold(Level level) { level_slot().store(static_cast<int>(level)); }

std::size_t warning_count() { return g_warnings.load(); }

void write(Level level, const std::string& message) {
  if (level == Level::warn) ++g_warnings;
  if (level < threshold()) return;
  std::lock_guard<std::mutex> lock(g_mutex);
  std::cerr << "[flowplan " << tag(level) << "] " << message << '\n';
}

}  // namespace flowplan::log
