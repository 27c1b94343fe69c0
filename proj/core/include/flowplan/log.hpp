#pragma once

#include <sstream>
#include <string>

namespace flowplan::log {

enum class Level { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

// Reads FLOWPLAN_LOG (debug|info|warn|error|off) once; defaults to info.
Level threshold();
void set_threshold(Level level);

void write(Level level, const std::string& message);

// Counts warnings emitted since start; tests use this to assert a warning fired.
std::size_t warning_count();

template <typename... Args>
std::string concat(const Args&... args) {
  std::ostringstream out;
  (out << ... << args);
  return out.str();
}

template <typename... Args>
void debug(const Args&... args) {
  if (threshold() <= Level::debug) write(Level::debug, concat(args...));
}
template <typename... Args>
void info(const Args&... args) {
  if (threshold() <= Level::info) write(Level::info, concat(args...));
}
template <typename... Args>
void warn(const Args&... args) {
  write(Level::warn, concat(args...));
}
template <typename... Args>
void error(const Args&... args) {
  write(Level::error, concat(args...));
}

}  // namespace flowplan::log
