#pragma once

#include <cstdlib>
#include <iostream>
#include <string_view>

namespace splatdyn::log {

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

// Verbosity comes from SPLATDYN_LOG (error|warn|info|debug), default warn.
inline Level threshold() {
  static const Level level = [] {
    const char* env = std::getenv("SPLATDYN_LOG");
    if (!env) return Level::warn;
    std::string_view v(env);
    if (v == "error") return Level::error;
    if (v == "info") return Level::info;
    if (v == "debug") return Level::debug;
    return Level::warn;
  }();
  return level;
}

inline bool enabled(Level level) { return level <= threshold(); }

template <typename... Args>
void write(Level level, std::string_view tag, const Args&... args) {
  if (!enabled(level)) return;
  std::clog << '[' << tag << "] ";
  (std::clog << ... << args);
  std::clog << '\n';
}

template <typename... Args>
void error(const Args&... args) { write(Level::error, "error", args...); }
template <typename... Args>
void warn(const Args&... args) { write(Level::warn, "warn", args...); }
template <typename... Args>
void info(const Args&... args) { write(Level::info, "info", args...); }
template <typename... Args>
void debug(const Args&... args) { write(Level::debug, "debug", args...); }

}  // namespace splatdyn::log
