#pragma once

#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string_view>

namespace phil::log {

enum class Level { error = 0, info = 1, debug = 2 };

/// Level from PHIL_LOG_LEVEL (error|info|debug), default info.
inline Level level() {
  static const Level lvl = [] {
    const char* env = std::getenv("PHIL_LOG_LEVEL");
    if (env == nullptr) return Level::info;
    std::string_view v(env);
    if (v == "error") return Level::error;
    if (v == "debug") return Level::debug;
    return Level::info;
  }();
  return lvl;
}

// Lines look like "[info] train: episode 3 ...".
template <typename... Args>
void write(Level lvl, std::string_view tag, std::string_view where, const Args&... args) {
  if (static_cast<int>(lvl) > static_cast<int>(level())) return;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  std::cerr << '[' << tag << "] " << where << ": ";
  (std::cerr << ... << args);
  std::cerr << '\n';
}

template <typename... Args>
void error(std::string_view where, const Args&... args) { write(Level::error, "error", where, args...); }
template <typename... Args>
void info(std::string_view where, const Args&... args) { write(Level::info, "info", where, args...); }
template <typename... Args>
void debug(std::string_view where, const Args&... args) { write(Level::debug, "debug", where, args...); }

}  // namespace phil::log
