#pragma once

#include <sstream>
#include <string>
#include <string_view>

namespace acr::log {

enum class Level { Error = 0, Warn = 1, Info = 2, Debug = 3 };

/// Reads ACR_LOG (error|warn|info|debug) once; default warn.
Level threshold();
void set_threshold(Level level);
Level parse_level(std::string_view text);

void write(Level level, std::string_view message);  // stderr, one line

template <typename... Args>
void emit(Level level, const Args&... args) {
  if (level > threshold()) return;
  std::ostringstream os;
  (os << ... << args);
  write(level, os.str());
}

template <typename... Args>
void error(const Args&... args) { emit(Level::Error, args...); }
template <typename... Args>
void warn(const Args&... args) { emit(Level::Warn, args...); }
template <typename... Args>
void info(const Args&... args) { emit(Level::Info, args...); }
template <typename... Args>
void debug(const Args&... args) { emit(Level::Debug, args...); }

}  // namespace acr::log
