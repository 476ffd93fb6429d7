#include "acr/log.hpp"

#include <atomic>
#include <cctype>
#include <cstdlib>
#include <iostream>
#include <mutex>

#include "acr/error.hpp"

namespace acr::log {

namespace {

std::atomic<int>& level_slot() {
  static std::atomic<int> slot = [] {
    const char* env = std::getenv("ACR_LOG");
    if (env == nullptr || *env == '\0') return static_cast<int>(Level::Warn);
    try {
      return static_cast<int>(parse_level(env));
    } catch (const Error&) {
      return static_cast<int>(Level::Warn);
    }
  }();
  return slot;
}

const char* tag(Level level) {
  switch (level) {
    case Level::Error: return "error";
    case Level::Warn: return "warn";
    case Level::Info: return "info";
    case Level::Debug: return "debug";
  }
  return "?";
}

}  // namespace

Level parse_level(std::string_view text) {
  std::string s;
  for (char c : text) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (s == "error") return Level::Error;
  if (s == "warn" || s == "warning") return Level::Warn;
  if (s == "info") return Level::Info;
  if (s == "debug" || s == "trace") return Level::Debug;
  throw ContractError("unknown log level '" + std::string(text) + "'");
}

Level threshold() { return static_cast<Level>(level_slot().load()); }

void set_threshold(Level level) { level_slot().store(static_cast<int>(level)); }

void write(Level level, std::string_view message) {
  static std::mutex mu;
  std::lock_guard lock(mu);
  std::cerr << "[acr " << tag(level) << "] " << message << '\n';
}

}  // namespace acr::log
