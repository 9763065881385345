#pragma once

// Tiny leveled logger writing to stderr. Level comes from DRAGLORA_LOG
// (debug|info|warn|error, default warn).

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <mutex>
#include <string>

namespace draglora::log {

enum class Level { debug = 0, info = 1, warn = 2, error = 3 };

inline Level parse_level(const char* s) {
  if (!s) return Level::warn;
  if (!std::strcmp(s, "debug")) return Level::debug;
  if (!std::strcmp(s, "info")) return Level::info;
  if (!std::strcmp(s, "error")) return Level::error;
  return Level::warn;
}

inline std::atomic<int>& threshold() {
  static std::atomic<int> t{static_cast<int>(parse_level(std::getenv("DRAGLORA_LOG")))};
  return t;
}

inline void set_level(Level l) { threshold() = static_cast<int>(l); }

inline void write(Level l, const std::string& msg) {
  if (static_cast<int>(l) < threshold()) return;
  static std::mutex mu;
  static const char* names[] = {"debug", "info", "warn", "error"};
  std::lock_guard<std::mutex> lock(mu);
  std::fprintf(stderr, "[draglora %s] %s\n", names[static_cast<int>(l)], msg.c_str());
}

inline void debug(const std::string& m) { write(Level::debug, m); }
inline void info(const std::string& m) { write(Level::info, m); }
inline void warn(const std::string& m) { write(Level::warn, m); }
inline void error(const std::string& m) { write(Level::error, m); }

}  // namespace draglora::log
