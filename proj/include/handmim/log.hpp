#pragma once

#include <iostream>
#include <mutex>
#include <sstream>
#include <string>

namespace handmim {

enum class LogLevel { debug = 0, info = 1, warn = 2, silent = 3 };

inline LogLevel& log_level() {
  static LogLevel level = LogLevel::info;
  return level;
}

namespace detail {
inline std::mutex& log_mutex() {
  static std::mutex m;
  return m;
}
inline void emit(LogLevel lvl, const std::string& msg) {
  if (lvl < log_level()) return;
  const char* tag = lvl == LogLevel::debug ? "debug" : lvl == LogLevel::info ? "info" : "warn";
  std::lock_guard<std::mutex> lock(log_mutex());
  std::cerr << "[" << tag << "] " << msg << "\n";
}
}  // namespace detail

inline void log_debug(const std::string& msg) { detail::emit(LogLevel::debug, msg); }
inline void log_info(const std::string& msg) { detail::emit(LogLevel::info, msg); }
inline void log_warn(const std::string& msg) { detail::emit(LogLevel::warn, msg); }

// Small ostream-style helper: hm_log(LogLevel::info) << "epoch " << e;
class LogLine {
 public:
  explicit LogLine(LogLevel lvl) : lvl_(lvl) {}
  ~LogLine() { detail::emit(lvl_, ss_.str()); }
  template <typename T>
  LogLine& operator<<(const T& v) {
    ss_ << v;
    return *this;
  }

 private:
  LogLevel lvl_;
  std::ostringstream ss_;
};

inline LogLine hm_log(LogLevel lvl) { return LogLine(lvl); }

}  // namespace handmim
