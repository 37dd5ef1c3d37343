// Minimal leveled logging to stderr. Level comes from FEDSIM_LOG
// (error | warn | info), default warn.
#ifndef FEDSIM_LOG_HPP
#define FEDSIM_LOG_HPP

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>
#include <string_view>

namespace fedsim::log {

enum class Level { kError = 0, kWarn = 1, kInfo = 2 };

inline std::atomic<int>& level_storage() {
  static std::atomic<int> level = [] {
    const char* env = std::getenv("FEDSIM_LOG");
    if (!env) return static_cast<int>(Level::kWarn);
    const std::string_view v(env);
    if (v == "error") return static_cast<int>(Level::kError);
    if (v == "info") return static_cast<int>(Level::kInfo);
    return static_cast<int>(Level::kWarn);
  }();
  return level;
}

inline void set_level(Level l) { level_storage().store(static_cast<int>(l)); }

inline bool enabled(Level l) { return static_cast<int>(l) <= level_storage().load(); }

inline void write(Level l, std::string_view msg) {
  if (!enabled(l)) return;
  static std::mutex mu;
  std::lock_guard lock(mu);
  const char* tag = l == Level::kError ? "error" : l == Level::kWarn ? "warn" : "info";
  std::cerr << "[fedsim " << tag << "] " << msg << '\n';
}

inline void warn(std::string_view msg) { write(Level::kWarn, msg); }
inline void info(std::string_view msg) { write(Level::kInfo, msg); }

}  // namespace fedsim::log

#endif  // FEDSIM_LOG_HPP
