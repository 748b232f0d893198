#include "conki/log.hpp"

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

namespace conki {

namespace {

std::optional<LogLevel>& level_slot() {
  static std::optional<LogLevel> level;
  return level;
}

LogLevel level_from_env() {
  const char* env = std::getenv("CONKI_LOG_LEVEL");
  if (env == nullptr) return LogLevel::Warn;
  const std::string v(env);
  if (v == "error") return LogLevel::Error;
  if (v == "info") return LogLevel::Info;
  if (v == "debug") return LogLevel::Debug;
  return LogLevel::Warn;
}

}  // namespace

LogLevel log_level() {
  auto& slot = level_slot();
  if (!slot) slot = level_from_env();
  return *slot;
}

void set_log_level(LogLevel level) { level_slot() = level; }

void log_message(LogLevel level, std::string_view msg) {
  if (static_cast<int>(level) > static_cast<int>(log_level())) return;
  static constexpr const char* kTag[] = {"error", "warn", "info", "debug"};
  std::cerr << "[conki " << kTag[static_cast<int>(level)] << "] " << msg << '\n';
}

}  // namespace conki
