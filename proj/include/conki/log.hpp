#pragma once

#include <string_view>

namespace conki {

enum class LogLevel { Error = 0, Warn = 1, Info = 2, Debug = 3 };

/// Reads CONKI_LOG_LEVEL (error, warn, info, debug) once; defaults to warn.
LogLevel log_level();
void set_log_level(LogLevel level);

void log_message(LogLevel level, std::string_view msg);
inline void log_warn(std::string_view msg) { log_message(LogLevel::Warn, msg); }
inline void log_info(std::string_view msg) { log_message(LogLevel::Info, msg); }
inline void log_debug(std::string_view msg) { log_message(LogLevel::Debug, msg); }

}  // namespace conki
