#pragma once

#include <cstdio>
#include <cstdlib>
#include <string>

namespace tsguard {

enum class LogLevel { error = 0, info = 1, debug = 2 };

inline LogLevel& log_level() {
    static LogLevel level = LogLevel::info;
    return level;
}

/// Reads TSGUARD_LOG (error, info, debug); unknown or unset keeps info.
inline void init_log_level_from_env() {
    const char* env = std::getenv("TSGUARD_LOG");
    if (env == nullptr) return;
    const std::string v = env;
    if (v == "error") log_level() = LogLevel::error;
    else if (v == "info") log_level() = LogLevel::info;
    else if (v == "debug") log_level() = LogLevel::debug;
}

inline void log_error(const std::string& msg) {
    std::fprintf(stderr, "[tsguard] error: %s\n", msg.c_str());
}

inline void log_info(const std::string& msg) {
    if (log_level() >= LogLevel::info) std::fprintf(stderr, "[tsguard] %s\n", msg.c_str());
}

inline void log_debug(const std::string& msg) {
    if (log_level() >= LogLevel::debug) std::fprintf(stderr, "[tsguard] debug: %s\n", msg.c_str());
}

} // namespace tsguard
