#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

namespace spherereg {

enum class LogLevel { Silent = 0, Warn = 1, Info = 2, Debug = 3 };

/// Verbosity is controlled by the SPHEREREG_LOG environment variable
/// (silent|warn|info|debug). Default is warn.
inline LogLevel log_level() {
    static LogLevel level = [] {
        const char* env = std::getenv("SPHEREREG_LOG");
        if (!env) return LogLevel::Warn;
        if (std::strcmp(env, "silent") == 0) return LogLevel::Silent;
        if (std::strcmp(env, "info") == 0) return LogLevel::Info;
        if (std::strcmp(env, "debug") == 0) return LogLevel::Debug;
        return LogLevel::Warn;
    }();
    return level;
}

inline void log_message(LogLevel level, const std::string& msg) {
    if (static_cast<int>(level) > static_cast<int>(log_level())) return;
    const char* tag = level == LogLevel::Warn   ? "warn"
                      : level == LogLevel::Info ? "info"
                                                : "debug";
    std::fprintf(stderr, "[spherereg:%s] %s\n", tag, msg.c_str());
}

inline void log_warn(const std::string& msg) { log_message(LogLevel::Warn, msg); }
inline void log_info(const std::string& msg) { log_message(LogLevel::Info, msg); }
inline void log_debug(const std::string& msg) { log_message(LogLevel::Debug, msg); }

}  // namespace spherereg
