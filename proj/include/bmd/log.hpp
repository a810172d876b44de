#pragma once

#include <cstdlib>
#include <iostream>
#include <string>
#include <string_view>

namespace bmd {

enum class LogLevel { quiet = 0, info = 1, debug = 2 };

/// From BMD_LOG (quiet, info, debug); unset or unknown means info.
inline LogLevel log_level() {
    const char* env = std::getenv("BMD_LOG");
    const std::string_view v = env ? env : "";
    if (v == "quiet") {
        return LogLevel::quiet;
    }
    if (v == "debug") {
        return LogLevel::debug;
    }
    return LogLevel::info;
}

inline void log(LogLevel level, const std::string& msg) {
    if (static_cast<int>(level) <= static_cast<int>(log_level())) {
        std::cerr << "[bmd] " << msg << '\n';
    }
}

} // namespace bmd
