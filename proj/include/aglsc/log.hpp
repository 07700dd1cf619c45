#pragma once

#include <functional>
#include <iostream>
#include <string>

namespace aglsc {

enum class LogLevel { Debug, Info, Warn };

// Process-wide sink. Tests and the CLI swap it to capture or silence output.
inline std::function<void(LogLevel, const std::string&)>& log_sink() {
    static std::function<void(LogLevel, const std::string&)> sink = [](LogLevel level, const std::string& msg) {
        if (level == LogLevel::Debug) return;
        std::cerr << (level == LogLevel::Warn ? "warning: " : "") << msg << '\n';
    };
    return sink;
}

inline void log_info(const std::string& msg) { log_sink()(LogLevel::Info, msg); }
inline void log_warn(const std::string& msg) { log_sink()(LogLevel::Warn, msg); }
inline void log_debug(const std::string& msg) { log_sink()(LogLevel::Debug, msg); }

}  // namespace aglsc
