#include "latta/log.hpp"

#include <atomic>
#include <iostream>

namespace latta {
namespace {

std::atomic<LogLevel> g_level{LogLevel::Info};

std::string_view tag(LogLevel level) {
    switch (level) {
        case LogLevel::Debug:
            return "debug";
        case LogLevel::Info:
            return "info";
        case LogLevel::Warn:
            return "warn";
        case LogLevel::Error:
            return "error";
        case LogLevel::Off:
            break;
    }
    return "";
}

}  // namespace

void set_log_level(LogLevel level) noexcept { g_level = level; }

LogLevel log_level() noexcept { return g_level; }

void log(LogLevel level, std::string_view message) {
    if (level < g_level.load() || level == LogLevel::Off) {
        return;
    }
    std::cerr << "[" << tag(level) << "] " << message << '\n';
}

}  // namespace latta
