#include "timepd/log.hpp"

#include <spdlog/sinks/stdout_sinks.h>

namespace timepd {

std::shared_ptr<spdlog::logger> logger() {
    static std::shared_ptr<spdlog::logger> instance = [] {
        auto existing = spdlog::get("timepd");
        if (existing) return existing;
        auto log = spdlog::stderr_logger_mt("timepd");
        log->set_pattern("[%l] %v");
        return log;
    }();
    return instance;
}

} // namespace timepd
