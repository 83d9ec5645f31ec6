#pragma once

#include <spdlog/spdlog.h>

#include <memory>

namespace timepd {

/// Library logger; writes to stderr so command output on stdout stays clean.
std::shared_ptr<spdlog::logger> logger();

} // namespace timepd
