#include "fairtrain/log.hpp"

#include <atomic>
#include <iostream>

namespace fairtrain {

namespace {
std::atomic<bool> warnings_enabled{true};
}

void log_warning(std::string_view message) {
    if (warnings_enabled.load(std::memory_order_relaxed)) std::cerr << "warning: " << message << '\n';
}

void set_warnings_enabled(bool enabled) noexcept { warnings_enabled.store(enabled, std::memory_order_relaxed); }

}  // namespace fairtrain
