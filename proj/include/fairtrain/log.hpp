#pragma once

#include <string_view>

namespace fairtrain {

// Warnings go to stderr unless silenced (tests silence expected ones).
void log_warning(std::string_view message);
void set_warnings_enabled(bool enabled) noexcept;

}  // namespace fairtrain
