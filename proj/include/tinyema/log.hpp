#pragma once

#include <string_view>

namespace tinyema::log {

enum class Level { quiet = 0, warn = 1, info = 2, debug = 3 };

void set_level(Level level) noexcept;
Level level() noexcept;

void warn(std::string_view message);
void info(std::string_view message);
void debug(std::string_view message);

}  // namespace tinyema::log
