#include "tinyema/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace tinyema::log {
namespace {

std::atomic<Level> g_level{Level::warn};
std::mutex g_mutex;

void emit(Level at, std::string_view tag, std::string_view message) {
    if (static_cast<int>(g_level.load()) < static_cast<int>(at)) {
        return;
    }
    std::lock_guard lock(g_mutex);
    std::cerr << '[' << tag << "] " << message << '\n';
}

}  // namespace

void set_level(Level level) noexcept { g_level.store(level); }
Level level() noexcept { return g_level.load(); }

void warn(std::string_view message) { emit(Level::warn, "warn", message); }
void info(std::string_view message) { emit(Level::info, "info", message); }
void debug(std::string_view message) { emit(Level::debug, "debug", message); }

}  // namespace tinyema::log
