#include "phaserec/log.hpp"

#include <atomic>
#include <chrono>
#include <iostream>
#include <mutex>

namespace phaserec::log {

namespace {

std::atomic<bool> g_json{false};
std::atomic<Level> g_level{Level::info};
std::mutex g_mutex;

const char* name(Level l) {
  switch (l) {
    case Level::debug: return "debug";
    case Level::info: return "info";
    case Level::warn: return "warn";
    case Level::error: return "error";
  }
  return "info";
}

}  // namespace

void set_json(bool enabled) { g_json = enabled; }
void set_level(Level level) { g_level = level; }

void write(Level level, std::string_view message, const nlohmann::json& fields) {
  if (level < g_level.load()) return;
  std::string line;
  if (g_json) {
    nlohmann::json j = fields.is_object() ? fields : nlohmann::json::object();
    j["level"] = name(level);
    j["msg"] = message;
    j["ts"] = std::chrono::duration<double>(
                  std::chrono::system_clock::now().time_since_epoch())
                  .count();
    line = j.dump();
  } else {
    line = std::string("[") + name(level) + "] " + std::string(message);
    if (fields.is_object() && !fields.empty()) line += " " + fields.dump();
  }
  std::lock_guard lock(g_mutex);
  std::cerr << line << '\n';
}

}  // namespace phaserec::log
