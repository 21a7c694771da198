#pragma once

#include <json.hpp>

#include <string_view>

namespace phaserec::log {

enum class Level { debug, info, warn, error };

/// Switches all subsequent log lines to line-delimited JSON on stderr.
void set_json(bool enabled);
void set_level(Level level);

void write(Level level, std::string_view message, const nlohmann::json& fields = {});

inline void debug(std::string_view m, const nlohmann::json& f = {}) { write(Level::debug, m, f); }
inline void info(std::string_view m, const nlohmann::json& f = {}) { write(Level::info, m, f); }
inline void warn(std::string_view m, const nlohmann::json& f = {}) { write(Level::warn, m, f); }
inline void error(std::string_view m, const nlohmann::json& f = {}) { write(Level::error, m, f); }

}  // namespace phaserec::log
