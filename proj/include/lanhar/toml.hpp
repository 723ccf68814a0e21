#pragma once

#include <filesystem>
#include <string_view>

#include <json.hpp>

namespace lanhar::toml {

// Parses the TOML subset used by experiment configs into an ordered JSON tree:
// comments, [table] / [a.b] headers, [[array-of-tables]] headers, and
// key = value lines with string / integer / float / boolean / scalar-array
// values. Anything outside the subset is a parse error naming the line.
nlohmann::ordered_json parse(std::string_view text);

nlohmann::ordered_json parse_file(const std::filesystem::path& path);

}  // namespace lanhar::toml
