#pragma once

#include "ictd/common.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace ictd {

using Json = nlohmann::json;

/// Serializes `value` like Json::dump(indent) but prints every floating-point
/// number with 17 significant digits.
std::string dump_json(const Json& value, int indent = 2);

/// Formats a double with 17 significant digits ("%.17g").
std::string format_double(double x);

Json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const Json& j);
Json vector_to_json(const Vector& v);
Vector vector_from_json(const Json& j);

Json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace ictd
