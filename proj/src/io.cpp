#include "ictd/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace ictd {

std::string format_double(double x) {
  if (!std::isfinite(x)) {
    if (std::isnan(x)) return "nan";
    return x > 0 ? "inf" : "-inf";
  }
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

namespace {

void emit(const Json& j, int indent, int depth, std::string& out) {
  const auto newline = [&](int d) {
    if (indent < 0) return;
    out += '\n';
    out.append(static_cast<std::size_t>(indent * d), ' ');
  };
  switch (j.type()) {
    case Json::value_t::number_float: {
      const double x = j.get<double>();
      // JSON has no literal for non-finite values.
      out += std::isfinite(x) ? format_double(x) : "null";
      break;
    }
    case Json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        break;
      }
      out += '{';
      bool first = true;
      for (const auto& [key, value] : j.items()) {
        if (!first) out += ',';
        first = false;
        newline(depth + 1);
        out += Json(key).dump();
        out += indent < 0 ? ":" : ": ";
        emit(value, indent, depth + 1, out);
      }
      newline(depth);
      out += '}';
      break;
    }
    case Json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        break;
      }
      // Arrays of scalars stay on one line so matrices read row by row.
      const bool flat = std::none_of(j.begin(), j.end(), [](const Json& e) {
        return e.is_structured();
      });
      out += '[';
      bool first = true;
      for (const auto& e : j) {
        if (!first) out += flat ? ", " : ",";
        first = false;
        if (!flat) newline(depth + 1);
        emit(e, indent, depth + 1, out);
      }
      if (!flat) newline(depth);
      out += ']';
      break;
    }
    default:
      out += j.dump();
  }
}

}  // namespace

std::string dump_json(const Json& value, int indent) {
  std::string out;
  emit(value, indent, 0, out);
  return out;
}

Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const Json& j) {
  require(j.is_array(), "matrix_from_json: expected nested arrays");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(j.at(0).size());
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const Json& row = j.at(static_cast<std::size_t>(i));
    require(row.is_array() && static_cast<Eigen::Index>(row.size()) == cols,
            "matrix_from_json: ragged rows");
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = row.at(static_cast<std::size_t>(c)).get<double>();
  }
  return m;
}

Json vector_to_json(const Vector& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

Vector vector_from_json(const Json& j) {
  require(j.is_array(), "vector_from_json: expected an array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

}  // namespace ictd
