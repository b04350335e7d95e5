#include "sddpc/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "sddpc/errors.hpp"

namespace sddpc {

Json matrix_to_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const Json& j, const std::string& what) {
  if (!j.is_array()) throw ParameterError(what + ": expected array of rows");
  if (j.empty()) return Eigen::MatrixXd(0, 0);
  const auto cols = j.front().is_array() ? j.front().size() : 0;
  Eigen::MatrixXd m(j.size(), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols)
      throw ParameterError(what + ": ragged or non-array row " +
                           std::to_string(r));
    for (std::size_t c = 0; c < cols; ++c) {
      if (!j[r][c].is_number())
        throw ParameterError(what + ": non-numeric entry");
      m(r, c) = j[r][c].get<double>();
    }
  }
  return m;
}

Json vector_to_json(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Eigen::VectorXd vector_from_json(const Json& j, const std::string& what) {
  if (!j.is_array()) throw ParameterError(what + ": expected array");
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ParameterError(what + ": non-numeric entry");
    v(i) = j[i].get<double>();
  }
  return v;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParameterError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParameterError("cannot write " + path);
  out << text;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace sddpc
