#pragma once

// JSON and file helpers shared by the serializable types.

#include <string>

#include <Eigen/Dense>
#include <json.hpp>

namespace sddpc {

using Json = nlohmann::json;

/// Row-major nested arrays; an empty matrix becomes [].
Json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const Json& j, const std::string& what);

Json vector_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const Json& j, const std::string& what);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

/// Full-precision decimal formatting for CSV output.
std::string format_double(double v);

}  // namespace sddpc
