#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "mmv/cone_geometry.hpp"
#include "mmv/market_model.hpp"

namespace mmv {

/// Parsed model section: the market spec plus its constraint cone.
struct ModelConfig {
    ModelSpec spec;
    Cone cone;
};

/// Parses the model JSON document. Errors are ConfigInvalid and name the
/// offending field as a dotted path rooted at `where`.
ModelConfig parse_model(const nlohmann::json& doc, const std::string& where = "model");

Cone parse_cone(const nlohmann::json& doc, std::size_t m, const std::string& where = "model.cone");

/// Reads and parses a JSON file; syntax errors become ConfigInvalid.
nlohmann::json read_json_file(const std::string& path);

namespace json_field {

const nlohmann::json& member(const nlohmann::json& obj, const std::string& key, const std::string& where);
double number(const nlohmann::json& obj, const std::string& key, const std::string& where);
double number_or(const nlohmann::json& obj, const std::string& key, double fallback, const std::string& where);
std::size_t count(const nlohmann::json& obj, const std::string& key, const std::string& where);
std::size_t count_or(const nlohmann::json& obj, const std::string& key, std::size_t fallback, const std::string& where);
std::string text(const nlohmann::json& obj, const std::string& key, const std::string& where);
Vector vector(const nlohmann::json& v, std::size_t len, const std::string& where);
Matrix matrix(const nlohmann::json& v, std::size_t rows, std::size_t cols, const std::string& where);
/// Rejects keys outside `allowed`.
void only_keys(const nlohmann::json& obj, std::initializer_list<const char*> allowed, const std::string& where);

}  // namespace json_field

}  // namespace mmv
