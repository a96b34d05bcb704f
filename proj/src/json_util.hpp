#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include <json.hpp>

#include "causalmm/error.hpp"

namespace causalmm::detail {

inline std::string join_path(const std::string& base, const std::string& key) {
  return base.empty() ? key : base + "." + key;
}

inline const nlohmann::json& require(const nlohmann::json& j, const std::string& key, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  if (!j.contains(key)) throw ConfigError(join_path(path, key), "missing required field");
  return j.at(key);
}

inline double as_number(const nlohmann::json& v, const std::string& path) {
  if (!v.is_number()) throw ConfigError(path, "expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw ConfigError(path, "must be finite");
  return d;
}

inline std::uint64_t as_u64(const nlohmann::json& v, const std::string& path) {
  if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
    throw ConfigError(path, "expected a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

inline std::string as_string(const nlohmann::json& v, const std::string& path) {
  if (!v.is_string()) throw ConfigError(path, "expected a string");
  return v.get<std::string>();
}

inline bool as_bool(const nlohmann::json& v, const std::string& path) {
  if (!v.is_boolean()) throw ConfigError(path, "expected a boolean");
  return v.get<bool>();
}

template <typename T, typename Fn>
void read_optional(const nlohmann::json& j, const std::string& key, const std::string& path, T& out, Fn&& convert) {
  if (j.is_object() && j.contains(key)) out = convert(j.at(key), join_path(path, key));
}

}  // namespace causalmm::detail
