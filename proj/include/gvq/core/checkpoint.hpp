#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "gvq/core/adam.hpp"
#include "gvq/core/error.hpp"
#include "gvq/core/tensor.hpp"

namespace gvq {

// Parameters, optimizer moments, and a free-form extra blob (codebook, dual
// variables, counters). JSON keeps doubles bit-exact via shortest-round-trip
// formatting; non-finite values are rejected at save time because they would
// not survive the trip.
struct Checkpoint {
  ParamSet params;
  AdamState adam;
  nlohmann::json extra = nlohmann::json::object();
};

namespace detail {

inline nlohmann::json tensor_to_json(const Tensor& t) {
  if (!t.finite()) throw ContractError("checkpoint: refusing to save non-finite tensor");
  return nlohmann::json{{"shape", t.shape}, {"data", t.data}};
}

inline Tensor tensor_from_json(const nlohmann::json& j) {
  Tensor t;
  t.shape = j.at("shape").get<std::vector<int>>();
  t.data = j.at("data").get<std::vector<double>>();
  if (Tensor::numel_of(t.shape) != static_cast<long long>(t.data.size()))
    throw ConfigError("checkpoint: tensor shape/data mismatch");
  return t;
}

inline nlohmann::json param_map_to_json(const std::map<std::string, Tensor>& m) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, t] : m) j[name] = tensor_to_json(t);
  return j;
}

inline std::map<std::string, Tensor> param_map_from_json(const nlohmann::json& j) {
  std::map<std::string, Tensor> m;
  for (auto it = j.begin(); it != j.end(); ++it) m[it.key()] = tensor_from_json(it.value());
  return m;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  nlohmann::json j;
  j["version"] = 1;
  j["params"] = detail::param_map_to_json(ck.params);
  j["adam"] = {{"step", ck.adam.step},
               {"m", detail::param_map_to_json(ck.adam.m)},
               {"v", detail::param_map_to_json(ck.adam.v)}};
  j["extra"] = ck.extra;
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp);
    if (!f) throw ConfigError("checkpoint: cannot open " + tmp.string() + " for writing");
    f << j.dump();
    if (!f) throw ConfigError("checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("checkpoint: cannot open " + path.string());
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("checkpoint: parse error in " + path.string() + ": " + e.what());
  }
  if (j.value("version", 0) != 1) throw ConfigError("checkpoint: unsupported version in " + path.string());
  Checkpoint ck;
  ck.params = detail::param_map_from_json(j.at("params"));
  ck.adam.step = j.at("adam").at("step").get<std::int64_t>();
  ck.adam.m = detail::param_map_from_json(j.at("adam").at("m"));
  ck.adam.v = detail::param_map_from_json(j.at("adam").at("v"));
  ck.extra = j.value("extra", nlohmann::json::object());
  return ck;
}

}  // namespace gvq
