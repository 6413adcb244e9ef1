#pragma once

#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "gvq/core/error.hpp"

namespace gvq {

// Dense row-major double tensor. Training-scale data here is tiny (MLPs with
// a few hundred units), so a flat vector beats anything fancier.
struct Tensor {
  std::vector<double> data;
  std::vector<int> shape;

  Tensor() = default;
  Tensor(std::vector<double> d, std::vector<int> s) : data(std::move(d)), shape(std::move(s)) {
    if (numel_of(shape) != static_cast<long long>(data.size()))
      throw ContractError("Tensor: data size does not match shape");
  }

  static long long numel_of(const std::vector<int>& shape) {
    long long n = 1;
    for (int s : shape) {
      if (s < 0) throw ContractError("Tensor: negative dimension");
      n *= s;
    }
    return n;
  }

  static Tensor zeros(std::vector<int> shape) {
    long long n = numel_of(shape);
    return Tensor(std::vector<double>(static_cast<std::size_t>(n), 0.0), std::move(shape));
  }

  long long numel() const { return static_cast<long long>(data.size()); }

  int rows() const { return shape.empty() ? 0 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  double& at(int i) { return data[static_cast<std::size_t>(i)]; }
  double at(int i) const { return data[static_cast<std::size_t>(i)]; }
  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols() + c]; }

  bool finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

// Ordered so that iteration (gradient application, checkpointing) is
// deterministic across runs.
using ParamSet = std::map<std::string, Tensor>;

inline void assert_all_finite(const ParamSet& params, const char* where) {
  for (const auto& [name, t] : params)
    if (!t.finite()) throw TrainingAbort(std::string(where) + ": non-finite values in " + name);
}

}  // namespace gvq
