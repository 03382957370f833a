#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "s2slab/tensor.hpp"

namespace s2slab {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  size_t checked = 0;
  size_t excluded = 0;
  bool pass = true;
};

struct GradCheckReport {
  double h = 0.0;
  double tol = 0.0;
  bool pass = true;
  double max_rel_err = 0.0;
  std::vector<GradCheckEntry> entries;
  std::string render() const;
};

// Compares reverse-mode gradients of the scalar f() against central finite
// differences for every element of every parameter. f must rebuild its graph
// on each call and be deterministic. rel err = |ad - fd| / (|ad| + |fd| + 1e-8).
// `exclude` optionally masks positions (e.g. kinks at exactly 0) per parameter.
GradCheckReport grad_check(
    const std::function<Tensor()>& f, const std::vector<Tensor>& params, double h, double tol,
    const std::map<std::string, std::vector<uint8_t>>* exclude = nullptr);

}  // namespace s2slab
