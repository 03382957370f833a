#include "s2slab/gradcheck.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace s2slab {

std::string GradCheckReport::render() const {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "grad-check h=%g tol=%g\n", h, tol);
  out += buf;
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof(buf), "%-24s max_rel_err=%.3e checked=%zu excluded=%zu %s\n",
                  e.name.c_str(), e.max_rel_err, e.checked, e.excluded,
                  e.pass ? "ok" : "FAIL");
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "overall max_rel_err=%.3e %s\n", max_rel_err,
                pass ? "PASS" : "FAIL");
  out += buf;
  return out;
}

GradCheckReport grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                           double h, double tol,
                           const std::map<std::string, std::vector<uint8_t>>* exclude) {
  if (h <= 0.0) throw std::invalid_argument("grad_check: h must be positive");

  // One reverse-mode sweep gives every parameter's analytic gradient.
  for (auto p : params) p.zero_grad();
  Tensor loss = f();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) {
    if (!p.requires_grad())
      throw std::invalid_argument("grad_check: parameter '" + p.name() +
                                  "' does not require grad");
    analytic.push_back(p.node()->grad.empty() ? std::vector<double>(p.numel(), 0.0)
                                              : p.node()->grad);
  }

  GradCheckReport report;
  report.h = h;
  report.tol = tol;

  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];
    GradCheckEntry entry;
    entry.name = p.name().empty() ? ("param" + std::to_string(pi)) : p.name();
    const std::vector<uint8_t>* mask = nullptr;
    if (exclude) {
      auto it = exclude->find(entry.name);
      if (it != exclude->end()) {
        if (it->second.size() != p.numel())
          throw std::invalid_argument("grad_check: exclusion mask size mismatch for '" +
                                      entry.name + "'");
        mask = &it->second;
      }
    }

    auto& vals = p.value();
    for (size_t i = 0; i < vals.size(); ++i) {
      if (mask && (*mask)[i]) {
        ++entry.excluded;
        continue;
      }
      double keep = vals[i];
      vals[i] = keep + h;
      double up = f().item();
      vals[i] = keep - h;
      double dn = f().item();
      vals[i] = keep;

      double fd = (up - dn) / (2.0 * h);
      double ad = analytic[pi][i];
      double rel = std::fabs(ad - fd) / (std::fabs(ad) + std::fabs(fd) + 1e-8);
      if (rel > entry.max_rel_err) entry.max_rel_err = rel;
      ++entry.checked;
    }
    entry.pass = entry.max_rel_err < tol;
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.pass = report.pass && entry.pass;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace s2slab
