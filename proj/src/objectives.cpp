#include "s2slab/objectives.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "s2slab/config.hpp"

namespace s2slab {

void ObjectiveConfig::validate() const {
  if (tau <= 0.0) throw std::runtime_error("objective: tau must be positive");
  if (lambda_de < 0.0 || lambda_cl < 0.0)
    throw std::runtime_error("objective: term weights must be non-negative");
  if (!use_nll_star && !use_nll && !use_de && !use_cl)
    throw std::runtime_error("objective: at least one term must be enabled");
}

std::string ObjectiveConfig::enabled_terms() const {
  std::string out;
  auto append = [&out](const char* name) {
    if (!out.empty()) out += ",";
    out += name;
  };
  if (use_nll_star) append("nll*");
  if (use_nll) append("nll");
  if (use_de) append("de");
  if (use_cl) append("cl");
  return out;
}

void ObjectiveConfig::set_enabled_terms(const std::string& list) {
  use_nll_star = use_nll = use_de = use_cl = false;
  for (const std::string& term : split_list(list)) {
    if (term == "nll*")
      use_nll_star = true;
    else if (term == "nll")
      use_nll = true;
    else if (term == "de")
      use_de = true;
    else if (term == "cl")
      use_cl = true;
    else
      throw std::runtime_error("objective: unknown term '" + term + "'");
  }
  validate();
}

namespace {

// Shared core: mean of -log softmax(logits)[label] over mask = 1 positions.
// `logits` is [..., C]; labels/mask run over the leading positions.
Tensor masked_mean_ce(const Tensor& logits, const std::vector<int32_t>& labels,
                      const std::vector<uint8_t>& mask, size_t n_included) {
  Tensor lsm = log_softmax(logits, logits.rank() - 1);
  Tensor picked = pick(lsm, labels);  // [positions...]
  std::vector<double> m(mask.begin(), mask.end());
  Tensor masked = mul(picked, Tensor::constant(picked.shape(), std::move(m)));
  return scale(sum_all(masked), -1.0 / static_cast<double>(n_included));
}

size_t count_mask(const std::vector<uint8_t>& mask) {
  size_t n = 0;
  for (uint8_t v : mask) n += v != 0;
  return n;
}

}  // namespace

Tensor loss_reconstruction(const Tensor& logits, const std::vector<TokenId>& targets,
                           const std::vector<uint8_t>& mask) {
  size_t positions = shape_numel(logits.shape()) / logits.shape().back();
  if (targets.size() != positions || mask.size() != positions)
    throw std::invalid_argument("loss_reconstruction: labels/mask size mismatch");
  size_t n = count_mask(mask);
  if (n == 0) throw std::runtime_error("loss_reconstruction: no unmasked target positions");
  return masked_mean_ce(logits, targets, mask, n);
}

Tensor loss_denoise(const Tensor& logits, const std::vector<int8_t>& labels,
                    const std::vector<uint8_t>& mask, std::vector<std::string>* warnings) {
  if (logits.shape().back() != 3)
    throw std::invalid_argument("loss_denoise: logits must have 3 classes");
  size_t positions = shape_numel(logits.shape()) / 3;
  if (labels.size() != positions || mask.size() != positions)
    throw std::invalid_argument("loss_denoise: labels/mask size mismatch");
  size_t n = count_mask(mask);
  if (n == 0) {
    if (warnings)
      warnings->push_back("loss_denoise: no eligible positions in batch; term set to 0");
    return Tensor::scalar(0.0);
  }
  std::vector<int32_t> wide(labels.begin(), labels.end());
  for (size_t i = 0; i < wide.size(); ++i) {
    if (!mask[i]) {
      wide[i] = 0;  // excluded positions may carry arbitrary labels
    } else if (wide[i] < 0 || wide[i] > 2) {
      throw std::invalid_argument("loss_denoise: label out of range at position " +
                                  std::to_string(i));
    }
  }
  return masked_mean_ce(logits, wide, mask, n);
}

Tensor loss_contrastive(const Tensor& h, const Tensor& h_plus, double tau, bool symmetric) {
  if (h.rank() != 2 || h.shape() != h_plus.shape())
    throw std::invalid_argument("loss_contrastive: views must share an [n, d] shape");
  if (tau <= 0.0) throw std::invalid_argument("loss_contrastive: tau must be positive");
  size_t n = h.shape()[0], d = h.shape()[1];
  for (size_t r = 0; r < n; ++r) {
    double na = 0.0, nb = 0.0;
    for (size_t k = 0; k < d; ++k) {
      na += h.value()[r * d + k] * h.value()[r * d + k];
      nb += h_plus.value()[r * d + k] * h_plus.value()[r * d + k];
    }
    if (na == 0.0 || nb == 0.0)
      throw std::runtime_error("loss_contrastive: zero-norm embedding row " +
                               std::to_string(r));
  }

  std::vector<int32_t> diag(n);
  for (size_t i = 0; i < n; ++i) diag[i] = static_cast<int32_t>(i);

  auto direction = [&](const Tensor& a, const Tensor& b) {
    Tensor sims = matmul(row_normalize(a), transpose(row_normalize(b), 0, 1));  // [n, n]
    Tensor rows = log_softmax(scale(sims, 1.0 / tau), 1);
    return scale(mean_all(pick(rows, diag)), -1.0);
  };

  Tensor forward = direction(h, h_plus);
  if (!symmetric) return forward;
  return scale(add(forward, direction(h_plus, h)), 0.5);
}

LossTerms combine_losses(const ObjectiveConfig& cfg, std::optional<Tensor> nll_star,
                         std::optional<Tensor> nll, std::optional<Tensor> de,
                         std::optional<Tensor> cl) {
  LossTerms t;
  t.nll_star = std::move(nll_star);
  t.nll = std::move(nll);
  t.de = std::move(de);
  t.cl = std::move(cl);

  std::optional<Tensor> total;
  auto accumulate = [&total](const Tensor& term) {
    total = total ? add(*total, term) : term;
  };
  if (t.nll_star) accumulate(*t.nll_star);
  if (t.nll) accumulate(*t.nll);
  if (t.de) accumulate(scale(*t.de, cfg.lambda_de));
  if (t.cl) accumulate(scale(*t.cl, cfg.lambda_cl));
  if (!total) throw std::runtime_error("combine_losses: no loss terms present");
  t.total = *total;
  return t;
}

std::string metric_cell(const std::optional<Tensor>& term) {
  if (!term) return "-";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", term->item());
  return buf;
}

}  // namespace s2slab
