#pragma once

#include <optional>
#include <string>
#include <vector>

#include "s2slab/corpus.hpp"
#include "s2slab/tensor.hpp"

namespace s2slab {

// Which loss terms participate in training and how they are weighted. Term
// names as used in configs and reports: "nll*" reconstructs the original
// sequence from the heavier-corrupted view, "nll" from the infilling-only
// view, "de" is the token-level denoise classification on the heavier view,
// "cl" the pairwise contrastive term between the two views' embeddings.
struct ObjectiveConfig {
  double tau = 1.0;         // contrastive temperature
  double lambda_de = 0.05;  // denoise-classification weight
  double lambda_cl = 0.1;   // contrastive weight
  bool use_nll_star = true;
  bool use_nll = true;
  bool use_de = true;
  bool use_cl = true;
  bool symmetric_cl = false;  // also score h+ rows against h (off by default)

  void validate() const;
  // Comma-joined enabled term names, e.g. "nll*,nll,de,cl".
  std::string enabled_terms() const;
  // Replaces the enabled set from a comma list of term names.
  void set_enabled_terms(const std::string& list);
};

// Mean negative log-likelihood over positions where mask = 1. `logits` is
// [B, T, V]; `targets` and `mask` are row-major [B, T]. No eligible position
// is an error.
Tensor loss_reconstruction(const Tensor& logits, const std::vector<TokenId>& targets,
                           const std::vector<uint8_t>& mask);

// Mean 3-class cross-entropy over positions where mask = 1. `logits` is
// [B, T, 3]; `labels` holds 0/1/2 per position. If no position is eligible
// the term is a constant zero and a warning is appended.
Tensor loss_denoise(const Tensor& logits, const std::vector<int8_t>& labels,
                    const std::vector<uint8_t>& mask, std::vector<std::string>* warnings);

// InfoNCE over one in-batch direction: row i of `h` scores against every row
// of `h_plus` by cosine similarity over temperature tau, with row i of
// `h_plus` as the positive; returns the mean over rows. Zero-norm rows are an
// error. With symmetric = true the result is the average of both directions.
Tensor loss_contrastive(const Tensor& h, const Tensor& h_plus, double tau,
                        bool symmetric = false);

struct LossTerms {
  std::optional<Tensor> nll_star, nll, de, cl;  // unweighted term values
  Tensor total;                                 // weighted sum of present terms
};

// total = nll_star + nll + lambda_de * de + lambda_cl * cl over the present
// terms. At least one term must be present.
LossTerms combine_losses(const ObjectiveConfig& cfg, std::optional<Tensor> nll_star,
                         std::optional<Tensor> nll, std::optional<Tensor> de,
                         std::optional<Tensor> cl);

// Metric-file cell: the term value with full precision, or "-" when absent.
std::string metric_cell(const std::optional<Tensor>& term);

}  // namespace s2slab
