#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "s2slab/checkpoint.hpp"
#include "s2slab/config.hpp"
#include "s2slab/corpus.hpp"
#include "s2slab/model.hpp"
#include "s2slab/noising.hpp"
#include "s2slab/objectives.hpp"

namespace s2slab {

// Raised when a loss or gradient goes non-finite. Training aborts without
// touching the last periodic checkpoint; the CLI maps this to exit code 2.
struct NumericalAbort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  size_t steps = 200;
  size_t batch_size = 16;
  double lr = 3e-4;
  size_t warmup_steps = 50;
  uint64_t seed = 1;
  size_t checkpoint_every = 50;
  size_t vocab_max_size = 4096;  // cap when the vocabulary is built from the corpus
  NoiseConfig noise;
  ObjectiveConfig objective;
  ModelConfig model;  // vocab_size 0 means "derive from the corpus"

  void validate() const;
  static TrainConfig from_config(const Config& c);
  // Full resolved key=value view (train.*, vocab.*, noise.*, objective.*,
  // model.*), used for the resolved-config file and checkpoint manifests.
  std::map<std::string, std::string> echo() const;
  // Every key from_config understands, for unknown-key rejection.
  static std::vector<std::string> known_keys();
};

// Adam first/second moments, one tensor per parameter in parameter order,
// named opt.m.<param> / opt.v.<param> so they serialize like parameters.
struct AdamState {
  std::vector<Tensor> m, v;
  size_t step = 0;  // completed optimizer steps

  static AdamState init(const std::vector<Tensor>& params);
  std::vector<Tensor> all() const;  // m then v, for checkpointing
};

// Bias-corrected Adam (beta1 0.9, beta2 0.999, eps 1e-8) over `params` whose
// gradients are populated; increments state.step. Non-finite gradients abort
// with the parameter's name.
void adam_step(const std::vector<Tensor>& params, AdamState& state, double lr);

// Linear warmup to cfg.lr over warmup_steps, then constant. `step` is 1-based.
double lr_at(const TrainConfig& cfg, size_t step);

// Deterministic data order: a fresh permutation of [0, n) per epoch.
std::vector<size_t> epoch_permutation(uint64_t seed, size_t epoch, size_t n);

// One step's paired-view batch. Labels and the loss mask live on view_b's
// padded grid; excess positions are 0/ineligible.
struct StepData {
  Batch x, view_a, view_b;
  std::vector<TokenSequence> seq_a, seq_b;  // unpadded views, for embeddings
  std::vector<int8_t> cls;
  std::vector<uint8_t> loss_mask;
  std::vector<std::string> warnings;
};

// Corrupts sentences[picks[i]] with per-example seeds derived from
// (run_seed, step, i).
StepData corrupt_step_batch(const std::vector<TokenSequence>& sentences,
                            const std::vector<size_t>& picks, const NoiseConfig& noise,
                            const Vocab& vocab, uint64_t run_seed, size_t step);

struct StepLosses {
  LossTerms terms;
  std::vector<std::string> warnings;
};

// Builds every enabled loss term for one corrupted batch. Only the forward
// passes the enabled terms need are run, so e.g. a {de, cl}-only setting
// never touches the decoder.
StepLosses compute_losses(const StepData& data, const ModelParams& params,
                          const Vocab& vocab, const ObjectiveConfig& objective,
                          const ForwardOptions& opts);

struct PretrainOutcome {
  ModelParams params;
  Vocab vocab;
  size_t steps_run = 0;
  std::string metrics_path;
  std::string final_checkpoint;  // stem
  // Last step's loss terms (unweighted) and weighted total, for reports.
  std::optional<double> final_nll_star, final_nll, final_de, final_cl;
  double final_total = 0.0;
};

// Runs the training loop, writing metrics.tsv, resolved.cfg and periodic +
// final checkpoints into out_dir. With resume_stem set, restores parameters,
// optimizer moments and the step counter and continues; the metrics file then
// contains only the resumed steps.
PretrainOutcome pretrain(const TrainConfig& cfg,
                         const std::vector<std::string>& corpus_lines,
                         const std::string& out_dir, const std::string& resume_stem = "");

// --- evaluation helpers (no dropout, parameters untouched) ---

// Token-level accuracy of the denoise head over eligible positions of
// corrupted views of `sentences` (one corruption per sentence, seed-derived).
double denoise_accuracy(const ModelParams& params, const std::vector<TokenSequence>& sentences,
                        const NoiseConfig& noise, const Vocab& vocab, uint64_t eval_seed);

// Rate of the most frequent denoise label on the same corruptions: the
// floor a useful classifier must beat.
double denoise_majority_rate(const std::vector<TokenSequence>& sentences,
                             const NoiseConfig& noise, const Vocab& vocab,
                             uint64_t eval_seed);

// Mean cosine similarity between the two views' sentence embeddings.
double mean_pair_cosine(const ModelParams& params, const std::vector<TokenSequence>& sentences,
                        const NoiseConfig& noise, const Vocab& vocab, uint64_t eval_seed);

}  // namespace s2slab
