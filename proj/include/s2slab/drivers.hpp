#pragma once

#include <map>
#include <string>
#include <vector>

#include "s2slab/analysis.hpp"
#include "s2slab/gradcheck.hpp"
#include "s2slab/trainer.hpp"

namespace s2slab {

// A trained model rebuilt from a checkpoint stem: architecture from the
// stored config echo, parameter values from the payload.
struct LoadedModel {
  ModelParams params;
  std::map<std::string, std::string> config;  // full checkpoint echo
};
LoadedModel load_model(const std::string& stem);

// Verifies every parameter's reverse-mode gradient of the combined training
// objective against central finite differences on one deterministic synthetic
// batch (vocabulary and sentences derived from cfg.seed). Parameters are
// jittered to a generic point first so structurally zero initial values
// cannot make the comparison vacuous.
GradCheckReport full_loss_grad_check(const TrainConfig& cfg, double h = 1e-5,
                                     double tol = 1e-4);

// One objective combination from the study grid. The five standard variants
// enable: M1 {nll*}, M2 {nll*, de}, M3 {nll*, de, cl}, M4 {nll*, nll, cl},
// M5 {nll*, nll, de, cl}.
struct ObjectiveVariant {
  std::string name;
  std::string enabled;  // comma list for ObjectiveConfig::set_enabled_terms
};
std::vector<ObjectiveVariant> objective_variants();

// Downstream evaluation shared by both drivers: after each pretraining run,
// the trained encoder is scored with a frozen-encoder probe.
struct DriverEval {
  std::string probe_task = "SeLen";
  ProbeConfig probe;
  size_t probe_train_size = 256;
  size_t probe_dev_size = 128;
  uint64_t probe_seed = 1;
};

// Trains one run per weight value for `parameter` ("lambda_de" or
// "lambda_cl"), holding the other weight at its default, then probes each
// trained encoder. One table row per value; runs live in subdirectories of
// out_dir and the table is also written to out_dir/sweep.tsv. The swept term
// must be enabled in the base objective.
AnalysisReport sweep(const std::string& parameter, const std::vector<double>& values,
                     const TrainConfig& base, const std::vector<std::string>& corpus_lines,
                     const std::string& out_dir, const DriverEval& eval);

// Trains the requested objective combinations (default: all five variants)
// and emits the comparison table — enabled-term markers, final losses and
// probe accuracy per row — to out_dir/ablation.tsv.
AnalysisReport ablate_objectives(const TrainConfig& base,
                                 const std::vector<std::string>& corpus_lines,
                                 const std::string& out_dir, const DriverEval& eval,
                                 const std::vector<std::string>& which = {});

}  // namespace s2slab
