#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "s2slab/model.hpp"
#include "s2slab/trainer.hpp"

namespace s2slab {

// ---------------------------------------------------------------- probes

struct ProbeExample {
  TokenSequence seq;
  int32_t label = 0;
};

// Sentence-property probing tasks over synthetic data drawn from the
// vocabulary:
//   SeLen  — which of two length buckets the sentence falls into
//   WC     — which designated content word the sentence contains
//   BShif  — whether one adjacent token pair was swapped out of canonical
//            (id-sorted) order
struct ProbeTask {
  std::string name;  // "SeLen" | "WC" | "BShif"
  size_t classes = 2;
  size_t train_size = 256;
  size_t dev_size = 128;
  static ProbeTask make(const std::string& name);
};

struct ProbeData {
  std::vector<ProbeExample> train, dev;
  size_t classes = 0;
};

// Deterministic generation; splits are disjoint and labels exactly balanced
// (round-robin, so within 10% for any split size). Throws when the vocabulary
// or max_len cannot support the task.
ProbeData generate_probe_data(const ProbeTask& task, const Vocab& vocab, size_t max_len,
                              uint64_t seed);

struct ProbeConfig {
  size_t hidden = 32;
  size_t epochs = 40;
  double lr = 1e-2;
  size_t batch_size = 32;
};

struct ProbeResult {
  std::string task;
  size_t classes = 0;
  size_t train_size = 0, dev_size = 0;
  double train_accuracy = 0.0;
  double dev_accuracy = 0.0;
};

// Trains a small MLP on frozen mean-pooled top-layer encoder states and
// reports dev accuracy. The encoder is never updated.
ProbeResult run_probe(const ModelParams& params, const Vocab& vocab, const ProbeTask& task,
                      const ProbeConfig& cfg, uint64_t seed);

// ------------------------------------------------------- activation rates

struct ActivationReport {
  std::vector<double> encoder_rates;  // one entry per encoder FFN layer
  std::vector<double> decoder_rates;  // one entry per decoder FFN layer
  double encoder_avg = 0.0;
  double decoder_avg = 0.0;
  bool approximate = false;  // activation is not relu; threshold-0 count kept
  size_t encoder_positions = 0;  // non-PAD token positions counted
  size_t decoder_positions = 0;
};

// Fraction of post-activation FFN values strictly greater than zero, per
// layer and averaged, over the non-PAD positions of the given batches. The
// decoder is run with each batch as its own reconstruction target.
ActivationReport neuron_activation_rate(const ModelParams& params,
                                        const std::vector<Batch>& batches);

// ----------------------------------------------------------- fine-tuning

struct FinetuneConfig {
  size_t steps = 60;  // 0 evaluates the untrained head only
  size_t batch_size = 16;
  double lr = 1e-3;
  size_t train_size = 192;
  size_t dev_size = 96;
  double repair_rate = 0.3;  // per-token replacement rate for the repair task
};

struct FinetuneResult {
  std::string task;
  double metric = 0.0;  // accuracy (classification) or F0.5 (repair)
  std::map<std::string, double> details;
};

// task is "toy-classification" (marker-token parity, classified from the
// final decoder state) or "toy-seq2seq" (token-replacement repair, decoded
// greedily). The input parameters are copied, never mutated.
FinetuneResult finetune_task(const ModelParams& pretrained, const Vocab& vocab,
                             const std::string& task, const FinetuneConfig& cfg,
                             uint64_t seed);

// Positional edit scoring for replacement-style repairs: an edit is a
// (position, token) pair where a sequence disagrees with the source. Length
// mismatches count as edits against a PAD sentinel on the longer side.
struct EditScores {
  size_t tp = 0, fp = 0, fn = 0;
  double precision() const;
  double recall() const;
  double f_beta(double beta) const;  // beta=0.5 weighs precision over recall
};

EditScores score_edits(const TokenSequence& source, const TokenSequence& reference,
                       const TokenSequence& hypothesis);

// --------------------------------------------------------- layer ablation

struct AblationRow {
  std::string side;  // "encoder" | "decoder"
  size_t k = 0;
  std::optional<double> metric;  // empty when the row was skipped
  std::string note;              // "baseline", skip reason, or empty
};

// Drops the top k layers from one side, fine-tunes briefly on the task and
// evaluates; emits two k=0 baseline rows (identical by construction) plus one
// row per (side, k). Out-of-range k produces a skipped row with a note.
std::vector<AblationRow> layer_ablation(const ModelParams& params, const Vocab& vocab,
                                        const std::string& task,
                                        const std::vector<size_t>& ks,
                                        const FinetuneConfig& cfg, uint64_t seed);

// ---------------------------------------------------------------- reports

struct AnalysisReport {
  std::string title;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  std::map<std::string, std::string> provenance;  // config echo, seed, hashes

  // "# key=value" provenance lines (sorted), then a TSV table.
  std::string render() const;
  void write(const std::string& path) const;
};

// Hex payload checksum of a saved checkpoint, for provenance blocks.
std::string checkpoint_hash_hex(const std::string& stem);

}  // namespace s2slab
