#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "s2slab/corpus.hpp"
#include "s2slab/rng.hpp"

namespace s2slab {

// Noise classes for the token-level denoising objective.
enum NoiseClass : int8_t { kNoiseOther = 0, kNoiseShuffled = 1, kNoiseReplaced = 2 };

struct NoiseConfig {
  double mask_ratio = 0.30;    // infilling coverage target over maskable tokens
  double span_mean = 3.0;      // Poisson mean for span lengths
  double trigram_rate = 0.05;  // chance an eligible position starts a trigram
  double replace_rate = 0.05;  // per-token replacement probability
  enum class Mode { kShuffleOnly, kReplaceOnly, kBoth } mode = Mode::kBoth;

  static Mode parse_mode(const std::string& s);  // "sf" | "ra" | "sfra"
  static std::string mode_name(Mode m);
  void validate() const;
};

// PAD/BOS/EOS/MASK are structural: never noised, excluded from the denoise
// loss. UNK stands in for a content token and stays eligible.
bool is_structural(TokenId id);

// Maps each corrupted position back to its source span (len > 1 for MASK).
struct SpanRef {
  size_t begin = 0;
  size_t len = 1;
};

struct InfillResult {
  TokenSequence seq;
  std::vector<SpanRef> alignment;  // one entry per corrupted position
};

InfillResult apply_text_infilling(const TokenSequence& seq, double mask_ratio,
                                  double span_mean, Rng& rng);

struct ShuffleResult {
  TokenSequence seq;
  std::vector<uint8_t> flags;  // 1 on every position of a shuffled trigram
};

ShuffleResult apply_shuffle(const TokenSequence& seq, double trigram_rate, Rng& rng);

struct ReplaceResult {
  TokenSequence seq;
  std::vector<uint8_t> flags;  // 1 where a token was replaced
  std::vector<std::string> warnings;
};

// Replacement pool: vocabulary minus specials, minus `exclude` (the tokens of
// the uncorrupted sequence), minus the current token. Empty pool falls back to
// excluding only the current token and records a warning.
ReplaceResult apply_random_replace(const TokenSequence& seq, double replace_rate,
                                   const Vocab& vocab, Rng& rng,
                                   const std::vector<uint8_t>* skip_flags,
                                   const TokenSequence& exclude);

struct NoiseLabels {
  std::vector<int8_t> cls;        // 0 other, 1 shuffled, 2 replaced
  std::vector<uint8_t> loss_mask;  // 1 where the denoise loss applies
};

// Two corrupted views of one sequence: view_a carries infilling only, view_b
// carries infilling plus the extra noises selected by mode. Labels and the
// loss mask describe view_b. The two infilling draws are independent.
struct CorruptionRecord {
  TokenSequence original;
  TokenSequence view_a;
  TokenSequence view_b;
  NoiseLabels labels;
  uint64_t seed = 0;
  std::vector<std::string> warnings;
};

CorruptionRecord corrupt_pair(const TokenSequence& seq, const NoiseConfig& cfg,
                              const Vocab& vocab, uint64_t seed);

// Per-example seed for step/index addressed corruption during training.
uint64_t example_noise_seed(uint64_t run_seed, uint64_t step, uint64_t index);

// TSV line: original, view_a, view_b, labels, loss_mask (space-separated ids
// within each column), then the seed.
std::string format_record(const CorruptionRecord& rec);

}  // namespace s2slab
