#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "s2slab/corpus.hpp"
#include "s2slab/tensor.hpp"

namespace s2slab {

enum class Activation { kRelu, kGelu };
enum class EmbeddingMode { kMeanPool, kPrompt };

struct ModelConfig {
  size_t vocab_size = 0;
  size_t d_model = 64;
  size_t n_heads = 4;
  size_t enc_layers = 4;
  size_t dec_layers = 4;
  size_t ffn_dim = 256;
  size_t max_len = 128;
  double dropout = 0.1;
  Activation activation = Activation::kRelu;
  EmbeddingMode embedding_mode = EmbeddingMode::kMeanPool;
  int prompt_template = 6;  // 1..6

  void validate() const;
  static Activation parse_activation(const std::string& s);
  static std::string activation_name(Activation a);
  static EmbeddingMode parse_embedding_mode(const std::string& s);
  static std::string embedding_mode_name(EmbeddingMode m);

  // Round-trips through the flat key=value echo stored in checkpoints.
  std::map<std::string, std::string> echo() const;
  static ModelConfig from_echo(const std::map<std::string, std::string>& echo);
};

// No key-projection bias: attention scores are invariant to a constant shift
// per query row, so such a bias would be a dead parameter with an exactly
// zero gradient.
struct AttentionParams {
  Tensor wq, bq, wk, wv, bv, wo, bo;
};

struct EncLayerParams {
  Tensor ln1_g, ln1_b;  // before self-attention
  AttentionParams attn;
  Tensor ln2_g, ln2_b;  // before the FFN
  Tensor w1, b1, w2, b2;
};

struct DecLayerParams {
  Tensor ln1_g, ln1_b;
  AttentionParams self_attn;
  Tensor ln2_g, ln2_b;
  AttentionParams cross_attn;
  Tensor ln3_g, ln3_b;
  Tensor w1, b1, w2, b2;
};

// Pre-norm encoder-decoder with tied input/output token embeddings and a
// token-level 3-way denoising head on the encoder. Parameter groups partition
// the set: emb.* (shared), enc.* (encoder stack), dec.* (decoder stack),
// den.* (denoise head). The encoder side is enc.* plus den.*.
struct ModelParams {
  ModelConfig cfg;
  Tensor tok_emb;  // emb.tok [V, d], also the output projection
  Tensor pos_emb;  // emb.pos [max_len, d]
  std::vector<EncLayerParams> enc;
  Tensor enc_ln_g, enc_ln_b;  // final encoder norm
  std::vector<DecLayerParams> dec;
  Tensor dec_ln_g, dec_ln_b;  // final decoder norm
  Tensor den_w1, den_b1, den_w2, den_b2;  // denoise head d -> d -> 3

  static ModelParams init(const ModelConfig& cfg, uint64_t seed);
  ModelParams clone() const;

  std::vector<Tensor> all() const;
  std::vector<Tensor> embedding_group() const;
  std::vector<Tensor> encoder_side() const;  // enc.* + den.*
  std::vector<Tensor> decoder_side() const;  // dec.*
  std::vector<std::pair<std::string, std::vector<Tensor>>> groups() const;
  void zero_grad();
};

// Adds small deterministic Gaussian noise to every value of every listed
// parameter. Gradient checks perturb to a generic point first so that the
// structured zeros in the fresh initialization (positions, residual output
// projections) cannot trivially satisfy a finite-difference comparison.
void perturb_values(const std::vector<Tensor>& params, double scale,
                    uint64_t seed);

enum class Side { kEncoder, kDecoder };

// Deep copy with the top k layers of one side removed; remaining layers keep
// their indices and names so checkpoints stay loadable.
ModelParams drop_layers(const ModelParams& params, Side side, size_t k);

struct ForwardOptions {
  bool train = false;        // enables dropout
  Rng* dropout_rng = nullptr;
  bool instrument_ffn = false;  // retain post-activation FFN tensors
};

struct EncoderOutput {
  Tensor hidden;  // [B, T, d], after the final encoder norm
  Batch batch;
  std::vector<Tensor> ffn_acts;  // per layer when instrumented
};

EncoderOutput encode(const Batch& batch, const ModelParams& params,
                     const ForwardOptions& opts = {});

// Teacher-forcing view of a padded batch x: the decoder reads x with the
// final token dropped (so input[0] is BOS) and predicts x shifted left by
// one. PAD positions stay PAD and are masked out of the loss.
struct DecoderShift {
  Batch input;                  // [B, T-1]
  std::vector<TokenId> targets;  // row-major [B, T-1]
  std::vector<uint8_t> mask;     // 1 where the target is real
};

DecoderShift shift_for_decoder(const Batch& x);

struct DecoderOutput {
  Tensor logits;  // [B, T-1, V] over the shifted target sequence
  Tensor hidden;  // [B, T-1, d], after the final decoder norm
  std::vector<Tensor> ffn_acts;      // per layer when instrumented
  std::vector<TokenId> targets;      // from shift_for_decoder
  std::vector<uint8_t> target_mask;  // from shift_for_decoder
};

DecoderOutput decode_reconstruct(const EncoderOutput& enc, const Batch& target,
                                 const ModelParams& params, const ForwardOptions& opts = {});

// Token-level 3-class logits from the encoder states: [B, T, 3].
Tensor denoise_logits(const EncoderOutput& enc, const ModelParams& params,
                      const ForwardOptions& opts = {});

// Mean over hidden rows at content positions (PAD/BOS/EOS rows excluded; MASK
// and UNK rows participate). A row with no content positions is an error.
Tensor mean_pool_embedding(const EncoderOutput& enc);

struct TemplateFill {
  TokenSequence seq;   // BOS ... EOS, template applied
  size_t mask_slot;    // position of the MASK token
  bool truncated = false;
};

// Wraps the content tokens of `seq` (BOS/EOS stripped) into a prompt template.
// Template words outside the vocabulary map to UNK. Content is truncated when
// the wrapped sequence would exceed max_len.
TemplateFill fill_template(const TokenSequence& seq, int template_id, const Vocab& vocab,
                           size_t max_len);

const std::vector<std::string>& prompt_template_words(int template_id);

// Sentence embeddings for a batch of (unpadded) view sequences, honoring
// cfg.embedding_mode. Mean-pool reuses `enc`; prompt mode re-encodes the
// wrapped sequences and returns the MASK-slot hidden state.
Tensor sentence_embedding(const std::vector<TokenSequence>& views, const EncoderOutput& enc,
                          const ModelParams& params, const Vocab& vocab,
                          const ForwardOptions& opts = {});

struct ClassifierHead {
  Tensor w;  // cls.w [d, k]
  Tensor b;  // cls.b [k]
  static ClassifierHead init(size_t d_model, size_t classes, uint64_t seed);
  std::vector<Tensor> all() const { return {w, b}; }
};

// Runs the full encoder-decoder on the sequence itself and classifies from the
// final decoder hidden state at the last non-PAD position.
Tensor classify_last_decoder_token(const Batch& batch, const ModelParams& params,
                                   const ClassifierHead& head,
                                   const ForwardOptions& opts = {});

// Greedy argmax decoding, BOS-seeded, stopping at EOS or max_len.
TokenSequence greedy_decode(const TokenSequence& input, const ModelParams& params,
                            size_t max_len);

}  // namespace s2slab
