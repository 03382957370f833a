#include "s2slab/model.hpp"

#include <cmath>
#include <stdexcept>

namespace s2slab {

void ModelConfig::validate() const {
  if (vocab_size <= static_cast<size_t>(Vocab::num_specials()))
    throw std::runtime_error("model: vocab_size must exceed the special-token count");
  if (d_model == 0 || n_heads == 0 || ffn_dim == 0)
    throw std::runtime_error("model: zero-sized dimension");
  if (d_model % n_heads != 0)
    throw std::runtime_error("model: d_model must be divisible by n_heads");
  if (max_len < 4) throw std::runtime_error("model: max_len must be at least 4");
  if (dropout < 0.0 || dropout >= 1.0)
    throw std::runtime_error("model: dropout must be in [0, 1)");
  if (prompt_template < 1 || prompt_template > 6)
    throw std::runtime_error("model: prompt_template must be in 1..6");
}

Activation ModelConfig::parse_activation(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "gelu") return Activation::kGelu;
  throw std::runtime_error("model: unknown activation '" + s + "'");
}

std::string ModelConfig::activation_name(Activation a) {
  return a == Activation::kRelu ? "relu" : "gelu";
}

EmbeddingMode ModelConfig::parse_embedding_mode(const std::string& s) {
  if (s == "mean-pool") return EmbeddingMode::kMeanPool;
  if (s == "prompt") return EmbeddingMode::kPrompt;
  throw std::runtime_error("model: unknown embedding mode '" + s + "'");
}

std::string ModelConfig::embedding_mode_name(EmbeddingMode m) {
  return m == EmbeddingMode::kMeanPool ? "mean-pool" : "prompt";
}

std::map<std::string, std::string> ModelConfig::echo() const {
  std::map<std::string, std::string> e;
  e["model.vocab_size"] = std::to_string(vocab_size);
  e["model.d_model"] = std::to_string(d_model);
  e["model.n_heads"] = std::to_string(n_heads);
  e["model.enc_layers"] = std::to_string(enc_layers);
  e["model.dec_layers"] = std::to_string(dec_layers);
  e["model.ffn_dim"] = std::to_string(ffn_dim);
  e["model.max_len"] = std::to_string(max_len);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", dropout);
  e["model.dropout"] = buf;
  e["model.activation"] = activation_name(activation);
  e["model.embedding_mode"] = embedding_mode_name(embedding_mode);
  e["model.prompt_template"] = std::to_string(prompt_template);
  return e;
}

ModelConfig ModelConfig::from_echo(const std::map<std::string, std::string>& echo) {
  auto get = [&echo](const std::string& k) -> const std::string& {
    auto it = echo.find(k);
    if (it == echo.end()) throw std::runtime_error("checkpoint: missing config key " + k);
    return it->second;
  };
  ModelConfig c;
  c.vocab_size = std::stoull(get("model.vocab_size"));
  c.d_model = std::stoull(get("model.d_model"));
  c.n_heads = std::stoull(get("model.n_heads"));
  c.enc_layers = std::stoull(get("model.enc_layers"));
  c.dec_layers = std::stoull(get("model.dec_layers"));
  c.ffn_dim = std::stoull(get("model.ffn_dim"));
  c.max_len = std::stoull(get("model.max_len"));
  c.dropout = std::stod(get("model.dropout"));
  c.activation = parse_activation(get("model.activation"));
  c.embedding_mode = parse_embedding_mode(get("model.embedding_mode"));
  c.prompt_template = std::stoi(get("model.prompt_template"));
  c.validate();
  return c;
}

// ------------------------------------------------------------------- params

namespace {

// Glorot-normal: keeps forward/backward signal at a healthy scale for any
// matrix size, which also keeps finite-difference gradient checks well above
// the floating-point noise floor.
double glorot_std(const Shape& shape) {
  size_t fan_in = shape[0], fan_out = shape.size() > 1 ? shape[1] : shape[0];
  return std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
}

class ParamFactory {
 public:
  explicit ParamFactory(uint64_t seed) : rng_(Rng::for_stream(seed, 0x696e6974 /* init */)) {}

  Tensor normal(const std::string& name, const Shape& shape, double scale = 1.0) {
    std::vector<double> data(shape_numel(shape));
    double std = glorot_std(shape) * scale;
    for (auto& v : data) v = rng_.normal(0.0, std);
    return Tensor::param(name, shape, std::move(data));
  }
  Tensor zeros(const std::string& name, const Shape& shape) {
    return Tensor::param(name, shape, std::vector<double>(shape_numel(shape), 0.0));
  }
  Tensor ones(const std::string& name, const Shape& shape) {
    return Tensor::param(name, shape, std::vector<double>(shape_numel(shape), 1.0));
  }

  AttentionParams attention(const std::string& prefix, size_t d) {
    AttentionParams p;
    p.wq = normal(prefix + ".wq", {d, d});
    p.bq = zeros(prefix + ".bq", {d});
    p.wk = normal(prefix + ".wk", {d, d});
    p.wv = normal(prefix + ".wv", {d, d});
    p.bv = zeros(prefix + ".bv", {d});
    // Residual branches start at exactly zero output (see the note above the
    // layer construction in init), so the projection is zeroed, not sampled.
    p.wo = zeros(prefix + ".wo", {d, d});
    p.bo = zeros(prefix + ".bo", {d});
    return p;
  }

 private:
  Rng rng_;
};

void collect(const AttentionParams& p, std::vector<Tensor>& out) {
  out.insert(out.end(), {p.wq, p.bq, p.wk, p.wv, p.bv, p.wo, p.bo});
}

AttentionParams clone_attention(const AttentionParams& p) {
  return {p.wq.clone(), p.bq.clone(), p.wk.clone(),
          p.wv.clone(), p.bv.clone(), p.wo.clone(), p.bo.clone()};
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  ParamFactory f(seed);
  ModelParams p;
  p.cfg = cfg;
  size_t d = cfg.d_model;

  p.tok_emb = f.normal("emb.tok", {cfg.vocab_size, d});
  // Positions start neutral: an untrained encoder is then exactly
  // permutation-invariant and cannot expose order or length information it
  // never computed. The rows differentiate through training gradients.
  p.pos_emb = f.zeros("emb.pos", {cfg.max_len, d});

  // Every residual branch ends in a zero-initialized projection (attention
  // wo, FFN w2), so each block starts as the identity: a freshly initialized
  // network computes exactly its token embeddings and exposes no spurious
  // mixing structure. Training wakes the branches (their output projections
  // receive gradients immediately, the interiors one step later). Gradient
  // checks should perturb to a generic point first; see perturb_values.
  for (size_t i = 0; i < cfg.enc_layers; ++i) {
    std::string pre = "enc." + std::to_string(i);
    EncLayerParams l;
    l.ln1_g = f.ones(pre + ".ln1.g", {d});
    l.ln1_b = f.zeros(pre + ".ln1.b", {d});
    l.attn = f.attention(pre + ".attn", d);
    l.ln2_g = f.ones(pre + ".ln2.g", {d});
    l.ln2_b = f.zeros(pre + ".ln2.b", {d});
    l.w1 = f.normal(pre + ".ffn.w1", {d, cfg.ffn_dim});
    l.b1 = f.zeros(pre + ".ffn.b1", {cfg.ffn_dim});
    l.w2 = f.zeros(pre + ".ffn.w2", {cfg.ffn_dim, d});
    l.b2 = f.zeros(pre + ".ffn.b2", {d});
    p.enc.push_back(std::move(l));
  }
  p.enc_ln_g = f.ones("enc.final.g", {d});
  p.enc_ln_b = f.zeros("enc.final.b", {d});

  for (size_t i = 0; i < cfg.dec_layers; ++i) {
    std::string pre = "dec." + std::to_string(i);
    DecLayerParams l;
    l.ln1_g = f.ones(pre + ".ln1.g", {d});
    l.ln1_b = f.zeros(pre + ".ln1.b", {d});
    l.self_attn = f.attention(pre + ".self", d);
    l.ln2_g = f.ones(pre + ".ln2.g", {d});
    l.ln2_b = f.zeros(pre + ".ln2.b", {d});
    l.cross_attn = f.attention(pre + ".cross", d);
    l.ln3_g = f.ones(pre + ".ln3.g", {d});
    l.ln3_b = f.zeros(pre + ".ln3.b", {d});
    l.w1 = f.normal(pre + ".ffn.w1", {d, cfg.ffn_dim});
    l.b1 = f.zeros(pre + ".ffn.b1", {cfg.ffn_dim});
    l.w2 = f.zeros(pre + ".ffn.w2", {cfg.ffn_dim, d});
    l.b2 = f.zeros(pre + ".ffn.b2", {d});
    p.dec.push_back(std::move(l));
  }
  p.dec_ln_g = f.ones("dec.final.g", {d});
  p.dec_ln_b = f.zeros("dec.final.b", {d});

  p.den_w1 = f.normal("den.w1", {d, d});
  p.den_b1 = f.zeros("den.b1", {d});
  p.den_w2 = f.normal("den.w2", {d, 3});
  p.den_b2 = f.zeros("den.b2", {3});
  return p;
}

void perturb_values(const std::vector<Tensor>& params, double scale,
                    uint64_t seed) {
  Rng rng(Rng::mix(seed ^ 0x6a697474ULL));  // "jitt"
  for (const Tensor& p : params) {
    Tensor t = p;
    for (double& v : t.value()) v += rng.normal(0.0, scale);
  }
}

ModelParams ModelParams::clone() const {
  ModelParams p;
  p.cfg = cfg;
  p.tok_emb = tok_emb.clone();
  p.pos_emb = pos_emb.clone();
  for (const auto& l : enc) {
    EncLayerParams c;
    c.ln1_g = l.ln1_g.clone();
    c.ln1_b = l.ln1_b.clone();
    c.attn = clone_attention(l.attn);
    c.ln2_g = l.ln2_g.clone();
    c.ln2_b = l.ln2_b.clone();
    c.w1 = l.w1.clone();
    c.b1 = l.b1.clone();
    c.w2 = l.w2.clone();
    c.b2 = l.b2.clone();
    p.enc.push_back(std::move(c));
  }
  p.enc_ln_g = enc_ln_g.clone();
  p.enc_ln_b = enc_ln_b.clone();
  for (const auto& l : dec) {
    DecLayerParams c;
    c.ln1_g = l.ln1_g.clone();
    c.ln1_b = l.ln1_b.clone();
    c.self_attn = clone_attention(l.self_attn);
    c.ln2_g = l.ln2_g.clone();
    c.ln2_b = l.ln2_b.clone();
    c.cross_attn = clone_attention(l.cross_attn);
    c.ln3_g = l.ln3_g.clone();
    c.ln3_b = l.ln3_b.clone();
    c.w1 = l.w1.clone();
    c.b1 = l.b1.clone();
    c.w2 = l.w2.clone();
    c.b2 = l.b2.clone();
    p.dec.push_back(std::move(c));
  }
  p.dec_ln_g = dec_ln_g.clone();
  p.dec_ln_b = dec_ln_b.clone();
  p.den_w1 = den_w1.clone();
  p.den_b1 = den_b1.clone();
  p.den_w2 = den_w2.clone();
  p.den_b2 = den_b2.clone();
  return p;
}

std::vector<Tensor> ModelParams::embedding_group() const { return {tok_emb, pos_emb}; }

std::vector<Tensor> ModelParams::encoder_side() const {
  std::vector<Tensor> out;
  for (const auto& l : enc) {
    out.insert(out.end(), {l.ln1_g, l.ln1_b});
    collect(l.attn, out);
    out.insert(out.end(), {l.ln2_g, l.ln2_b, l.w1, l.b1, l.w2, l.b2});
  }
  out.insert(out.end(), {enc_ln_g, enc_ln_b});
  out.insert(out.end(), {den_w1, den_b1, den_w2, den_b2});
  return out;
}

std::vector<Tensor> ModelParams::decoder_side() const {
  std::vector<Tensor> out;
  for (const auto& l : dec) {
    out.insert(out.end(), {l.ln1_g, l.ln1_b});
    collect(l.self_attn, out);
    out.insert(out.end(), {l.ln2_g, l.ln2_b});
    collect(l.cross_attn, out);
    out.insert(out.end(), {l.ln3_g, l.ln3_b, l.w1, l.b1, l.w2, l.b2});
  }
  out.insert(out.end(), {dec_ln_g, dec_ln_b});
  return out;
}

std::vector<Tensor> ModelParams::all() const {
  std::vector<Tensor> out = embedding_group();
  auto e = encoder_side();
  auto d = decoder_side();
  out.insert(out.end(), e.begin(), e.end());
  out.insert(out.end(), d.begin(), d.end());
  return out;
}

std::vector<std::pair<std::string, std::vector<Tensor>>> ModelParams::groups() const {
  std::vector<Tensor> enc_only = encoder_side();
  // split the denoise head off the encoder stack for the partition view
  std::vector<Tensor> den(enc_only.end() - 4, enc_only.end());
  enc_only.resize(enc_only.size() - 4);
  return {{"emb", embedding_group()},
          {"enc", enc_only},
          {"dec", decoder_side()},
          {"den", den}};
}

void ModelParams::zero_grad() {
  for (auto t : all()) t.zero_grad();
}

ModelParams drop_layers(const ModelParams& params, Side side, size_t k) {
  size_t have = side == Side::kEncoder ? params.enc.size() : params.dec.size();
  if (k > have)
    throw std::runtime_error("drop_layers: cannot drop " + std::to_string(k) + " of " +
                             std::to_string(have) + " layers");
  ModelParams out = params.clone();
  if (side == Side::kEncoder) {
    out.enc.resize(out.enc.size() - k);
    out.cfg.enc_layers -= k;
  } else {
    out.dec.resize(out.dec.size() - k);
    out.cfg.dec_layers -= k;
  }
  return out;
}

// ------------------------------------------------------------------ forward

namespace {

Tensor apply_dropout(const Tensor& x, const ModelConfig& cfg, const ForwardOptions& opts) {
  if (!opts.train || cfg.dropout == 0.0) return x;
  if (!opts.dropout_rng)
    throw std::runtime_error("model: train-mode forward needs a dropout rng");
  return dropout(x, cfg.dropout, *opts.dropout_rng);
}

Tensor activation_fn(const Tensor& x, Activation a) {
  return a == Activation::kRelu ? relu(x) : gelu(x);
}

// Token + position embeddings for a padded batch: [B, T, d].
Tensor embed_batch(const Batch& batch, const ModelParams& p, const ForwardOptions& opts) {
  if (batch.len > p.cfg.max_len)
    throw std::runtime_error("model: sequence length " + std::to_string(batch.len) +
                             " exceeds max_len " + std::to_string(p.cfg.max_len));
  std::vector<int32_t> pos(batch.rows * batch.len);
  for (size_t r = 0; r < batch.rows; ++r)
    for (size_t c = 0; c < batch.len; ++c) pos[r * batch.len + c] = static_cast<int32_t>(c);
  Shape ids_shape{batch.rows, batch.len};
  Tensor x = add(embedding(p.tok_emb, batch.ids, ids_shape),
                 embedding(p.pos_emb, pos, ids_shape));
  return apply_dropout(x, p.cfg, opts);
}

// Blocked-position mask [B, H, Tq, Tk]: 1 where the key is PAD, plus the
// upper triangle when causal.
Tensor attention_mask(const Batch& keys, size_t n_heads, size_t tq, bool causal) {
  size_t b = keys.rows, tk = keys.len;
  std::vector<double> m(b * n_heads * tq * tk, 0.0);
  for (size_t bi = 0; bi < b; ++bi)
    for (size_t h = 0; h < n_heads; ++h)
      for (size_t q = 0; q < tq; ++q)
        for (size_t kpos = 0; kpos < tk; ++kpos) {
          bool blocked = keys.is_pad(bi, kpos) || (causal && kpos > q);
          if (blocked) m[((bi * n_heads + h) * tq + q) * tk + kpos] = 1.0;
        }
  return Tensor::constant({b, n_heads, tq, tk}, std::move(m));
}

Tensor multi_head_attention(const Tensor& q_in, const Tensor& kv_in, const Tensor& mask,
                            const AttentionParams& p, size_t n_heads) {
  size_t b = q_in.shape()[0], tq = q_in.shape()[1], d = q_in.shape()[2];
  size_t tk = kv_in.shape()[1];
  size_t dh = d / n_heads;

  auto heads = [&](const Tensor& proj, size_t t) {
    return transpose(reshape(proj, {b, t, n_heads, dh}), 1, 2);  // [B, H, T, dh]
  };
  Tensor qh = heads(add(matmul(q_in, p.wq), p.bq), tq);
  Tensor kh = heads(matmul(kv_in, p.wk), tk);
  Tensor vh = heads(add(matmul(kv_in, p.wv), p.bv), tk);

  Tensor scores = scale(matmul(qh, transpose(kh, 2, 3)), 1.0 / std::sqrt(double(dh)));
  scores = masked_fill(scores, mask, -1e9);
  Tensor attn = softmax(scores, 3);
  Tensor ctx = reshape(transpose(matmul(attn, vh), 1, 2), {b, tq, d});
  return add(matmul(ctx, p.wo), p.bo);
}

struct FfnOut {
  Tensor out;
  Tensor act;  // post-activation, pre-projection
};

FfnOut feed_forward(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2,
                    const Tensor& b2, Activation act) {
  Tensor a = activation_fn(add(matmul(x, w1), b1), act);
  return {add(matmul(a, w2), b2), a};
}

}  // namespace

EncoderOutput encode(const Batch& batch, const ModelParams& params,
                     const ForwardOptions& opts) {
  const ModelConfig& cfg = params.cfg;
  Tensor x = embed_batch(batch, params, opts);
  Tensor self_mask = attention_mask(batch, cfg.n_heads, batch.len, /*causal=*/false);

  EncoderOutput out;
  for (const auto& l : params.enc) {
    Tensor h = layer_norm(x, l.ln1_g, l.ln1_b);
    Tensor attn = multi_head_attention(h, h, self_mask, l.attn, cfg.n_heads);
    x = add(x, apply_dropout(attn, cfg, opts));

    Tensor h2 = layer_norm(x, l.ln2_g, l.ln2_b);
    FfnOut ffn = feed_forward(h2, l.w1, l.b1, l.w2, l.b2, cfg.activation);
    if (opts.instrument_ffn) out.ffn_acts.push_back(ffn.act);
    x = add(x, apply_dropout(ffn.out, cfg, opts));
  }
  out.hidden = layer_norm(x, params.enc_ln_g, params.enc_ln_b);
  out.batch = batch;
  return out;
}

DecoderShift shift_for_decoder(const Batch& x) {
  if (x.len < 2) throw std::runtime_error("decoder: target batch too short");
  DecoderShift s;
  s.input.rows = x.rows;
  s.input.len = x.len - 1;
  s.input.ids.assign(s.input.rows * s.input.len, Vocab::kPad);
  s.input.pad_mask.assign(s.input.rows * s.input.len, 1);
  s.targets.assign(s.input.rows * s.input.len, Vocab::kPad);
  s.mask.assign(s.input.rows * s.input.len, 0);
  for (size_t r = 0; r < x.rows; ++r) {
    size_t len = x.row_length(r);  // includes BOS and EOS
    for (size_t t = 0; t + 1 < len; ++t) {
      s.input.ids[r * s.input.len + t] = x.at(r, t);
      s.input.pad_mask[r * s.input.len + t] = 0;
      s.targets[r * s.input.len + t] = x.at(r, t + 1);
      s.mask[r * s.input.len + t] = 1;
    }
  }
  return s;
}

namespace {

struct RawDecoderOut {
  Tensor hidden;
  Tensor logits;
  std::vector<Tensor> ffn_acts;
};

RawDecoderOut decoder_forward(const EncoderOutput& enc, const Batch& dec_input,
                              const ModelParams& params, const ForwardOptions& opts) {
  const ModelConfig& cfg = params.cfg;
  Tensor x = embed_batch(dec_input, params, opts);
  Tensor self_mask = attention_mask(dec_input, cfg.n_heads, dec_input.len, /*causal=*/true);
  Tensor cross_mask = attention_mask(enc.batch, cfg.n_heads, dec_input.len, /*causal=*/false);

  RawDecoderOut out;
  for (const auto& l : params.dec) {
    Tensor h = layer_norm(x, l.ln1_g, l.ln1_b);
    Tensor attn = multi_head_attention(h, h, self_mask, l.self_attn, cfg.n_heads);
    x = add(x, apply_dropout(attn, cfg, opts));

    Tensor h2 = layer_norm(x, l.ln2_g, l.ln2_b);
    Tensor cross = multi_head_attention(h2, enc.hidden, cross_mask, l.cross_attn, cfg.n_heads);
    x = add(x, apply_dropout(cross, cfg, opts));

    Tensor h3 = layer_norm(x, l.ln3_g, l.ln3_b);
    FfnOut ffn = feed_forward(h3, l.w1, l.b1, l.w2, l.b2, cfg.activation);
    if (opts.instrument_ffn) out.ffn_acts.push_back(ffn.act);
    x = add(x, apply_dropout(ffn.out, cfg, opts));
  }
  out.hidden = layer_norm(x, params.dec_ln_g, params.dec_ln_b);
  // tied output projection
  out.logits = matmul(out.hidden, transpose(params.tok_emb, 0, 1));
  return out;
}

}  // namespace

DecoderOutput decode_reconstruct(const EncoderOutput& enc, const Batch& target,
                                 const ModelParams& params, const ForwardOptions& opts) {
  DecoderShift s = shift_for_decoder(target);
  RawDecoderOut raw = decoder_forward(enc, s.input, params, opts);
  DecoderOutput out;
  out.logits = raw.logits;
  out.hidden = raw.hidden;
  out.ffn_acts = std::move(raw.ffn_acts);
  out.targets = std::move(s.targets);
  out.target_mask = std::move(s.mask);
  return out;
}

Tensor denoise_logits(const EncoderOutput& enc, const ModelParams& params,
                      const ForwardOptions& opts) {
  Tensor h = relu(add(matmul(enc.hidden, params.den_w1), params.den_b1));
  h = apply_dropout(h, params.cfg, opts);
  return add(matmul(h, params.den_w2), params.den_b2);
}

Tensor mean_pool_embedding(const EncoderOutput& enc) {
  const Batch& b = enc.batch;
  std::vector<uint8_t> include(b.rows * b.len, 0);
  for (size_t r = 0; r < b.rows; ++r)
    for (size_t c = 0; c < b.len; ++c) {
      TokenId t = b.at(r, c);
      bool content = !b.is_pad(r, c) && t != Vocab::kBos && t != Vocab::kEos;
      include[r * b.len + c] = content ? 1 : 0;
    }
  return masked_mean_rows(enc.hidden, include);
}

const std::vector<std::string>& prompt_template_words(int template_id) {
  static const std::vector<std::vector<std::string>> kTemplates = {
      {"[MASK]", "means", "[X]", "."},
      {"[MASK]", "represents", "[X]", "."},
      {"[MASK]", "means", "the", "sentence", ":", "\"", "[X]", "\"", "."},
      {"[MASK]", "represents", "the", "sentence", ":", "\"", "[X]", "\"", "."},
      {"[MASK]", "is", "the", "meaning", "of", "the", "sentence", ":", "\"", "[X]", "\"", "."},
      {"[MASK]", "is", "the", "representation", "of", "the", "sentence", ":", "\"", "[X]",
       "\"", "."},
  };
  if (template_id < 1 || template_id > 6)
    throw std::runtime_error("model: prompt template id must be in 1..6");
  return kTemplates[static_cast<size_t>(template_id - 1)];
}

TemplateFill fill_template(const TokenSequence& seq, int template_id, const Vocab& vocab,
                           size_t max_len) {
  const auto& words = prompt_template_words(template_id);

  TokenSequence content;
  for (TokenId t : seq)
    if (t != Vocab::kBos && t != Vocab::kEos && t != Vocab::kPad) content.push_back(t);

  size_t overhead = 2 + (words.size() - 1);  // BOS/EOS + template words minus the slot
  if (max_len <= overhead)
    throw std::runtime_error("model: max_len too small for the prompt template");
  size_t budget = max_len - overhead;

  TemplateFill out;
  out.seq.push_back(Vocab::kBos);
  out.mask_slot = 0;
  for (const auto& w : words) {
    if (w == "[MASK]") {
      out.mask_slot = out.seq.size();
      out.seq.push_back(Vocab::kMask);
    } else if (w == "[X]") {
      size_t take = std::min(content.size(), budget);
      out.truncated = take < content.size();
      out.seq.insert(out.seq.end(), content.begin(), content.begin() + take);
    } else {
      out.seq.push_back(vocab.id(w));
    }
  }
  out.seq.push_back(Vocab::kEos);
  return out;
}

Tensor sentence_embedding(const std::vector<TokenSequence>& views, const EncoderOutput& enc,
                          const ModelParams& params, const Vocab& vocab,
                          const ForwardOptions& opts) {
  if (params.cfg.embedding_mode == EmbeddingMode::kMeanPool) return mean_pool_embedding(enc);

  std::vector<TokenSequence> wrapped;
  std::vector<size_t> slots;
  for (const auto& v : views) {
    TemplateFill f = fill_template(v, params.cfg.prompt_template, vocab, params.cfg.max_len);
    slots.push_back(f.mask_slot);
    wrapped.push_back(std::move(f.seq));
  }
  EncoderOutput we = encode(pad_batch(wrapped), params, opts);
  return select_time(we.hidden, slots);
}

ClassifierHead ClassifierHead::init(size_t d_model, size_t classes, uint64_t seed) {
  Rng rng = Rng::for_stream(seed, 0x636c73 /* cls */);
  std::vector<double> w(d_model * classes);
  double std = glorot_std({d_model, classes});
  for (auto& v : w) v = rng.normal(0.0, std);
  ClassifierHead h;
  h.w = Tensor::param("cls.w", {d_model, classes}, std::move(w));
  h.b = Tensor::param("cls.b", {classes}, std::vector<double>(classes, 0.0));
  return h;
}

Tensor classify_last_decoder_token(const Batch& batch, const ModelParams& params,
                                   const ClassifierHead& head, const ForwardOptions& opts) {
  EncoderOutput enc = encode(batch, params, opts);
  RawDecoderOut dec = decoder_forward(enc, batch, params, opts);
  std::vector<size_t> last(batch.rows);
  for (size_t r = 0; r < batch.rows; ++r) {
    size_t len = batch.row_length(r);
    if (len == 0) throw std::runtime_error("classify: empty row");
    last[r] = len - 1;
  }
  Tensor pooled = select_time(dec.hidden, last);
  return add(matmul(pooled, head.w), head.b);
}

TokenSequence greedy_decode(const TokenSequence& input, const ModelParams& params,
                            size_t max_len) {
  if (max_len < 2) throw std::runtime_error("greedy_decode: max_len too small");
  EncoderOutput enc = encode(pad_batch({input}), params, ForwardOptions{});

  TokenSequence gen{Vocab::kBos};
  while (gen.size() < max_len) {
    RawDecoderOut dec = decoder_forward(enc, pad_batch({gen}), params, ForwardOptions{});
    size_t t = gen.size() - 1;
    size_t v = params.cfg.vocab_size;
    const double* row = dec.logits.value().data() + t * v;
    size_t best = 0;
    for (size_t i = 1; i < v; ++i)
      if (row[i] > row[best]) best = i;
    gen.push_back(static_cast<TokenId>(best));
    if (best == Vocab::kEos) break;
  }
  if (gen.back() != Vocab::kEos) {
    if (gen.size() < max_len)
      gen.push_back(Vocab::kEos);
    else
      gen.back() = Vocab::kEos;  // keep the result within max_len
  }
  return gen;
}

}  // namespace s2slab
