#include "s2slab/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace s2slab {

namespace {

std::string fmt_f64(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (steps < 1) throw std::runtime_error("train: steps must be at least 1");
  if (batch_size < 1) throw std::runtime_error("train: batch_size must be at least 1");
  if (warmup_steps > steps)
    throw std::runtime_error("train: warmup_steps must not exceed steps");
  if (lr <= 0.0) throw std::runtime_error("train: lr must be positive");
  if (checkpoint_every < 1)
    throw std::runtime_error("train: checkpoint_every must be at least 1");
  noise.validate();
  objective.validate();
  // model config is validated after vocab_size resolution
}

TrainConfig TrainConfig::from_config(const Config& c) {
  TrainConfig t;
  t.steps = static_cast<size_t>(c.i64("train.steps", static_cast<int64_t>(t.steps)));
  t.batch_size =
      static_cast<size_t>(c.i64("train.batch_size", static_cast<int64_t>(t.batch_size)));
  t.lr = c.f64("train.lr", t.lr);
  t.warmup_steps = static_cast<size_t>(
      c.i64("train.warmup_steps", static_cast<int64_t>(t.warmup_steps)));
  t.seed = static_cast<uint64_t>(c.i64("train.seed", static_cast<int64_t>(t.seed)));
  t.checkpoint_every = static_cast<size_t>(
      c.i64("train.checkpoint_every", static_cast<int64_t>(t.checkpoint_every)));
  t.vocab_max_size = static_cast<size_t>(
      c.i64("vocab.max_size", static_cast<int64_t>(t.vocab_max_size)));

  t.noise.mask_ratio = c.f64("noise.mask_ratio", t.noise.mask_ratio);
  t.noise.span_mean = c.f64("noise.span_mean", t.noise.span_mean);
  t.noise.trigram_rate = c.f64("noise.trigram_rate", t.noise.trigram_rate);
  t.noise.replace_rate = c.f64("noise.replace_rate", t.noise.replace_rate);
  t.noise.mode =
      NoiseConfig::parse_mode(c.str("noise.mode", NoiseConfig::mode_name(t.noise.mode)));

  if (c.has("objective.enabled"))
    t.objective.set_enabled_terms(c.require("objective.enabled"));
  t.objective.tau = c.f64("objective.tau", t.objective.tau);
  t.objective.lambda_de = c.f64("objective.lambda_de", t.objective.lambda_de);
  t.objective.lambda_cl = c.f64("objective.lambda_cl", t.objective.lambda_cl);
  t.objective.symmetric_cl = c.flag("objective.symmetric_cl", t.objective.symmetric_cl);

  t.model.vocab_size = static_cast<size_t>(
      c.i64("model.vocab_size", static_cast<int64_t>(t.model.vocab_size)));
  t.model.d_model =
      static_cast<size_t>(c.i64("model.d_model", static_cast<int64_t>(t.model.d_model)));
  t.model.n_heads =
      static_cast<size_t>(c.i64("model.n_heads", static_cast<int64_t>(t.model.n_heads)));
  t.model.enc_layers = static_cast<size_t>(
      c.i64("model.enc_layers", static_cast<int64_t>(t.model.enc_layers)));
  t.model.dec_layers = static_cast<size_t>(
      c.i64("model.dec_layers", static_cast<int64_t>(t.model.dec_layers)));
  t.model.ffn_dim =
      static_cast<size_t>(c.i64("model.ffn_dim", static_cast<int64_t>(t.model.ffn_dim)));
  t.model.max_len =
      static_cast<size_t>(c.i64("model.max_len", static_cast<int64_t>(t.model.max_len)));
  t.model.dropout = c.f64("model.dropout", t.model.dropout);
  t.model.activation = ModelConfig::parse_activation(
      c.str("model.activation", ModelConfig::activation_name(t.model.activation)));
  t.model.embedding_mode = ModelConfig::parse_embedding_mode(c.str(
      "model.embedding_mode", ModelConfig::embedding_mode_name(t.model.embedding_mode)));
  t.model.prompt_template = static_cast<int>(
      c.i64("model.prompt_template", t.model.prompt_template));
  return t;
}

std::map<std::string, std::string> TrainConfig::echo() const {
  std::map<std::string, std::string> e = model.echo();
  e["train.steps"] = std::to_string(steps);
  e["train.batch_size"] = std::to_string(batch_size);
  e["train.lr"] = fmt_f64(lr);
  e["train.warmup_steps"] = std::to_string(warmup_steps);
  e["train.seed"] = std::to_string(seed);
  e["train.checkpoint_every"] = std::to_string(checkpoint_every);
  e["vocab.max_size"] = std::to_string(vocab_max_size);
  e["noise.mask_ratio"] = fmt_f64(noise.mask_ratio);
  e["noise.span_mean"] = fmt_f64(noise.span_mean);
  e["noise.trigram_rate"] = fmt_f64(noise.trigram_rate);
  e["noise.replace_rate"] = fmt_f64(noise.replace_rate);
  e["noise.mode"] = NoiseConfig::mode_name(noise.mode);
  e["objective.enabled"] = objective.enabled_terms();
  e["objective.tau"] = fmt_f64(objective.tau);
  e["objective.lambda_de"] = fmt_f64(objective.lambda_de);
  e["objective.lambda_cl"] = fmt_f64(objective.lambda_cl);
  e["objective.symmetric_cl"] = objective.symmetric_cl ? "true" : "false";
  return e;
}

std::vector<std::string> TrainConfig::known_keys() {
  TrainConfig defaults;
  std::vector<std::string> keys;
  for (const auto& [k, v] : defaults.echo()) keys.push_back(k);
  return keys;
}

AdamState AdamState::init(const std::vector<Tensor>& params) {
  AdamState s;
  for (const auto& p : params) {
    size_t n = p.numel();
    s.m.push_back(Tensor::param("opt.m." + p.name(), p.shape(), std::vector<double>(n, 0.0)));
    s.v.push_back(Tensor::param("opt.v." + p.name(), p.shape(), std::vector<double>(n, 0.0)));
  }
  return s;
}

std::vector<Tensor> AdamState::all() const {
  std::vector<Tensor> out = m;
  out.insert(out.end(), v.begin(), v.end());
  return out;
}

void adam_step(const std::vector<Tensor>& params, AdamState& state, double lr) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw std::invalid_argument("adam_step: state does not match the parameter list");

  size_t t = state.step + 1;
  double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
  double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));

  for (size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    auto& w = p.value();
    const auto& g = p.grad();
    auto& m = state.m[i].value();
    auto& v = state.v[i].value();
    if (m.size() != w.size())
      throw std::invalid_argument("adam_step: moment shape mismatch for " + p.name());
    for (size_t k = 0; k < w.size(); ++k) {
      double gk = g[k];
      if (!std::isfinite(gk))
        throw NumericalAbort("adam_step: non-finite gradient in parameter '" + p.name() +
                             "'");
      m[k] = kBeta1 * m[k] + (1.0 - kBeta1) * gk;
      v[k] = kBeta2 * v[k] + (1.0 - kBeta2) * gk * gk;
      w[k] -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + kEps);
    }
  }
  state.step = t;
}

double lr_at(const TrainConfig& cfg, size_t step) {
  if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps)
    return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  return cfg.lr;
}

std::vector<size_t> epoch_permutation(uint64_t seed, size_t epoch, size_t n) {
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = Rng::for_stream(seed, 0x65706f63 /* epoc */, epoch);
  rng.shuffle(order);
  return order;
}

StepData corrupt_step_batch(const std::vector<TokenSequence>& sentences,
                            const std::vector<size_t>& picks, const NoiseConfig& noise,
                            const Vocab& vocab, uint64_t run_seed, size_t step) {
  if (picks.empty()) throw std::invalid_argument("corrupt_step_batch: empty batch");
  StepData d;
  std::vector<TokenSequence> xs;
  std::vector<NoiseLabels> labels;
  for (size_t i = 0; i < picks.size(); ++i) {
    if (picks[i] >= sentences.size())
      throw std::invalid_argument("corrupt_step_batch: pick out of range");
    uint64_t es = example_noise_seed(run_seed, step, i);
    CorruptionRecord rec = corrupt_pair(sentences[picks[i]], noise, vocab, es);
    xs.push_back(std::move(rec.original));
    d.seq_a.push_back(std::move(rec.view_a));
    d.seq_b.push_back(std::move(rec.view_b));
    labels.push_back(std::move(rec.labels));
    for (auto& w : rec.warnings) d.warnings.push_back(std::move(w));
  }
  d.x = pad_batch(xs);
  d.view_a = pad_batch(d.seq_a);
  d.view_b = pad_batch(d.seq_b);

  d.cls.assign(d.view_b.rows * d.view_b.len, 0);
  d.loss_mask.assign(d.view_b.rows * d.view_b.len, 0);
  for (size_t r = 0; r < d.view_b.rows; ++r) {
    const NoiseLabels& l = labels[r];
    for (size_t t = 0; t < l.cls.size(); ++t) {
      d.cls[r * d.view_b.len + t] = l.cls[t];
      d.loss_mask[r * d.view_b.len + t] = l.loss_mask[t];
    }
  }
  return d;
}

StepLosses compute_losses(const StepData& data, const ModelParams& params,
                          const Vocab& vocab, const ObjectiveConfig& objective,
                          const ForwardOptions& opts) {
  StepLosses out;
  bool need_b = objective.use_nll_star || objective.use_de || objective.use_cl;
  bool need_a = objective.use_nll || objective.use_cl;

  std::optional<EncoderOutput> enc_b, enc_a;
  std::optional<Tensor> nll_star, nll, de, cl;

  if (need_b) enc_b = encode(data.view_b, params, opts);
  if (objective.use_nll_star) {
    DecoderOutput dec = decode_reconstruct(*enc_b, data.x, params, opts);
    nll_star = loss_reconstruction(dec.logits, dec.targets, dec.target_mask);
  }
  if (objective.use_de) {
    Tensor logits = denoise_logits(*enc_b, params, opts);
    de = loss_denoise(logits, data.cls, data.loss_mask, &out.warnings);
  }
  if (need_a) enc_a = encode(data.view_a, params, opts);
  if (objective.use_nll) {
    DecoderOutput dec = decode_reconstruct(*enc_a, data.x, params, opts);
    nll = loss_reconstruction(dec.logits, dec.targets, dec.target_mask);
  }
  if (objective.use_cl) {
    Tensor h = sentence_embedding(data.seq_a, *enc_a, params, vocab, opts);
    Tensor h_plus = sentence_embedding(data.seq_b, *enc_b, params, vocab, opts);
    cl = loss_contrastive(h, h_plus, objective.tau, objective.symmetric_cl);
  }
  out.terms = combine_losses(objective, std::move(nll_star), std::move(nll), std::move(de),
                             std::move(cl));
  return out;
}

PretrainOutcome pretrain(const TrainConfig& cfg,
                         const std::vector<std::string>& corpus_lines,
                         const std::string& out_dir, const std::string& resume_stem) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);

  Vocab vocab = Vocab::build_from_lines(corpus_lines, cfg.vocab_max_size);
  TrainConfig rc = cfg;
  if (rc.model.vocab_size == 0) rc.model.vocab_size = vocab.size();
  if (rc.model.vocab_size != vocab.size())
    throw std::runtime_error("pretrain: model.vocab_size " +
                             std::to_string(rc.model.vocab_size) +
                             " does not match the corpus vocabulary (" +
                             std::to_string(vocab.size()) + ")");
  rc.model.validate();

  std::vector<TokenSequence> sentences = encode_lines(corpus_lines, vocab, rc.model.max_len);
  if (sentences.empty()) throw std::runtime_error("pretrain: empty corpus");

  ModelParams params = ModelParams::init(rc.model, rc.seed);
  AdamState adam = AdamState::init(params.all());
  size_t start = 0;

  std::map<std::string, std::string> echo = rc.echo();

  if (!resume_stem.empty()) {
    Checkpoint ck = load_checkpoint(resume_stem);
    for (const auto& [k, v] : rc.model.echo()) {
      auto it = ck.config.find(k);
      if (it == ck.config.end() || it->second != v)
        throw std::runtime_error("pretrain: checkpoint disagrees with config on " + k);
    }
    restore_tensors(ck, params.all());
    restore_tensors(ck, adam.all());
    start = std::stoull(ck.config.at("train.step"));
    adam.step = start;
    if (start >= rc.steps)
      throw std::runtime_error("pretrain: checkpoint step " + std::to_string(start) +
                               " is not before configured steps " +
                               std::to_string(rc.steps));
  }

  {
    std::ofstream rcfg(out_dir + "/resolved.cfg", std::ios::trunc);
    for (const auto& [k, v] : echo) rcfg << k << "=" << v << "\n";
  }

  std::string metrics_path = out_dir + "/metrics.tsv";
  std::ofstream metrics(metrics_path, std::ios::trunc);
  if (!metrics) throw std::runtime_error("pretrain: cannot write " + metrics_path);
  metrics << "step\tnll-star\tnll\tde\tcl\ttotal\n";

  std::vector<Tensor> params_all = params.all();
  const size_t n = sentences.size();
  std::vector<size_t> perm;
  size_t perm_epoch = static_cast<size_t>(-1);
  std::string last_checkpoint;
  LossTerms last_terms;

  auto save_at = [&](size_t stepno, const std::string& stem) {
    std::map<std::string, std::string> meta = echo;
    meta["train.step"] = std::to_string(stepno);
    std::vector<Tensor> ts = params_all;
    std::vector<Tensor> opt = adam.all();
    ts.insert(ts.end(), opt.begin(), opt.end());
    save_checkpoint(stem, meta, ts);
    last_checkpoint = stem;
  };

  for (size_t stepno = start + 1; stepno <= rc.steps; ++stepno) {
    std::vector<size_t> picks(rc.batch_size);
    for (size_t i = 0; i < rc.batch_size; ++i) {
      size_t pos = (stepno - 1) * rc.batch_size + i;
      size_t epoch = pos / n;
      if (epoch != perm_epoch) {
        perm = epoch_permutation(rc.seed, epoch, n);
        perm_epoch = epoch;
      }
      picks[i] = perm[pos % n];
    }

    StepData data = corrupt_step_batch(sentences, picks, rc.noise, vocab, rc.seed, stepno);

    Rng drop_rng = Rng::for_stream(rc.seed, 0x64726f70 /* drop */, stepno);
    ForwardOptions opts;
    opts.train = rc.model.dropout > 0.0;
    opts.dropout_rng = &drop_rng;

    params.zero_grad();
    StepLosses sl = compute_losses(data, params, vocab, rc.objective, opts);
    for (const auto& w : data.warnings) std::cerr << "step " << stepno << ": " << w << "\n";
    for (const auto& w : sl.warnings) std::cerr << "step " << stepno << ": " << w << "\n";

    double total = sl.terms.total.item();
    if (!std::isfinite(total))
      throw NumericalAbort(
          "pretrain: non-finite total loss at step " + std::to_string(stepno) +
          (last_checkpoint.empty() ? std::string(" (no checkpoint written yet)")
                                   : "; last good checkpoint: " + last_checkpoint));
    backward(sl.terms.total);
    adam_step(params_all, adam, lr_at(rc, stepno));

    metrics << stepno << '\t' << metric_cell(sl.terms.nll_star) << '\t'
            << metric_cell(sl.terms.nll) << '\t' << metric_cell(sl.terms.de) << '\t'
            << metric_cell(sl.terms.cl) << '\t' << fmt_f64(total) << '\n';

    if (stepno % rc.checkpoint_every == 0 && stepno != rc.steps)
      save_at(stepno, out_dir + "/ckpt-" + std::to_string(stepno));
    last_terms = sl.terms;
  }

  save_at(rc.steps, out_dir + "/ckpt-final");
  metrics.close();
  if (!metrics) throw std::runtime_error("pretrain: failed writing " + metrics_path);

  PretrainOutcome out;
  out.params = std::move(params);
  out.vocab = std::move(vocab);
  out.steps_run = rc.steps - start;
  out.metrics_path = metrics_path;
  out.final_checkpoint = out_dir + "/ckpt-final";
  if (last_terms.nll_star) out.final_nll_star = last_terms.nll_star->item();
  if (last_terms.nll) out.final_nll = last_terms.nll->item();
  if (last_terms.de) out.final_de = last_terms.de->item();
  if (last_terms.cl) out.final_cl = last_terms.cl->item();
  out.final_total = last_terms.total.item();
  return out;
}

// ----------------------------------------------------------------- eval

namespace {

CorruptionRecord eval_corruption(const TokenSequence& s, const NoiseConfig& noise,
                                 const Vocab& vocab, uint64_t eval_seed, size_t i) {
  return corrupt_pair(s, noise, vocab, example_noise_seed(eval_seed, 0, i));
}

}  // namespace

double denoise_accuracy(const ModelParams& params, const std::vector<TokenSequence>& sentences,
                        const NoiseConfig& noise, const Vocab& vocab, uint64_t eval_seed) {
  size_t correct = 0, total = 0;
  for (size_t i = 0; i < sentences.size(); ++i) {
    CorruptionRecord rec = eval_corruption(sentences[i], noise, vocab, eval_seed, i);
    EncoderOutput enc = encode(pad_batch({rec.view_b}), params);
    Tensor logits = denoise_logits(enc, params);  // [1, T, 3]
    for (size_t t = 0; t < rec.view_b.size(); ++t) {
      if (!rec.labels.loss_mask[t]) continue;
      const double* row = logits.value().data() + t * 3;
      int best = 0;
      if (row[1] > row[best]) best = 1;
      if (row[2] > row[best]) best = 2;
      correct += best == rec.labels.cls[t];
      ++total;
    }
  }
  if (total == 0) throw std::runtime_error("denoise_accuracy: no eligible positions");
  return static_cast<double>(correct) / static_cast<double>(total);
}

double denoise_majority_rate(const std::vector<TokenSequence>& sentences,
                             const NoiseConfig& noise, const Vocab& vocab,
                             uint64_t eval_seed) {
  size_t counts[3] = {0, 0, 0};
  for (size_t i = 0; i < sentences.size(); ++i) {
    CorruptionRecord rec = eval_corruption(sentences[i], noise, vocab, eval_seed, i);
    for (size_t t = 0; t < rec.view_b.size(); ++t)
      if (rec.labels.loss_mask[t]) ++counts[rec.labels.cls[t]];
  }
  size_t total = counts[0] + counts[1] + counts[2];
  if (total == 0) throw std::runtime_error("denoise_majority_rate: no eligible positions");
  return static_cast<double>(std::max({counts[0], counts[1], counts[2]})) /
         static_cast<double>(total);
}

double mean_pair_cosine(const ModelParams& params, const std::vector<TokenSequence>& sentences,
                        const NoiseConfig& noise, const Vocab& vocab, uint64_t eval_seed) {
  if (sentences.empty()) throw std::runtime_error("mean_pair_cosine: no sentences");
  double sum = 0.0;
  for (size_t i = 0; i < sentences.size(); ++i) {
    CorruptionRecord rec = eval_corruption(sentences[i], noise, vocab, eval_seed, i);
    EncoderOutput ea = encode(pad_batch({rec.view_a}), params);
    EncoderOutput eb = encode(pad_batch({rec.view_b}), params);
    Tensor ha = sentence_embedding({rec.view_a}, ea, params, vocab, ForwardOptions{});
    Tensor hb = sentence_embedding({rec.view_b}, eb, params, vocab, ForwardOptions{});
    double dot = 0.0, na = 0.0, nb = 0.0;
    size_t d = ha.shape()[1];
    for (size_t k = 0; k < d; ++k) {
      dot += ha.value()[k] * hb.value()[k];
      na += ha.value()[k] * ha.value()[k];
      nb += hb.value()[k] * hb.value()[k];
    }
    sum += dot / (std::sqrt(na) * std::sqrt(nb) + 1e-12);
  }
  return sum / static_cast<double>(sentences.size());
}

}  // namespace s2slab
