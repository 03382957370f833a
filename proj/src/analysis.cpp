#include "s2slab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "s2slab/checkpoint.hpp"

namespace s2slab {

namespace {

std::vector<TokenId> content_pool(const Vocab& vocab) {
  std::vector<TokenId> pool;
  for (TokenId id = Vocab::num_specials(); id < static_cast<TokenId>(vocab.size()); ++id)
    pool.push_back(id);
  return pool;
}

TokenSequence wrap(const std::vector<TokenId>& content) {
  TokenSequence s;
  s.reserve(content.size() + 2);
  s.push_back(Vocab::kBos);
  s.insert(s.end(), content.begin(), content.end());
  s.push_back(Vocab::kEos);
  return s;
}

TokenId random_of(const std::vector<TokenId>& pool, Rng& rng) {
  return pool[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(pool.size()) - 1))];
}

void zero_grads(const std::vector<Tensor>& params) {
  for (Tensor p : params) std::fill(p.grad().begin(), p.grad().end(), 0.0);
}

Tensor mlp_param(const std::string& name, size_t rows, size_t cols, Rng& rng) {
  double std = std::sqrt(2.0 / static_cast<double>(rows + cols));
  std::vector<double> data(rows * cols);
  for (double& v : data) v = rng.normal(0.0, std);
  return Tensor::param(name, {rows, cols}, std::move(data));
}

size_t argmax_row(const double* row, size_t n) {
  size_t best = 0;
  for (size_t j = 1; j < n; ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

}  // namespace

// ---------------------------------------------------------------- probes

ProbeTask ProbeTask::make(const std::string& name) {
  ProbeTask t;
  t.name = name;
  if (name == "SeLen" || name == "BShif") {
    t.classes = 2;
  } else if (name == "WC") {
    t.classes = 4;
  } else {
    throw std::invalid_argument("unknown probe task: " + name +
                                " (expected SeLen, WC or BShif)");
  }
  return t;
}

ProbeData generate_probe_data(const ProbeTask& task, const Vocab& vocab, size_t max_len,
                              uint64_t seed) {
  if (task.classes < 2) throw std::invalid_argument("probe task needs at least 2 classes");
  if (task.train_size == 0 || task.dev_size == 0)
    throw std::invalid_argument("probe splits must be non-empty");
  std::vector<TokenId> pool = content_pool(vocab);
  if (pool.size() < 8)
    throw std::runtime_error("probe generation: vocabulary too small (" +
                             std::to_string(pool.size()) + " content tokens)");
  if (max_len < 8) throw std::runtime_error("probe generation: max_len too small");
  size_t budget = max_len - 2;  // room for BOS/EOS

  uint64_t task_tag = task.name == "SeLen" ? 1 : task.name == "WC" ? 2 : 3;
  Rng rng = Rng::for_stream(seed, 0x70726f62 /* prob */, task_tag);

  // per-task example generators; each returns the content tokens for a label
  std::function<std::vector<TokenId>(int32_t)> gen;
  if (task.name == "SeLen") {
    // adjacent buckets, split at 8/9 like a quantile cut: the probe must
    // resolve the boundary, not a gross scale difference
    size_t long_hi = std::min<size_t>(14, budget);
    if (long_hi < 10)
      throw std::runtime_error("probe generation: max_len too small for SeLen buckets");
    gen = [&, long_hi](int32_t label) {
      size_t len = label == 0 ? static_cast<size_t>(rng.uniform_int(3, 8))
                              : static_cast<size_t>(rng.uniform_int(9, long_hi));
      std::vector<TokenId> c(len);
      for (auto& t : c) t = random_of(pool, rng);
      return c;
    };
  } else if (task.name == "WC") {
    if (pool.size() <= task.classes)
      throw std::runtime_error("probe generation: not enough vocabulary for WC targets");
    size_t hi = std::min<size_t>(10, budget);
    if (hi < 5) throw std::runtime_error("probe generation: max_len too small for WC");
    std::vector<TokenId> targets(pool.begin(), pool.begin() + task.classes);
    std::vector<TokenId> fillers(pool.begin() + task.classes, pool.end());
    gen = [&, hi, targets, fillers](int32_t label) {
      size_t len = static_cast<size_t>(rng.uniform_int(5, hi));
      std::vector<TokenId> c;
      c.push_back(targets[static_cast<size_t>(label)]);
      for (size_t i = 1; i < len; ++i) c.push_back(random_of(fillers, rng));
      rng.shuffle(c);
      return c;
    };
  } else if (task.name == "BShif") {
    size_t hi = std::min({static_cast<size_t>(12), budget, pool.size()});
    if (hi < 6)
      throw std::runtime_error("probe generation: vocabulary or max_len too small for BShif");
    gen = [&, hi](int32_t label) {
      size_t len = static_cast<size_t>(rng.uniform_int(6, hi));
      std::vector<TokenId> shuffled = pool;
      rng.shuffle(shuffled);
      std::vector<TokenId> c(shuffled.begin(), shuffled.begin() + len);
      std::sort(c.begin(), c.end());
      if (label == 1) {
        size_t j = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(len) - 2));
        std::swap(c[j], c[j + 1]);
      }
      return c;
    };
  } else {
    throw std::invalid_argument("unknown probe task: " + task.name);
  }

  ProbeData data;
  data.classes = task.classes;
  std::set<TokenSequence> seen;
  auto fill = [&](std::vector<ProbeExample>& split, size_t size) {
    for (size_t i = 0; i < size; ++i) {
      int32_t label = static_cast<int32_t>(i % task.classes);
      bool placed = false;
      for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
        TokenSequence seq = wrap(gen(label));
        if (seen.insert(seq).second) {
          split.push_back({std::move(seq), label});
          placed = true;
        }
      }
      if (!placed)
        throw std::runtime_error("probe generation degenerate: cannot produce " +
                                 std::to_string(size) + " distinct " + task.name +
                                 " examples");
    }
  };
  fill(data.train, task.train_size);
  fill(data.dev, task.dev_size);
  return data;
}

namespace {

// Frozen features: mean-pooled top-layer encoder states, detached from the
// graph so probe training cannot reach the encoder.
std::vector<double> probe_features(const ModelParams& params,
                                   const std::vector<ProbeExample>& examples) {
  size_t d = params.cfg.d_model;
  std::vector<double> feats(examples.size() * d);
  const size_t chunk = 64;
  for (size_t start = 0; start < examples.size(); start += chunk) {
    size_t n = std::min(chunk, examples.size() - start);
    std::vector<TokenSequence> seqs(n);
    for (size_t i = 0; i < n; ++i) seqs[i] = examples[start + i].seq;
    EncoderOutput enc = encode(pad_batch(seqs), params);
    Tensor pooled = mean_pool_embedding(enc);  // [n, d]
    std::copy(pooled.value().begin(), pooled.value().end(), feats.begin() + start * d);
  }
  return feats;
}

struct Mlp {
  Tensor w1, b1, w2, b2;
  std::vector<Tensor> all() const { return {w1, b1, w2, b2}; }
};

Tensor mlp_logits(const Mlp& mlp, const Tensor& x) {
  Tensor hidden = relu(add(matmul(x, mlp.w1), mlp.b1));
  return add(matmul(hidden, mlp.w2), mlp.b2);
}

double mlp_accuracy(const Mlp& mlp, const std::vector<double>& feats,
                    const std::vector<ProbeExample>& examples, size_t d, size_t classes) {
  size_t correct = 0;
  const size_t chunk = 128;
  for (size_t start = 0; start < examples.size(); start += chunk) {
    size_t n = std::min(chunk, examples.size() - start);
    Tensor x = Tensor::constant({n, d}, std::vector<double>(feats.begin() + start * d,
                                                            feats.begin() + (start + n) * d));
    Tensor logits = mlp_logits(mlp, x);
    for (size_t i = 0; i < n; ++i)
      correct += argmax_row(logits.value().data() + i * classes, classes) ==
                 static_cast<size_t>(examples[start + i].label);
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

}  // namespace

ProbeResult run_probe(const ModelParams& params, const Vocab& vocab, const ProbeTask& task,
                      const ProbeConfig& cfg, uint64_t seed) {
  if (cfg.hidden == 0 || cfg.epochs == 0 || cfg.batch_size == 0 || cfg.lr <= 0.0)
    throw std::invalid_argument("probe config: hidden, epochs, batch_size and lr must be positive");
  ProbeData data = generate_probe_data(task, vocab, params.cfg.max_len, seed);
  size_t d = params.cfg.d_model;

  std::vector<double> train_feats = probe_features(params, data.train);
  std::vector<double> dev_feats = probe_features(params, data.dev);

  // Standardize: center on the train mean, then L2-normalize each row. This
  // strips the token-count concentration artifact (pooled vectors of longer
  // inputs shrink toward the mean) so the probe reads representational
  // content rather than magnitude.
  std::vector<double> mean(d, 0.0);
  for (size_t i = 0; i < data.train.size(); ++i)
    for (size_t j = 0; j < d; ++j) mean[j] += train_feats[i * d + j];
  for (double& m : mean) m /= static_cast<double>(data.train.size());
  auto standardize = [&](std::vector<double>& feats, size_t n) {
    for (size_t i = 0; i < n; ++i) {
      double norm2 = 0.0;
      for (size_t j = 0; j < d; ++j) {
        feats[i * d + j] -= mean[j];
        norm2 += feats[i * d + j] * feats[i * d + j];
      }
      double norm = std::sqrt(norm2);
      if (norm > 1e-12)
        for (size_t j = 0; j < d; ++j) feats[i * d + j] /= norm;
    }
  };
  standardize(train_feats, data.train.size());
  standardize(dev_feats, data.dev.size());

  Rng init_rng = Rng::for_stream(seed, 0x6d6c70 /* mlp */, 0);
  Mlp mlp;
  mlp.w1 = mlp_param("probe.w1", d, cfg.hidden, init_rng);
  mlp.b1 = Tensor::param("probe.b1", {cfg.hidden}, std::vector<double>(cfg.hidden, 0.0));
  mlp.w2 = mlp_param("probe.w2", cfg.hidden, data.classes, init_rng);
  mlp.b2 = Tensor::param("probe.b2", {data.classes}, std::vector<double>(data.classes, 0.0));
  std::vector<Tensor> probe_params = mlp.all();
  AdamState opt = AdamState::init(probe_params);

  size_t n = data.train.size();
  for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<size_t> order = epoch_permutation(seed, epoch, n);
    for (size_t start = 0; start < n; start += cfg.batch_size) {
      size_t m = std::min(cfg.batch_size, n - start);
      std::vector<double> xb(m * d);
      std::vector<int32_t> yb(m);
      for (size_t i = 0; i < m; ++i) {
        size_t src = order[start + i];
        std::copy(train_feats.begin() + src * d, train_feats.begin() + (src + 1) * d,
                  xb.begin() + i * d);
        yb[i] = data.train[src].label;
      }
      Tensor x = Tensor::constant({m, d}, std::move(xb));
      Tensor loss = scale(mean_all(pick(log_softmax(mlp_logits(mlp, x), 1), yb)), -1.0);
      zero_grads(probe_params);
      backward(loss);
      adam_step(probe_params, opt, cfg.lr);
    }
  }

  ProbeResult res;
  res.task = task.name;
  res.classes = data.classes;
  res.train_size = data.train.size();
  res.dev_size = data.dev.size();
  res.train_accuracy = mlp_accuracy(mlp, train_feats, data.train, d, data.classes);
  res.dev_accuracy = mlp_accuracy(mlp, dev_feats, data.dev, d, data.classes);
  return res;
}

// ------------------------------------------------------- activation rates

ActivationReport neuron_activation_rate(const ModelParams& params,
                                        const std::vector<Batch>& batches) {
  if (batches.empty())
    throw std::invalid_argument("neuron_activation_rate: need at least one batch");
  const ModelConfig& cfg = params.cfg;
  size_t f = cfg.ffn_dim;

  std::vector<size_t> enc_counts(cfg.enc_layers, 0), dec_counts(cfg.dec_layers, 0);
  size_t enc_pos = 0, dec_pos = 0;

  ForwardOptions opts;
  opts.instrument_ffn = true;

  for (const Batch& b : batches) {
    EncoderOutput enc = encode(b, params, opts);
    for (size_t r = 0; r < b.rows; ++r)
      for (size_t t = 0; t < b.len; ++t)
        if (!b.is_pad(r, t)) ++enc_pos;
    for (size_t layer = 0; layer < cfg.enc_layers; ++layer) {
      const auto& v = enc.ffn_acts[layer].value();
      for (size_t r = 0; r < b.rows; ++r)
        for (size_t t = 0; t < b.len; ++t) {
          if (b.is_pad(r, t)) continue;
          const double* base = v.data() + (r * b.len + t) * f;
          for (size_t j = 0; j < f; ++j) enc_counts[layer] += base[j] > 0.0;
        }
    }

    if (cfg.dec_layers == 0) continue;
    DecoderOutput dec = decode_reconstruct(enc, b, params, opts);
    size_t tdec = b.len - 1;
    for (size_t i = 0; i < dec.target_mask.size(); ++i) dec_pos += dec.target_mask[i] != 0;
    for (size_t layer = 0; layer < cfg.dec_layers; ++layer) {
      const auto& v = dec.ffn_acts[layer].value();
      for (size_t r = 0; r < b.rows; ++r)
        for (size_t t = 0; t < tdec; ++t) {
          if (!dec.target_mask[r * tdec + t]) continue;
          const double* base = v.data() + (r * tdec + t) * f;
          for (size_t j = 0; j < f; ++j) dec_counts[layer] += base[j] > 0.0;
        }
    }
  }

  if (enc_pos == 0) throw std::runtime_error("neuron_activation_rate: batches are all padding");

  ActivationReport rep;
  rep.approximate = cfg.activation != Activation::kRelu;
  rep.encoder_positions = enc_pos;
  rep.decoder_positions = dec_pos;
  for (size_t layer = 0; layer < cfg.enc_layers; ++layer)
    rep.encoder_rates.push_back(static_cast<double>(enc_counts[layer]) /
                                static_cast<double>(enc_pos * f));
  for (size_t layer = 0; layer < cfg.dec_layers; ++layer)
    rep.decoder_rates.push_back(dec_pos == 0 ? 0.0
                                             : static_cast<double>(dec_counts[layer]) /
                                                   static_cast<double>(dec_pos * f));
  auto avg = [](const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  rep.encoder_avg = avg(rep.encoder_rates);
  rep.decoder_avg = avg(rep.decoder_rates);
  return rep;
}

// ----------------------------------------------------------- fine-tuning

double EditScores::precision() const {
  return tp + fp == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
}

double EditScores::recall() const {
  return tp + fn == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
}

double EditScores::f_beta(double beta) const {
  double p = precision(), r = recall();
  double b2 = beta * beta;
  double denom = b2 * p + r;
  if (denom == 0.0) return 0.0;
  return (1.0 + b2) * p * r / denom;
}

EditScores score_edits(const TokenSequence& source, const TokenSequence& reference,
                       const TokenSequence& hypothesis) {
  auto src_at = [&](size_t t) -> TokenId {
    return t < source.size() ? source[t] : Vocab::kPad;
  };
  auto edits = [&](const TokenSequence& seq) {
    std::map<size_t, TokenId> e;
    size_t n = std::max(seq.size(), source.size());
    for (size_t t = 0; t < n; ++t) {
      TokenId have = t < seq.size() ? seq[t] : Vocab::kPad;
      if (have != src_at(t)) e[t] = have;
    }
    return e;
  };
  std::map<size_t, TokenId> gold = edits(reference), hyp = edits(hypothesis);
  EditScores s;
  for (const auto& [t, tok] : hyp) {
    auto it = gold.find(t);
    if (it != gold.end() && it->second == tok)
      ++s.tp;
    else
      ++s.fp;
  }
  s.fn = gold.size() - s.tp;
  return s;
}

namespace {

struct LabeledSet {
  std::vector<TokenSequence> seqs;
  std::vector<int32_t> labels;
};

struct RepairSet {
  std::vector<TokenSequence> sources, references;
};

// Marker-parity data: the label says whether a designated marker token occurs
// an odd number of times.
void gen_parity_data(const Vocab& vocab, size_t max_len, size_t train_size, size_t dev_size,
                     uint64_t seed, LabeledSet& train, LabeledSet& dev) {
  std::vector<TokenId> pool = content_pool(vocab);
  if (pool.size() < 4)
    throw std::runtime_error("toy-classification: vocabulary too small");
  if (max_len < 18) throw std::runtime_error("toy-classification: max_len too small");
  TokenId marker = pool[0];
  std::vector<TokenId> fillers(pool.begin() + 1, pool.end());

  Rng rng = Rng::for_stream(seed, 0x70617279 /* pary */, 0);
  std::set<TokenSequence> seen;
  auto fill = [&](LabeledSet& out, size_t size) {
    for (size_t i = 0; i < size; ++i) {
      int32_t label = static_cast<int32_t>(i % 2);
      for (int attempt = 0;; ++attempt) {
        if (attempt >= 200)
          throw std::runtime_error("toy-classification: degenerate generation");
        size_t len = static_cast<size_t>(rng.uniform_int(6, 12));
        std::vector<TokenId> c(len);
        for (auto& t : c) t = random_of(fillers, rng);
        size_t count = static_cast<size_t>(label) + 2 * static_cast<size_t>(rng.uniform_int(0, 1));
        for (size_t m = 0; m < count; ++m) {
          size_t at = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(c.size())));
          c.insert(c.begin() + at, marker);
        }
        TokenSequence seq = wrap(c);
        if (seen.insert(seq).second) {
          out.seqs.push_back(std::move(seq));
          out.labels.push_back(label);
          break;
        }
      }
    }
  };
  fill(train, train_size);
  fill(dev, dev_size);
}

// Repair data: the reference is a random token sequence, the source replaces
// each position with a different token at the configured rate.
void gen_repair_data(const Vocab& vocab, size_t max_len, double rate, size_t train_size,
                     size_t dev_size, uint64_t seed, RepairSet& train, RepairSet& dev) {
  std::vector<TokenId> pool = content_pool(vocab);
  if (pool.size() < 4) throw std::runtime_error("toy-seq2seq: vocabulary too small");
  if (max_len < 14) throw std::runtime_error("toy-seq2seq: max_len too small");
  if (rate < 0.0 || rate >= 1.0)
    throw std::invalid_argument("toy-seq2seq: repair rate must be in [0, 1)");
  size_t hi = std::min<size_t>(12, max_len - 2);

  Rng rng = Rng::for_stream(seed, 0x72657061 /* repa */, 0);
  std::set<TokenSequence> seen;
  auto fill = [&](RepairSet& out, size_t size) {
    for (size_t i = 0; i < size; ++i) {
      for (int attempt = 0;; ++attempt) {
        if (attempt >= 200) throw std::runtime_error("toy-seq2seq: degenerate generation");
        size_t len = static_cast<size_t>(rng.uniform_int(5, hi));
        std::vector<TokenId> ref(len), src;
        for (auto& t : ref) t = random_of(pool, rng);
        src = ref;
        for (auto& t : src) {
          if (!rng.bernoulli(rate)) continue;
          TokenId repl = t;
          while (repl == t) repl = random_of(pool, rng);
          t = repl;
        }
        TokenSequence key = wrap(ref);
        if (seen.insert(key).second) {
          out.references.push_back(std::move(key));
          out.sources.push_back(wrap(src));
          break;
        }
      }
    }
  };
  fill(train, train_size);
  fill(dev, dev_size);
}

TokenSequence strip_frame(const TokenSequence& seq) {
  TokenSequence out = seq;
  if (!out.empty() && out.front() == Vocab::kBos) out.erase(out.begin());
  if (!out.empty() && out.back() == Vocab::kEos) out.pop_back();
  return out;
}

FinetuneResult finetune_classification(const ModelParams& pretrained, const Vocab& vocab,
                                       const FinetuneConfig& cfg, uint64_t seed) {
  LabeledSet train, dev;
  gen_parity_data(vocab, pretrained.cfg.max_len, cfg.train_size, cfg.dev_size, seed, train,
                  dev);

  ModelParams ft = pretrained.clone();
  ClassifierHead head =
      ClassifierHead::init(ft.cfg.d_model, 2, Rng::mix(seed ^ 0x68656164ULL));
  std::vector<Tensor> all = ft.all();
  {
    std::vector<Tensor> h = head.all();
    all.insert(all.end(), h.begin(), h.end());
  }
  AdamState opt = AdamState::init(all);

  size_t n = train.seqs.size();
  std::vector<size_t> perm;
  size_t perm_epoch = static_cast<size_t>(-1);
  for (size_t step = 1; step <= cfg.steps; ++step) {
    std::vector<TokenSequence> seqs(cfg.batch_size);
    std::vector<int32_t> labels(cfg.batch_size);
    for (size_t i = 0; i < cfg.batch_size; ++i) {
      size_t pos = (step - 1) * cfg.batch_size + i;
      size_t epoch = pos / n;
      if (epoch != perm_epoch) {
        perm = epoch_permutation(seed, epoch, n);
        perm_epoch = epoch;
      }
      seqs[i] = train.seqs[perm[pos % n]];
      labels[i] = train.labels[perm[pos % n]];
    }
    Rng drop_rng = Rng::for_stream(seed, 0x66746472 /* ftdr */, step);
    ForwardOptions opts;
    opts.train = ft.cfg.dropout > 0.0;
    opts.dropout_rng = &drop_rng;

    Tensor logits = classify_last_decoder_token(pad_batch(seqs), ft, head, opts);
    Tensor loss = scale(mean_all(pick(log_softmax(logits, 1), labels)), -1.0);
    zero_grads(all);
    backward(loss);
    adam_step(all, opt, cfg.lr);
  }

  auto accuracy = [&](const LabeledSet& set) {
    size_t correct = 0;
    const size_t chunk = 64;
    for (size_t start = 0; start < set.seqs.size(); start += chunk) {
      size_t m = std::min(chunk, set.seqs.size() - start);
      std::vector<TokenSequence> seqs(set.seqs.begin() + start, set.seqs.begin() + start + m);
      Tensor logits = classify_last_decoder_token(pad_batch(seqs), ft, head);
      for (size_t i = 0; i < m; ++i)
        correct += argmax_row(logits.value().data() + i * 2, 2) ==
                   static_cast<size_t>(set.labels[start + i]);
    }
    return static_cast<double>(correct) / static_cast<double>(set.seqs.size());
  };

  FinetuneResult res;
  res.task = "toy-classification";
  res.metric = accuracy(dev);
  res.details["accuracy"] = res.metric;
  res.details["train_accuracy"] = accuracy(train);
  res.details["dev_size"] = static_cast<double>(dev.seqs.size());
  return res;
}

FinetuneResult finetune_seq2seq(const ModelParams& pretrained, const Vocab& vocab,
                                const FinetuneConfig& cfg, uint64_t seed) {
  RepairSet train, dev;
  gen_repair_data(vocab, pretrained.cfg.max_len, cfg.repair_rate, cfg.train_size,
                  cfg.dev_size, seed, train, dev);

  ModelParams ft = pretrained.clone();
  std::vector<Tensor> all = ft.all();
  AdamState opt = AdamState::init(all);

  size_t n = train.sources.size();
  std::vector<size_t> perm;
  size_t perm_epoch = static_cast<size_t>(-1);
  for (size_t step = 1; step <= cfg.steps; ++step) {
    std::vector<TokenSequence> srcs(cfg.batch_size), refs(cfg.batch_size);
    for (size_t i = 0; i < cfg.batch_size; ++i) {
      size_t pos = (step - 1) * cfg.batch_size + i;
      size_t epoch = pos / n;
      if (epoch != perm_epoch) {
        perm = epoch_permutation(seed, epoch, n);
        perm_epoch = epoch;
      }
      srcs[i] = train.sources[perm[pos % n]];
      refs[i] = train.references[perm[pos % n]];
    }
    Rng drop_rng = Rng::for_stream(seed, 0x66746472 /* ftdr */, step);
    ForwardOptions opts;
    opts.train = ft.cfg.dropout > 0.0;
    opts.dropout_rng = &drop_rng;

    EncoderOutput enc = encode(pad_batch(srcs), ft, opts);
    DecoderOutput out = decode_reconstruct(enc, pad_batch(refs), ft, opts);
    Tensor loss = loss_reconstruction(out.logits, out.targets, out.target_mask);
    zero_grads(all);
    backward(loss);
    adam_step(all, opt, cfg.lr);
  }

  EditScores total;
  size_t exact = 0;
  for (size_t i = 0; i < dev.sources.size(); ++i) {
    TokenSequence hyp = greedy_decode(dev.sources[i], ft, ft.cfg.max_len);
    TokenSequence src = strip_frame(dev.sources[i]);
    TokenSequence ref = strip_frame(dev.references[i]);
    TokenSequence out = strip_frame(hyp);
    EditScores s = score_edits(src, ref, out);
    total.tp += s.tp;
    total.fp += s.fp;
    total.fn += s.fn;
    exact += out == ref;
  }

  FinetuneResult res;
  res.task = "toy-seq2seq";
  res.metric = total.f_beta(0.5);
  res.details["f05"] = res.metric;
  res.details["precision"] = total.precision();
  res.details["recall"] = total.recall();
  res.details["exact_match"] =
      static_cast<double>(exact) / static_cast<double>(dev.sources.size());
  res.details["dev_size"] = static_cast<double>(dev.sources.size());
  return res;
}

}  // namespace

FinetuneResult finetune_task(const ModelParams& pretrained, const Vocab& vocab,
                             const std::string& task, const FinetuneConfig& cfg,
                             uint64_t seed) {
  if (cfg.batch_size == 0 || cfg.train_size == 0 || cfg.dev_size == 0 || cfg.lr <= 0.0)
    throw std::invalid_argument("finetune config: sizes and lr must be positive");
  if (task == "toy-classification") return finetune_classification(pretrained, vocab, cfg, seed);
  if (task == "toy-seq2seq") return finetune_seq2seq(pretrained, vocab, cfg, seed);
  throw std::invalid_argument("unknown finetune task: " + task +
                              " (expected toy-classification or toy-seq2seq)");
}

// --------------------------------------------------------- layer ablation

std::vector<AblationRow> layer_ablation(const ModelParams& params, const Vocab& vocab,
                                        const std::string& task,
                                        const std::vector<size_t>& ks,
                                        const FinetuneConfig& cfg, uint64_t seed) {
  std::vector<AblationRow> rows;
  double baseline = finetune_task(params, vocab, task, cfg, seed).metric;
  rows.push_back({"encoder", 0, baseline, "baseline"});
  rows.push_back({"decoder", 0, baseline, "baseline"});

  for (size_t k : ks) {
    for (Side side : {Side::kEncoder, Side::kDecoder}) {
      std::string name = side == Side::kEncoder ? "encoder" : "decoder";
      size_t have = side == Side::kEncoder ? params.cfg.enc_layers : params.cfg.dec_layers;
      AblationRow row;
      row.side = name;
      row.k = k;
      if (k == 0) {
        row.metric = baseline;
      } else if (k > have) {
        row.note = "skipped: only " + std::to_string(have) + " layers available";
      } else {
        ModelParams dropped = drop_layers(params, side, k);
        row.metric = finetune_task(dropped, vocab, task, cfg, seed).metric;
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

// ---------------------------------------------------------------- reports

std::string AnalysisReport::render() const {
  std::ostringstream out;
  out << "# table=" << title << "\n";
  for (const auto& [k, v] : provenance) out << "# " << k << "=" << v << "\n";
  for (size_t i = 0; i < columns.size(); ++i) out << (i ? "\t" : "") << columns[i];
  out << "\n";
  for (const auto& row : rows) {
    if (row.size() != columns.size())
      throw std::runtime_error("report row width does not match its columns");
    for (size_t i = 0; i < row.size(); ++i) out << (i ? "\t" : "") << row[i];
    out << "\n";
  }
  return out.str();
}

void AnalysisReport::write(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw std::runtime_error("cannot write report: " + path);
  out << render();
  if (!out) throw std::runtime_error("failed writing report: " + path);
}

std::string checkpoint_hash_hex(const std::string& stem) {
  Checkpoint ck = load_checkpoint(stem);
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(payload_checksum(ck.payload)));
  return buf;
}

}  // namespace s2slab
