#include "s2slab/noising.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace s2slab {

NoiseConfig::Mode NoiseConfig::parse_mode(const std::string& s) {
  if (s == "sf") return Mode::kShuffleOnly;
  if (s == "ra") return Mode::kReplaceOnly;
  if (s == "sfra") return Mode::kBoth;
  throw std::runtime_error("noise: unknown mode '" + s + "' (expected sf, ra or sfra)");
}

std::string NoiseConfig::mode_name(Mode m) {
  switch (m) {
    case Mode::kShuffleOnly: return "sf";
    case Mode::kReplaceOnly: return "ra";
    case Mode::kBoth: return "sfra";
  }
  return "sfra";
}

void NoiseConfig::validate() const {
  if (mask_ratio < 0.0 || mask_ratio > 1.0)
    throw std::runtime_error("noise: mask_ratio must be in [0, 1]");
  if (span_mean <= 0.0) throw std::runtime_error("noise: span_mean must be positive");
  if (trigram_rate < 0.0 || trigram_rate > 1.0)
    throw std::runtime_error("noise: trigram_rate must be in [0, 1]");
  if (replace_rate < 0.0 || replace_rate > 1.0)
    throw std::runtime_error("noise: replace_rate must be in [0, 1]");
}

bool is_structural(TokenId id) {
  return id == Vocab::kPad || id == Vocab::kBos || id == Vocab::kEos || id == Vocab::kMask;
}

InfillResult apply_text_infilling(const TokenSequence& seq, double mask_ratio,
                                  double span_mean, Rng& rng) {
  size_t n = seq.size();
  std::vector<uint8_t> maskable(n, 0);
  size_t n_maskable = 0;
  for (size_t i = 0; i < n; ++i)
    if (!is_structural(seq[i])) {
      maskable[i] = 1;
      ++n_maskable;
    }

  std::vector<uint8_t> claimed(n, 0);
  // span_of[i] holds the span id + 1 for claimed positions.
  std::vector<size_t> span_of(n, 0);
  std::vector<SpanRef> spans;

  double target = mask_ratio * static_cast<double>(n_maskable);
  size_t covered = 0;
  size_t budget_total = static_cast<size_t>(std::ceil(target));
  while (static_cast<double>(covered) < target) {
    size_t remaining = budget_total - covered;
    int draw = 0;
    do {
      draw = rng.poisson(span_mean);
    } while (draw == 0);
    size_t len = std::min<size_t>(static_cast<size_t>(draw), remaining);

    // A span needs `len` consecutive maskable, unclaimed positions. When the
    // draw does not fit anywhere, shrink it; when nothing fits, stop early.
    std::vector<size_t> starts;
    while (len >= 1) {
      starts.clear();
      for (size_t s = 0; s + len <= n; ++s) {
        bool ok = true;
        for (size_t k = s; k < s + len; ++k)
          if (!maskable[k] || claimed[k]) {
            ok = false;
            break;
          }
        if (ok) starts.push_back(s);
      }
      if (!starts.empty()) break;
      --len;
    }
    if (len == 0) break;

    size_t s = starts[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int64_t>(starts.size()) - 1))];
    spans.push_back({s, len});
    for (size_t k = s; k < s + len; ++k) {
      claimed[k] = 1;
      span_of[k] = spans.size();
    }
    covered += len;
  }

  InfillResult out;
  for (size_t i = 0; i < n; ++i) {
    if (claimed[i]) {
      const SpanRef& sp = spans[span_of[i] - 1];
      if (i == sp.begin) {
        out.seq.push_back(Vocab::kMask);
        out.alignment.push_back(sp);
      }
      // interior span positions collapse into the single MASK
    } else {
      out.seq.push_back(seq[i]);
      out.alignment.push_back({i, 1});
    }
  }
  return out;
}

ShuffleResult apply_shuffle(const TokenSequence& seq, double trigram_rate, Rng& rng) {
  // The 5 non-identity permutations of three positions.
  static const int kPerms[5][3] = {{0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};

  ShuffleResult out;
  out.seq = seq;
  out.flags.assign(seq.size(), 0);
  if (seq.size() < 3) return out;

  for (size_t i = 0; i + 2 < seq.size(); ++i) {
    bool eligible = true;
    for (size_t k = i; k < i + 3; ++k)
      if (is_structural(out.seq[k]) || out.flags[k]) {
        eligible = false;
        break;
      }
    if (!eligible) continue;
    if (!rng.bernoulli(trigram_rate)) continue;

    const int* p = kPerms[rng.uniform_int(0, 4)];
    TokenId a = out.seq[i], b = out.seq[i + 1], c = out.seq[i + 2];
    TokenId src[3] = {a, b, c};
    for (size_t k = 0; k < 3; ++k) out.seq[i + k] = src[p[k]];
    out.flags[i] = out.flags[i + 1] = out.flags[i + 2] = 1;
  }
  return out;
}

ReplaceResult apply_random_replace(const TokenSequence& seq, double replace_rate,
                                   const Vocab& vocab, Rng& rng,
                                   const std::vector<uint8_t>* skip_flags,
                                   const TokenSequence& exclude) {
  if (skip_flags && skip_flags->size() != seq.size())
    throw std::invalid_argument("replace: skip_flags length mismatch");

  std::unordered_set<TokenId> excluded(exclude.begin(), exclude.end());
  TokenId v = static_cast<TokenId>(vocab.size());

  // Strict pool: every non-special token absent from the uncorrupted sequence.
  // Kept sorted so a per-position draw can skip the current occupant.
  std::vector<TokenId> pool;
  for (TokenId t = Vocab::num_specials(); t < v; ++t)
    if (!excluded.count(t)) pool.push_back(t);

  // Uniform draw over pool minus cur; cur is usually excluded already.
  auto draw_from_pool = [&rng](const std::vector<TokenId>& p, TokenId cur) -> TokenId {
    bool holds_cur = std::binary_search(p.begin(), p.end(), cur);
    size_t n = p.size() - (holds_cur ? 1 : 0);
    if (n == 0) return -1;
    size_t k = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(n) - 1));
    if (holds_cur) {
      size_t cur_at = static_cast<size_t>(
          std::lower_bound(p.begin(), p.end(), cur) - p.begin());
      if (k >= cur_at) ++k;
    }
    return p[k];
  };

  ReplaceResult out;
  out.seq = seq;
  out.flags.assign(seq.size(), 0);
  bool warned = false;

  for (size_t i = 0; i < seq.size(); ++i) {
    if (is_structural(seq[i])) continue;
    if (skip_flags && (*skip_flags)[i]) continue;
    if (!rng.bernoulli(replace_rate)) continue;

    TokenId cur = out.seq[i];
    TokenId strict = draw_from_pool(pool, cur);
    if (strict >= 0) {
      out.seq[i] = strict;
      out.flags[i] = 1;
      continue;
    }
    // Fallback for tiny vocabularies: exclude only the current token.
    std::vector<TokenId> fallback;
    for (TokenId t = Vocab::num_specials(); t < v; ++t)
      if (t != cur) fallback.push_back(t);
    if (fallback.empty()) {
      if (!warned) {
        out.warnings.push_back("replace: vocabulary too small, position skipped");
        warned = true;
      }
      continue;
    }
    if (!warned) {
      out.warnings.push_back("replace: strict out-of-sequence pool empty, fallback pool used");
      warned = true;
    }
    out.seq[i] = fallback[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int64_t>(fallback.size()) - 1))];
    out.flags[i] = 1;
  }
  return out;
}

uint64_t example_noise_seed(uint64_t run_seed, uint64_t step, uint64_t index) {
  uint64_t s = Rng::mix(run_seed ^ 0x6e6f697365ULL /* "noise" */);
  s = Rng::mix(s ^ step);
  return Rng::mix(s ^ index);
}

CorruptionRecord corrupt_pair(const TokenSequence& seq, const NoiseConfig& cfg,
                              const Vocab& vocab, uint64_t seed) {
  cfg.validate();
  if (seq.size() < 2 || seq.front() != Vocab::kBos || seq.back() != Vocab::kEos)
    throw std::invalid_argument("corrupt_pair: sequence must be BOS ... EOS");

  CorruptionRecord rec;
  rec.original = seq;
  rec.seed = seed;

  Rng rng_a = Rng::for_stream(seed, 1);
  Rng rng_b = Rng::for_stream(seed, 2);

  rec.view_a = apply_text_infilling(seq, cfg.mask_ratio, cfg.span_mean, rng_a).seq;

  TokenSequence b = apply_text_infilling(seq, cfg.mask_ratio, cfg.span_mean, rng_b).seq;
  std::vector<uint8_t> shuffle_flags(b.size(), 0);
  if (cfg.mode != NoiseConfig::Mode::kReplaceOnly) {
    ShuffleResult sh = apply_shuffle(b, cfg.trigram_rate, rng_b);
    b = std::move(sh.seq);
    shuffle_flags = std::move(sh.flags);
  }
  std::vector<uint8_t> replace_flags(b.size(), 0);
  if (cfg.mode != NoiseConfig::Mode::kShuffleOnly) {
    ReplaceResult rp =
        apply_random_replace(b, cfg.replace_rate, vocab, rng_b, &shuffle_flags, seq);
    b = std::move(rp.seq);
    replace_flags = std::move(rp.flags);
    for (auto& w : rp.warnings) rec.warnings.push_back(std::move(w));
  }
  rec.view_b = std::move(b);

  rec.labels.cls.assign(rec.view_b.size(), kNoiseOther);
  rec.labels.loss_mask.assign(rec.view_b.size(), 0);
  for (size_t i = 0; i < rec.view_b.size(); ++i) {
    if (shuffle_flags[i]) rec.labels.cls[i] = kNoiseShuffled;
    if (replace_flags[i]) rec.labels.cls[i] = kNoiseReplaced;
    rec.labels.loss_mask[i] = is_structural(rec.view_b[i]) ? 0 : 1;
  }
  return rec;
}

namespace {

template <typename T>
void append_ids(std::string& out, const std::vector<T>& v) {
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(static_cast<long long>(v[i]));
  }
}

}  // namespace

std::string format_record(const CorruptionRecord& rec) {
  std::string out;
  append_ids(out, rec.original);
  out += '\t';
  append_ids(out, rec.view_a);
  out += '\t';
  append_ids(out, rec.view_b);
  out += '\t';
  append_ids(out, rec.labels.cls);
  out += '\t';
  append_ids(out, rec.labels.loss_mask);
  out += '\t';
  out += std::to_string(static_cast<unsigned long long>(rec.seed));
  return out;
}

}  // namespace s2slab
