#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "s2slab/analysis.hpp"
#include "s2slab/checkpoint.hpp"

using namespace s2slab;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> tiny_corpus() {
  return {
      "alpha beta gamma delta epsilon zeta eta theta",
      "iota kappa lambda mu nu xi omicron pi",
      "rho sigma tau upsilon phi chi psi omega",
      "alpha kappa tau omega beta lambda upsilon chi",
  };
}

Vocab tiny_vocab() { return Vocab::build_from_lines(tiny_corpus(), 64); }

ModelConfig tiny_config(size_t vocab_size) {
  ModelConfig cfg;
  cfg.vocab_size = vocab_size;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.ffn_dim = 32;
  cfg.max_len = 24;
  cfg.dropout = 0.0;
  return cfg;
}

uint64_t value_checksum(const std::vector<Tensor>& tensors) {
  // order-sensitive FNV over raw values
  uint64_t h = 1469598103934665603ull;
  for (const Tensor& t : tensors)
    for (double v : t.value()) {
      uint64_t bits;
      std::memcpy(&bits, &v, sizeof(bits));
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xff;
        h *= 1099511628211ull;
      }
    }
  return h;
}

bool strictly_sorted(const TokenSequence& content) {
  for (size_t i = 0; i + 1 < content.size(); ++i)
    if (content[i] >= content[i + 1]) return false;
  return true;
}

TokenSequence content_of(const TokenSequence& seq) {
  REQUIRE(seq.size() >= 2);
  REQUIRE(seq.front() == Vocab::kBos);
  REQUIRE(seq.back() == Vocab::kEos);
  return TokenSequence(seq.begin() + 1, seq.end() - 1);
}

}  // namespace

TEST_CASE("probe task presets and unknown names") {
  CHECK(ProbeTask::make("SeLen").classes == 2);
  CHECK(ProbeTask::make("WC").classes == 4);
  CHECK(ProbeTask::make("BShif").classes == 2);
  CHECK_THROWS(ProbeTask::make("TreeDepth"));
}

TEST_CASE("probe data is balanced, disjoint and deterministic") {
  Vocab vocab = tiny_vocab();
  for (const char* name : {"SeLen", "WC", "BShif"}) {
    ProbeTask task = ProbeTask::make(name);
    task.train_size = 60;
    task.dev_size = 30;
    ProbeData data = generate_probe_data(task, vocab, 24, 5);
    REQUIRE(data.train.size() == 60);
    REQUIRE(data.dev.size() == 30);

    // exact round-robin balance within each split
    std::vector<size_t> counts(task.classes, 0);
    for (const auto& e : data.train) counts[static_cast<size_t>(e.label)]++;
    for (size_t c = 0; c < task.classes; ++c)
      CHECK(counts[c] == 60 / task.classes);

    // splits share no sequence
    std::set<TokenSequence> train_set;
    for (const auto& e : data.train) train_set.insert(e.seq);
    CHECK(train_set.size() == data.train.size());
    for (const auto& e : data.dev) CHECK(train_set.count(e.seq) == 0);

    ProbeData again = generate_probe_data(task, vocab, 24, 5);
    REQUIRE(again.train.size() == data.train.size());
    for (size_t i = 0; i < data.train.size(); ++i) {
      CHECK(again.train[i].seq == data.train[i].seq);
      CHECK(again.train[i].label == data.train[i].label);
    }
  }
}

TEST_CASE("probe generators respect their task semantics") {
  Vocab vocab = tiny_vocab();

  ProbeTask selen = ProbeTask::make("SeLen");
  selen.train_size = 40;
  selen.dev_size = 20;
  ProbeData sd = generate_probe_data(selen, vocab, 24, 9);
  for (const auto& e : sd.train) {
    size_t len = content_of(e.seq).size();
    if (e.label == 0) {
      CHECK(len >= 3);
      CHECK(len <= 8);
    } else {
      CHECK(len >= 9);
      CHECK(len <= 14);
    }
  }

  ProbeTask wc = ProbeTask::make("WC");
  wc.train_size = 40;
  wc.dev_size = 20;
  ProbeData wd = generate_probe_data(wc, vocab, 24, 9);
  // targets are the first `classes` content ids by construction
  for (const auto& e : wd.train) {
    TokenSequence c = content_of(e.seq);
    for (int32_t t = 0; t < static_cast<int32_t>(wc.classes); ++t) {
      size_t hits = 0;
      for (TokenId id : c) hits += id == Vocab::num_specials() + t;
      CHECK(hits == (t == e.label ? 1u : 0u));
    }
  }

  ProbeTask bshif = ProbeTask::make("BShif");
  bshif.train_size = 40;
  bshif.dev_size = 20;
  ProbeData bd = generate_probe_data(bshif, vocab, 24, 9);
  for (const auto& e : bd.train) {
    TokenSequence c = content_of(e.seq);
    if (e.label == 0) {
      CHECK(strictly_sorted(c));
    } else {
      CHECK_FALSE(strictly_sorted(c));
      // exactly one adjacent swap restores sorted order
      size_t fixes = 0;
      for (size_t j = 0; j + 1 < c.size(); ++j) {
        TokenSequence d = c;
        std::swap(d[j], d[j + 1]);
        fixes += strictly_sorted(d);
      }
      CHECK(fixes == 1);
    }
  }
}

TEST_CASE("degenerate probe generation errors out") {
  Vocab vocab = tiny_vocab();
  ProbeTask task = ProbeTask::make("SeLen");
  CHECK_THROWS(generate_probe_data(task, vocab, 6, 1));  // max_len too small

  Vocab small = Vocab::build_from_lines({"alpha beta gamma"}, 64);
  CHECK_THROWS(generate_probe_data(task, small, 24, 1));  // vocabulary too small
}

TEST_CASE("probes train their MLP without touching the encoder") {
  Vocab vocab = tiny_vocab();
  ModelParams params = ModelParams::init(tiny_config(vocab.size()), 3);
  uint64_t before = value_checksum(params.all());

  ProbeTask task = ProbeTask::make("SeLen");
  task.train_size = 64;
  task.dev_size = 32;
  ProbeConfig cfg;
  cfg.epochs = 10;
  ProbeResult res = run_probe(params, vocab, task, cfg, 7);
  CHECK(value_checksum(params.all()) == before);
  CHECK(res.task == "SeLen");
  CHECK(res.dev_accuracy >= 0.0);
  CHECK(res.dev_accuracy <= 1.0);
  CHECK(res.train_size == 64);

  ProbeResult again = run_probe(params, vocab, task, cfg, 7);
  CHECK(again.dev_accuracy == res.dev_accuracy);
  CHECK(again.train_accuracy == res.train_accuracy);
}

TEST_CASE("WC probe on an embedding-copying encoder is nearly perfect") {
  Vocab vocab = tiny_vocab();
  ModelConfig cfg;
  cfg.vocab_size = vocab.size();
  cfg.d_model = vocab.size();
  cfg.n_heads = 1;
  cfg.enc_layers = 0;  // encoder output = layer norm of the raw embeddings
  cfg.dec_layers = 0;
  cfg.ffn_dim = 8;
  cfg.max_len = 16;
  cfg.dropout = 0.0;
  ModelParams params = ModelParams::init(cfg, 1);
  std::fill(params.pos_emb.value().begin(), params.pos_emb.value().end(), 0.0);
  std::fill(params.tok_emb.value().begin(), params.tok_emb.value().end(), 0.0);
  for (size_t i = 0; i < vocab.size(); ++i)
    params.tok_emb.value()[i * vocab.size() + i] = 3.0;

  ProbeTask task = ProbeTask::make("WC");
  task.train_size = 96;
  task.dev_size = 48;
  ProbeConfig pc;
  pc.epochs = 30;
  ProbeResult res = run_probe(params, vocab, task, pc, 11);
  CHECK(res.dev_accuracy > 0.9);
}

TEST_CASE("activation rates hit the closed-form extremes") {
  Vocab vocab = tiny_vocab();
  ModelConfig cfg = tiny_config(vocab.size());
  cfg.enc_layers = 2;
  ModelParams params = ModelParams::init(cfg, 3);

  // layer 0: zero weights and biases -> post-activation exactly 0 everywhere
  std::fill(params.enc[0].w1.value().begin(), params.enc[0].w1.value().end(), 0.0);
  std::fill(params.enc[0].b1.value().begin(), params.enc[0].b1.value().end(), 0.0);
  // layer 1: zero weights, positive bias -> post-activation positive everywhere
  std::fill(params.enc[1].w1.value().begin(), params.enc[1].w1.value().end(), 0.0);
  std::fill(params.enc[1].b1.value().begin(), params.enc[1].b1.value().end(), 1.0);

  auto sentences = encode_lines(tiny_corpus(), vocab, 24);
  std::vector<Batch> batches{pad_batch(sentences)};
  ActivationReport rep = neuron_activation_rate(params, batches);
  REQUIRE(rep.encoder_rates.size() == 2);
  CHECK(rep.encoder_rates[0] == 0.0);
  CHECK(rep.encoder_rates[1] == 1.0);
  CHECK(rep.encoder_avg == doctest::Approx(0.5).epsilon(1e-15));
  CHECK_FALSE(rep.approximate);

  CHECK_THROWS(neuron_activation_rate(params, {}));
}

TEST_CASE("activation rates match an independent recount") {
  Vocab vocab = tiny_vocab();
  ModelConfig cfg = tiny_config(vocab.size());
  cfg.enc_layers = 2;
  cfg.dec_layers = 2;
  ModelParams params = ModelParams::init(cfg, 5);

  auto sentences = encode_lines(tiny_corpus(), vocab, 24);
  std::vector<Batch> batches;
  batches.push_back(pad_batch({sentences[0], sentences[1]}));
  batches.push_back(pad_batch({sentences[2], sentences[3]}));

  ActivationReport rep = neuron_activation_rate(params, batches);

  // flat-loop recount straight over the instrumented activation dumps
  size_t f = cfg.ffn_dim;
  std::vector<double> enc_hits(cfg.enc_layers, 0), dec_hits(cfg.dec_layers, 0);
  double enc_pos = 0, dec_pos = 0;
  for (const Batch& b : batches) {
    ForwardOptions opts;
    opts.instrument_ffn = true;
    EncoderOutput enc = encode(b, params, opts);
    DecoderOutput dec = decode_reconstruct(enc, b, params, opts);
    for (size_t r = 0; r < b.rows; ++r)
      for (size_t t = 0; t < b.len; ++t)
        if (!b.is_pad(r, t)) enc_pos += 1;
    for (size_t l = 0; l < cfg.enc_layers; ++l) {
      const auto& v = enc.ffn_acts[l].value();
      for (size_t i = 0; i < v.size(); ++i)
        if (!b.is_pad(i / f / b.len, (i / f) % b.len) && v[i] > 0.0) enc_hits[l] += 1;
    }
    size_t tdec = b.len - 1;
    for (uint8_t m : dec.target_mask) dec_pos += m != 0;
    for (size_t l = 0; l < cfg.dec_layers; ++l) {
      const auto& v = dec.ffn_acts[l].value();
      for (size_t i = 0; i < v.size(); ++i)
        if (dec.target_mask[i / f] && v[i] > 0.0) dec_hits[l] += 1;
    }
    REQUIRE(tdec * b.rows == dec.target_mask.size());
  }
  for (size_t l = 0; l < cfg.enc_layers; ++l)
    CHECK(std::abs(rep.encoder_rates[l] - enc_hits[l] / (enc_pos * f)) < 1e-12);
  for (size_t l = 0; l < cfg.dec_layers; ++l)
    CHECK(std::abs(rep.decoder_rates[l] - dec_hits[l] / (dec_pos * f)) < 1e-12);

  // batch packing must not change the rates: same rows, one batch vs two
  std::vector<Batch> packed{pad_batch(sentences)};
  ActivationReport rep2 = neuron_activation_rate(params, packed);
  for (size_t l = 0; l < cfg.enc_layers; ++l)
    CHECK(rep2.encoder_rates[l] == doctest::Approx(rep.encoder_rates[l]).epsilon(1e-12));

  ModelConfig gcfg = cfg;
  gcfg.activation = Activation::kGelu;
  ModelParams gparams = ModelParams::init(gcfg, 5);
  CHECK(neuron_activation_rate(gparams, batches).approximate);
}

TEST_CASE("edit scoring matches twenty hand-counted cases") {
  // (src, ref, hyp) triples with hand-counted tp/fp/fn
  struct Case {
    TokenSequence src, ref, hyp;
    size_t tp, fp, fn;
  };
  const std::vector<Case> cases = {
      // 1: perfect repair of two edits
      {{5, 6, 7}, {5, 8, 9}, {5, 8, 9}, 2, 0, 0},
      // 2: untouched and nothing to fix
      {{5, 6, 7}, {5, 6, 7}, {5, 6, 7}, 0, 0, 0},
      // 3: hypothesis copies the source, misses both edits
      {{5, 6, 7}, {5, 8, 9}, {5, 6, 7}, 0, 0, 2},
      // 4: right position, wrong replacement
      {{5, 6, 7}, {5, 8, 7}, {5, 9, 7}, 0, 1, 1},
      // 5: spurious edit where none was needed
      {{5, 6, 7}, {5, 6, 7}, {5, 9, 7}, 0, 1, 0},
      // 6: one of two edits found
      {{5, 6, 7, 8}, {5, 9, 7, 10}, {5, 9, 7, 8}, 1, 0, 1},
      // 7: correct edit plus a spurious one
      {{5, 6, 7, 8}, {5, 9, 7, 8}, {5, 9, 7, 11}, 1, 1, 0},
      // 8: everything replaced, everything right
      {{5, 6}, {7, 8}, {7, 8}, 2, 0, 0},
      // 9: everything replaced, all wrong tokens
      {{5, 6}, {7, 8}, {9, 10}, 0, 2, 2},
      // 10: hypothesis longer than source counts as edits vs PAD sentinel
      {{5, 6}, {5, 6}, {5, 6, 7}, 0, 1, 0},
      // 11: reference longer than source, hypothesis matches it
      {{5, 6}, {5, 6, 7}, {5, 6, 7}, 1, 0, 0},
      // 12: reference longer, hypothesis stops at the source
      {{5, 6}, {5, 6, 7}, {5, 6}, 0, 0, 1},
      // 13: hypothesis shorter than the source (a deletion it should not make)
      {{5, 6, 7}, {5, 6, 7}, {5, 6}, 0, 1, 0},
      // 14: reference shorter than source, hypothesis follows
      {{5, 6, 7}, {5, 6}, {5, 6}, 1, 0, 0},
      // 15: reference shorter, hypothesis keeps the extra token
      {{5, 6, 7}, {5, 6}, {5, 6, 7}, 0, 0, 1},
      // 16: single-token full swap
      {{5}, {6}, {6}, 1, 0, 0},
      // 17: empty hypothesis against one edit
      {{5}, {6}, {}, 0, 1, 1},
      // 18: empty reference and hypothesis (both delete everything)
      {{5}, {}, {}, 1, 0, 0},
      // 19: three edits, two found, one spurious
      {{1, 2, 3, 4, 5}, {1, 9, 8, 4, 7}, {1, 9, 8, 6, 5}, 2, 1, 1},
      // 20: mixed lengths: edit at 1 found; the deletion at 3 is answered
      //     with a wrong replacement (one FP, one FN)
      {{5, 6, 7, 8}, {5, 9, 7}, {5, 9, 7, 10}, 1, 1, 1},
  };
  REQUIRE(cases.size() == 20);
  for (size_t i = 0; i < cases.size(); ++i) {
    CAPTURE(i);
    EditScores s = score_edits(cases[i].src, cases[i].ref, cases[i].hyp);
    CHECK(s.tp == cases[i].tp);
    CHECK(s.fp == cases[i].fp);
    CHECK(s.fn == cases[i].fn);

    // F0.5 against the textbook formula on the hand counts
    double p = cases[i].tp + cases[i].fp == 0
                   ? 1.0
                   : double(cases[i].tp) / double(cases[i].tp + cases[i].fp);
    double r = cases[i].tp + cases[i].fn == 0
                   ? 1.0
                   : double(cases[i].tp) / double(cases[i].tp + cases[i].fn);
    double denom = 0.25 * p + r;
    double f05 = denom == 0.0 ? 0.0 : 1.25 * p * r / denom;
    CHECK(s.f_beta(0.5) == doctest::Approx(f05).epsilon(1e-15));
  }

  // fixpoint: a perfect repair always scores 1.0
  EditScores perfect = score_edits({5, 6, 7}, {5, 8, 9}, {5, 8, 9});
  CHECK(perfect.f_beta(0.5) == 1.0);
}

TEST_CASE("untrained classification sits at chance over five seeds") {
  Vocab vocab = tiny_vocab();
  ModelParams params = ModelParams::init(tiny_config(vocab.size()), 3);
  FinetuneConfig cfg;
  cfg.steps = 0;  // evaluate the untrained head
  cfg.train_size = 32;
  cfg.dev_size = 64;

  double sum = 0.0;
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    FinetuneResult res = finetune_task(params, vocab, "toy-classification", cfg, seed);
    CHECK(res.metric >= 0.0);
    CHECK(res.metric <= 1.0);
    sum += res.metric;
  }
  double mean = sum / 5.0;
  CHECK(mean > 0.35);
  CHECK(mean < 0.65);
}

TEST_CASE("fine-tuning never mutates the pretrained parameters") {
  Vocab vocab = tiny_vocab();
  ModelParams params = ModelParams::init(tiny_config(vocab.size()), 3);
  uint64_t before = value_checksum(params.all());

  FinetuneConfig cfg;
  cfg.steps = 3;
  cfg.batch_size = 4;
  cfg.train_size = 16;
  cfg.dev_size = 8;
  finetune_task(params, vocab, "toy-classification", cfg, 2);
  finetune_task(params, vocab, "toy-seq2seq", cfg, 2);
  CHECK(value_checksum(params.all()) == before);

  CHECK_THROWS(finetune_task(params, vocab, "toy-translation", cfg, 2));
}

TEST_CASE("seq2seq repair reports the full metric family deterministically") {
  Vocab vocab = tiny_vocab();
  ModelParams params = ModelParams::init(tiny_config(vocab.size()), 3);
  FinetuneConfig cfg;
  cfg.steps = 4;
  cfg.batch_size = 4;
  cfg.train_size = 16;
  cfg.dev_size = 8;

  FinetuneResult res = finetune_task(params, vocab, "toy-seq2seq", cfg, 9);
  CHECK(res.task == "toy-seq2seq");
  for (const char* key : {"f05", "precision", "recall", "exact_match"}) {
    REQUIRE(res.details.count(key) == 1);
    CHECK(res.details.at(key) >= 0.0);
    CHECK(res.details.at(key) <= 1.0);
  }
  FinetuneResult again = finetune_task(params, vocab, "toy-seq2seq", cfg, 9);
  CHECK(again.metric == res.metric);
  CHECK(again.details == res.details);
}

TEST_CASE("layer ablation emits baselines, rows and skip notes") {
  Vocab vocab = tiny_vocab();
  ModelConfig cfg = tiny_config(vocab.size());
  cfg.enc_layers = 2;
  cfg.dec_layers = 2;
  ModelParams params = ModelParams::init(cfg, 3);

  FinetuneConfig ft;
  ft.steps = 2;
  ft.batch_size = 4;
  ft.train_size = 8;
  ft.dev_size = 8;

  std::vector<AblationRow> rows = layer_ablation(params, vocab, "toy-classification",
                                                 {1, 2, 3}, ft, 4);
  REQUIRE(rows.size() == 2 + 3 * 2);

  CHECK(rows[0].side == "encoder");
  CHECK(rows[1].side == "decoder");
  CHECK(rows[0].note == "baseline");
  CHECK(rows[1].note == "baseline");
  REQUIRE(rows[0].metric.has_value());
  REQUIRE(rows[1].metric.has_value());
  CHECK(*rows[0].metric == *rows[1].metric);

  for (const auto& row : rows) {
    if (row.k == 3) {
      CHECK_FALSE(row.metric.has_value());
      CHECK(row.note.find("skipped") == 0);
    } else {
      CHECK(row.metric.has_value());
    }
  }

  std::vector<AblationRow> again = layer_ablation(params, vocab, "toy-classification",
                                                  {1, 2, 3}, ft, 4);
  REQUIRE(again.size() == rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    CHECK(again[i].side == rows[i].side);
    CHECK(again[i].k == rows[i].k);
    CHECK(again[i].metric == rows[i].metric);
    CHECK(again[i].note == rows[i].note);
  }
}

TEST_CASE("analysis reports render provenance plus a TSV body") {
  AnalysisReport rep;
  rep.title = "probe";
  rep.columns = {"task", "accuracy"};
  rep.rows = {{"SeLen", "0.5"}, {"WC", "0.9"}};
  rep.provenance = {{"seed", "7"}, {"checkpoint", "abc123"}};

  std::string text = rep.render();
  CHECK(text ==
        "# table=probe\n"
        "# checkpoint=abc123\n"
        "# seed=7\n"
        "task\taccuracy\n"
        "SeLen\t0.5\n"
        "WC\t0.9\n");
  CHECK(rep.render() == text);  // byte-identical re-render

  AnalysisReport bad = rep;
  bad.rows.push_back({"only-one-cell"});
  CHECK_THROWS(bad.render());

  auto path = fs::temp_directory_path() / "s2slab-report-test.tsv";
  rep.write(path.string());
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(ss.str() == text);
  fs::remove(path);
}

TEST_CASE("checkpoint hashes identify payloads") {
  auto dir = fs::temp_directory_path() / ("s2slab-hash-" + std::to_string(::getpid()));
  fs::create_directories(dir);
  Tensor a = Tensor::param("a", {2}, {1.0, 2.0});
  Tensor b = Tensor::param("b", {2}, {1.0, 3.0});
  save_checkpoint((dir / "one").string(), {}, {a});
  save_checkpoint((dir / "two").string(), {}, {a});
  save_checkpoint((dir / "other").string(), {}, {b});

  std::string h1 = checkpoint_hash_hex((dir / "one").string());
  CHECK(h1.size() == 16);
  CHECK(h1 == checkpoint_hash_hex((dir / "two").string()));
  CHECK(h1 != checkpoint_hash_hex((dir / "other").string()));
  fs::remove_all(dir);
}
