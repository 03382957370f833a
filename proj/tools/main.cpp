// s2slab — command-line entry point for the seq2seq pretraining laboratory.
//
// Exit codes: 0 success, 1 validation/usage error, 2 numerical abort.
// Every verb writes its resolved key=value config next to its outputs and is
// idempotent: identical inputs rewrite identical outputs (single-threaded).

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "s2slab/drivers.hpp"

namespace fs = std::filesystem;
using namespace s2slab;

namespace {

std::string fmt_f64(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct VerbArgs {
  std::string config;
  std::vector<std::string> sets;
  std::string out_dir;
  std::string corpus = "data/corpus.txt";
  std::string checkpoint;
  uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* corpus_opt = nullptr;
};

// Registers the shared flags. seed_key names the config key --seed maps to
// ("" for verbs without randomness); with_* gate the flags a verb supports.
VerbArgs& add_common(CLI::App* sub, std::vector<std::unique_ptr<VerbArgs>>& store,
                     const std::string& verb, const std::string& seed_key,
                     bool with_corpus, bool with_checkpoint,
                     const std::string& checkpoint_help = "checkpoint stem") {
  store.push_back(std::make_unique<VerbArgs>());
  VerbArgs& a = *store.back();
  a.out_dir = "out/" + verb;
  sub->add_option("--config", a.config, "key=value config file");
  sub->add_option("--set", a.sets,
                  "config override key=value; repeatable, last one wins");
  sub->add_option("--out-dir", a.out_dir, "output directory")->capture_default_str();
  if (with_corpus)
    sub->add_option("--corpus", a.corpus, "corpus text file, one sentence per line")
        ->capture_default_str();
  if (with_checkpoint) sub->add_option("--checkpoint", a.checkpoint, checkpoint_help);
  if (!seed_key.empty())
    a.seed_opt = sub->add_option("--seed", a.seed, "sets " + seed_key);
  return a;
}

Config assemble(const VerbArgs& a, const std::string& seed_key) {
  Config c = a.config.empty() ? Config{} : Config::from_file(a.config);
  if (a.seed_opt != nullptr && a.seed_opt->count() > 0)
    c.set(seed_key, std::to_string(a.seed));
  for (const std::string& kv : a.sets) c.set(kv);
  return c;
}

std::string corpus_path(const VerbArgs& a, const Config& c) {
  if (a.corpus_opt != nullptr && a.corpus_opt->count() > 0) return a.corpus;
  return c.str("corpus.path", a.corpus);
}

std::vector<std::string> with(std::vector<std::string> base,
                              std::initializer_list<const char*> extra) {
  for (const char* e : extra) base.emplace_back(e);
  return base;
}

const std::initializer_list<const char*> kProbeCfgKeys = {
    "probe.hidden", "probe.epochs", "probe.lr", "probe.batch_size",
    "probe.train_size", "probe.dev_size"};
const std::initializer_list<const char*> kFinetuneCfgKeys = {
    "finetune.steps",      "finetune.batch_size", "finetune.lr",
    "finetune.train_size", "finetune.dev_size",   "finetune.repair_rate"};

ProbeConfig probe_config(const Config& c) {
  ProbeConfig p;
  p.hidden = static_cast<size_t>(c.i64("probe.hidden", static_cast<int64_t>(p.hidden)));
  p.epochs = static_cast<size_t>(c.i64("probe.epochs", static_cast<int64_t>(p.epochs)));
  p.lr = c.f64("probe.lr", p.lr);
  p.batch_size =
      static_cast<size_t>(c.i64("probe.batch_size", static_cast<int64_t>(p.batch_size)));
  return p;
}

FinetuneConfig finetune_config(const Config& c) {
  FinetuneConfig f;
  f.steps = static_cast<size_t>(c.i64("finetune.steps", static_cast<int64_t>(f.steps)));
  f.batch_size = static_cast<size_t>(
      c.i64("finetune.batch_size", static_cast<int64_t>(f.batch_size)));
  f.lr = c.f64("finetune.lr", f.lr);
  f.train_size = static_cast<size_t>(
      c.i64("finetune.train_size", static_cast<int64_t>(f.train_size)));
  f.dev_size =
      static_cast<size_t>(c.i64("finetune.dev_size", static_cast<int64_t>(f.dev_size)));
  f.repair_rate = c.f64("finetune.repair_rate", f.repair_rate);
  return f;
}

void write_resolved(const std::string& out_dir,
                    const std::map<std::string, std::string>& echo) {
  fs::create_directories(out_dir);
  std::string path = out_dir + "/resolved.cfg";
  std::ofstream f(path, std::ios::trunc | std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  for (const auto& [k, v] : echo) f << k << "=" << v << "\n";
}

// Model + matching vocabulary for the analysis verbs. The checkpoint's config
// echo is authoritative for the vocabulary cap; the corpus must reproduce the
// pretraining vocabulary exactly.
struct AnalysisContext {
  LoadedModel model;
  Vocab vocab;
  std::string corpus;
  std::string checkpoint_hash;
};

AnalysisContext load_context(const VerbArgs& a, const Config& c) {
  if (a.checkpoint.empty())
    throw std::runtime_error("--checkpoint is required for this command");
  AnalysisContext ctx;
  ctx.model = load_model(a.checkpoint);
  ctx.checkpoint_hash = checkpoint_hash_hex(a.checkpoint);
  int64_t ckpt_cap = 4096;
  auto it = ctx.model.config.find("vocab.max_size");
  if (it != ctx.model.config.end()) ckpt_cap = std::stoll(it->second);
  size_t cap = static_cast<size_t>(c.i64("vocab.max_size", ckpt_cap));
  ctx.corpus = corpus_path(a, c);
  ctx.vocab = Vocab::build_from_file(ctx.corpus, cap);
  if (ctx.vocab.size() != ctx.model.params.cfg.vocab_size)
    throw std::runtime_error(
        "corpus vocabulary has " + std::to_string(ctx.vocab.size()) +
        " tokens but the checkpoint was trained with " +
        std::to_string(ctx.model.params.cfg.vocab_size) +
        "; pass the pretraining corpus");
  return ctx;
}

// ------------------------------------------------------------------ verbs

int run_build_vocab(const VerbArgs& a) {
  Config c = assemble(a, "");
  c.validate_keys({"corpus.path", "vocab.max_size"});
  size_t cap = static_cast<size_t>(c.i64("vocab.max_size", 4096));
  std::string corpus = corpus_path(a, c);
  Vocab v = Vocab::build_from_file(corpus, cap);
  fs::create_directories(a.out_dir);
  v.save(a.out_dir + "/vocab.txt");
  write_resolved(a.out_dir, {{"corpus.path", corpus},
                             {"vocab.max_size", std::to_string(cap)}});
  std::cout << "vocabulary: " << v.size() << " tokens -> " << a.out_dir
            << "/vocab.txt\n";
  return 0;
}

int run_corrupt_dump(const VerbArgs& a) {
  Config c = assemble(a, "train.seed");
  c.validate_keys({"corpus.path", "vocab.max_size", "train.seed", "model.max_len",
                   "dump.count", "noise.mask_ratio", "noise.span_mean",
                   "noise.trigram_rate", "noise.replace_rate", "noise.mode"});
  NoiseConfig noise;
  noise.mask_ratio = c.f64("noise.mask_ratio", noise.mask_ratio);
  noise.span_mean = c.f64("noise.span_mean", noise.span_mean);
  noise.trigram_rate = c.f64("noise.trigram_rate", noise.trigram_rate);
  noise.replace_rate = c.f64("noise.replace_rate", noise.replace_rate);
  noise.mode = NoiseConfig::parse_mode(c.str("noise.mode", NoiseConfig::mode_name(noise.mode)));
  noise.validate();
  uint64_t seed = static_cast<uint64_t>(c.i64("train.seed", 1));
  size_t max_len = static_cast<size_t>(c.i64("model.max_len", 64));
  size_t cap = static_cast<size_t>(c.i64("vocab.max_size", 4096));
  size_t count = static_cast<size_t>(c.i64("dump.count", 0));  // 0 = all
  std::string corpus = corpus_path(a, c);

  Vocab vocab = Vocab::build_from_file(corpus, cap);
  std::vector<TokenSequence> seqs = load_corpus(corpus, vocab, max_len);
  if (count > 0 && seqs.size() > count) seqs.resize(count);

  fs::create_directories(a.out_dir);
  std::string path = a.out_dir + "/corruptions.tsv";
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "original\tview-a\tview-b\tlabels\tloss-mask\tseed\n";
  for (size_t i = 0; i < seqs.size(); ++i) {
    CorruptionRecord rec =
        corrupt_pair(seqs[i], noise, vocab, example_noise_seed(seed, 0, i));
    for (const auto& w : rec.warnings) std::cerr << "example " << i << ": " << w << "\n";
    out << format_record(rec) << "\n";
  }
  write_resolved(a.out_dir,
                 {{"corpus.path", corpus},
                  {"vocab.max_size", std::to_string(cap)},
                  {"train.seed", std::to_string(seed)},
                  {"model.max_len", std::to_string(max_len)},
                  {"dump.count", std::to_string(count)},
                  {"noise.mask_ratio", fmt_f64(noise.mask_ratio)},
                  {"noise.span_mean", fmt_f64(noise.span_mean)},
                  {"noise.trigram_rate", fmt_f64(noise.trigram_rate)},
                  {"noise.replace_rate", fmt_f64(noise.replace_rate)},
                  {"noise.mode", NoiseConfig::mode_name(noise.mode)}});
  std::cout << "corrupted " << seqs.size() << " examples -> " << path << "\n";
  return 0;
}

int run_pretrain(const VerbArgs& a) {
  Config c = assemble(a, "train.seed");
  c.validate_keys(with(TrainConfig::known_keys(), {"corpus.path"}));
  TrainConfig cfg = TrainConfig::from_config(c);
  std::string corpus = corpus_path(a, c);
  std::vector<std::string> lines = read_lines(corpus);

  PretrainOutcome out = pretrain(cfg, lines, a.out_dir, a.checkpoint);

  TrainConfig resolved = cfg;
  resolved.model = out.params.cfg;  // vocab_size resolved against the corpus
  std::map<std::string, std::string> echo = resolved.echo();
  echo["corpus.path"] = corpus;
  write_resolved(a.out_dir, echo);
  std::cout << "pretrained " << out.steps_run << " steps; final total loss "
            << fmt_f64(out.final_total) << " -> " << out.final_checkpoint << "\n";
  return 0;
}

DriverEval eval_from(const Config& c) {
  DriverEval e;
  e.probe_task = c.str("eval.probe", e.probe_task);
  e.probe = probe_config(c);
  e.probe_train_size = static_cast<size_t>(
      c.i64("probe.train_size", static_cast<int64_t>(e.probe_train_size)));
  e.probe_dev_size = static_cast<size_t>(
      c.i64("probe.dev_size", static_cast<int64_t>(e.probe_dev_size)));
  e.probe_seed =
      static_cast<uint64_t>(c.i64("eval.probe_seed", static_cast<int64_t>(e.probe_seed)));
  return e;
}

int run_sweep(const VerbArgs& a) {
  Config c = assemble(a, "train.seed");
  c.validate_keys(with(TrainConfig::known_keys(),
                       {"corpus.path", "sweep.parameter", "sweep.values", "eval.probe",
                        "eval.probe_seed", "probe.hidden", "probe.epochs", "probe.lr",
                        "probe.batch_size", "probe.train_size", "probe.dev_size"}));
  std::string parameter = c.require("sweep.parameter");
  std::vector<double> values;
  for (const std::string& s : split_list(c.str("sweep.values", "0.01,0.05,0.1,0.5,1")))
    values.push_back(std::stod(s));
  TrainConfig base = TrainConfig::from_config(c);
  std::string corpus = corpus_path(a, c);

  AnalysisReport rep = sweep(parameter, values, base, read_lines(corpus), a.out_dir,
                             eval_from(c));

  std::map<std::string, std::string> echo = rep.provenance;
  echo["corpus.path"] = corpus;
  echo["sweep.values"] = c.str("sweep.values", "0.01,0.05,0.1,0.5,1");
  write_resolved(a.out_dir, echo);
  std::cout << rep.render();
  return 0;
}

int run_ablate(const VerbArgs& a) {
  Config c = assemble(a, "train.seed");
  c.validate_keys(with(TrainConfig::known_keys(),
                       {"corpus.path", "ablate.variants", "eval.probe", "eval.probe_seed",
                        "probe.hidden", "probe.epochs", "probe.lr", "probe.batch_size",
                        "probe.train_size", "probe.dev_size"}));
  std::vector<std::string> variants = split_list(c.str("ablate.variants", ""));
  TrainConfig base = TrainConfig::from_config(c);
  std::string corpus = corpus_path(a, c);

  AnalysisReport rep =
      ablate_objectives(base, read_lines(corpus), a.out_dir, eval_from(c), variants);

  std::map<std::string, std::string> echo = rep.provenance;
  echo["corpus.path"] = corpus;
  echo["ablate.variants"] = c.str("ablate.variants", "M1,M2,M3,M4,M5");
  write_resolved(a.out_dir, echo);
  std::cout << rep.render();
  return 0;
}

int run_finetune(const VerbArgs& a) {
  Config c = assemble(a, "analysis.seed");
  c.validate_keys(with({"corpus.path", "vocab.max_size", "analysis.seed",
                        "finetune.task"},
                       kFinetuneCfgKeys));
  AnalysisContext ctx = load_context(a, c);
  FinetuneConfig fc = finetune_config(c);
  std::string task = c.str("finetune.task", "toy-classification");
  uint64_t seed = static_cast<uint64_t>(c.i64("analysis.seed", 1));

  FinetuneResult res = finetune_task(ctx.model.params, ctx.vocab, task, fc, seed);

  AnalysisReport rep;
  rep.title = "finetune";
  rep.columns = {"field", "value"};
  rep.rows.push_back({"task", res.task});
  rep.rows.push_back({"metric", fmt_f64(res.metric)});
  for (const auto& [k, v] : res.details) rep.rows.push_back({k, fmt_f64(v)});
  rep.provenance = {{"checkpoint", ctx.checkpoint_hash},
                    {"analysis.seed", std::to_string(seed)},
                    {"finetune.task", task},
                    {"finetune.steps", std::to_string(fc.steps)},
                    {"finetune.batch_size", std::to_string(fc.batch_size)},
                    {"finetune.lr", fmt_f64(fc.lr)},
                    {"finetune.train_size", std::to_string(fc.train_size)},
                    {"finetune.dev_size", std::to_string(fc.dev_size)},
                    {"finetune.repair_rate", fmt_f64(fc.repair_rate)},
                    {"corpus.path", ctx.corpus}};
  fs::create_directories(a.out_dir);
  rep.write(a.out_dir + "/finetune.tsv");
  write_resolved(a.out_dir, rep.provenance);
  std::cout << res.task << " metric " << fmt_f64(res.metric) << " -> " << a.out_dir
            << "/finetune.tsv\n";
  return 0;
}

int run_probe_verb(const VerbArgs& a) {
  Config c = assemble(a, "analysis.seed");
  c.validate_keys(with({"corpus.path", "vocab.max_size", "analysis.seed", "probe.task"},
                       kProbeCfgKeys));
  AnalysisContext ctx = load_context(a, c);
  ProbeConfig pc = probe_config(c);
  uint64_t seed = static_cast<uint64_t>(c.i64("analysis.seed", 1));

  AnalysisReport rep;
  rep.title = "probe";
  rep.columns = {"task", "classes", "train-acc", "dev-acc"};
  for (const std::string& name : split_list(c.str("probe.task", "SeLen,WC,BShif"))) {
    ProbeTask task = ProbeTask::make(name);
    task.train_size = static_cast<size_t>(
        c.i64("probe.train_size", static_cast<int64_t>(task.train_size)));
    task.dev_size =
        static_cast<size_t>(c.i64("probe.dev_size", static_cast<int64_t>(task.dev_size)));
    ProbeResult r = run_probe(ctx.model.params, ctx.vocab, task, pc, seed);
    rep.rows.push_back({r.task, std::to_string(r.classes), fmt_f64(r.train_accuracy),
                        fmt_f64(r.dev_accuracy)});
  }
  rep.provenance = {{"checkpoint", ctx.checkpoint_hash},
                    {"analysis.seed", std::to_string(seed)},
                    {"probe.hidden", std::to_string(pc.hidden)},
                    {"probe.epochs", std::to_string(pc.epochs)},
                    {"probe.lr", fmt_f64(pc.lr)},
                    {"probe.batch_size", std::to_string(pc.batch_size)},
                    {"corpus.path", ctx.corpus}};
  fs::create_directories(a.out_dir);
  rep.write(a.out_dir + "/probe.tsv");
  write_resolved(a.out_dir, rep.provenance);
  std::cout << rep.render();
  return 0;
}

int run_activation_report(const VerbArgs& a) {
  Config c = assemble(a, "analysis.seed");
  c.validate_keys({"corpus.path", "vocab.max_size", "analysis.seed",
                   "activation.batch_size", "activation.max_examples"});
  AnalysisContext ctx = load_context(a, c);
  size_t batch_size = static_cast<size_t>(c.i64("activation.batch_size", 16));
  size_t max_examples = static_cast<size_t>(c.i64("activation.max_examples", 128));
  uint64_t seed = static_cast<uint64_t>(c.i64("analysis.seed", 1));

  std::vector<TokenSequence> seqs =
      load_corpus(ctx.corpus, ctx.vocab, ctx.model.params.cfg.max_len);
  if (max_examples > 0 && seqs.size() > max_examples) seqs.resize(max_examples);
  std::vector<Batch> batches = make_batches(seqs, batch_size, seed);

  ActivationReport ar = neuron_activation_rate(ctx.model.params, batches);

  AnalysisReport rep;
  rep.title = "activation-rates";
  rep.columns = {"side", "layer", "rate"};
  for (size_t i = 0; i < ar.encoder_rates.size(); ++i)
    rep.rows.push_back({"encoder", std::to_string(i), fmt_f64(ar.encoder_rates[i])});
  rep.rows.push_back({"encoder", "avg", fmt_f64(ar.encoder_avg)});
  for (size_t i = 0; i < ar.decoder_rates.size(); ++i)
    rep.rows.push_back({"decoder", std::to_string(i), fmt_f64(ar.decoder_rates[i])});
  rep.rows.push_back({"decoder", "avg", fmt_f64(ar.decoder_avg)});
  rep.provenance = {{"checkpoint", ctx.checkpoint_hash},
                    {"analysis.seed", std::to_string(seed)},
                    {"activation.batch_size", std::to_string(batch_size)},
                    {"activation.max_examples", std::to_string(max_examples)},
                    {"approximate", ar.approximate ? "yes" : "no"},
                    {"encoder-positions", std::to_string(ar.encoder_positions)},
                    {"decoder-positions", std::to_string(ar.decoder_positions)},
                    {"corpus.path", ctx.corpus}};
  fs::create_directories(a.out_dir);
  rep.write(a.out_dir + "/activation.tsv");
  write_resolved(a.out_dir, rep.provenance);
  std::cout << rep.render();
  return 0;
}

int run_layer_ablation(const VerbArgs& a) {
  Config c = assemble(a, "analysis.seed");
  c.validate_keys(with({"corpus.path", "vocab.max_size", "analysis.seed", "ablation.ks",
                        "ablation.task"},
                       kFinetuneCfgKeys));
  AnalysisContext ctx = load_context(a, c);
  FinetuneConfig fc = finetune_config(c);
  std::string task = c.str("ablation.task", "toy-classification");
  uint64_t seed = static_cast<uint64_t>(c.i64("analysis.seed", 1));
  std::vector<size_t> ks;
  for (const std::string& s : split_list(c.str("ablation.ks", "1")))
    ks.push_back(static_cast<size_t>(std::stoull(s)));

  std::vector<AblationRow> rows =
      layer_ablation(ctx.model.params, ctx.vocab, task, ks, fc, seed);

  AnalysisReport rep;
  rep.title = "layer-ablation";
  rep.columns = {"side", "k", "metric", "note"};
  for (const AblationRow& r : rows)
    rep.rows.push_back({r.side, std::to_string(r.k),
                        r.metric ? fmt_f64(*r.metric) : std::string("-"), r.note});
  rep.provenance = {{"checkpoint", ctx.checkpoint_hash},
                    {"analysis.seed", std::to_string(seed)},
                    {"ablation.task", task},
                    {"ablation.ks", c.str("ablation.ks", "1")},
                    {"finetune.steps", std::to_string(fc.steps)},
                    {"finetune.batch_size", std::to_string(fc.batch_size)},
                    {"finetune.lr", fmt_f64(fc.lr)},
                    {"finetune.train_size", std::to_string(fc.train_size)},
                    {"finetune.dev_size", std::to_string(fc.dev_size)},
                    {"finetune.repair_rate", fmt_f64(fc.repair_rate)},
                    {"corpus.path", ctx.corpus}};
  fs::create_directories(a.out_dir);
  rep.write(a.out_dir + "/layer-ablation.tsv");
  write_resolved(a.out_dir, rep.provenance);
  std::cout << rep.render();
  return 0;
}

int run_grad_check(const VerbArgs& a) {
  Config c = assemble(a, "train.seed");
  c.validate_keys(with(TrainConfig::known_keys(), {"gradcheck.h", "gradcheck.tol"}));
  TrainConfig cfg = TrainConfig::from_config(c);
  double h = c.f64("gradcheck.h", 1e-5);
  double tol = c.f64("gradcheck.tol", 1e-4);

  GradCheckReport rep = full_loss_grad_check(cfg, h, tol);

  fs::create_directories(a.out_dir);
  std::string path = a.out_dir + "/grad-check.txt";
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << rep.render();

  std::map<std::string, std::string> echo = cfg.echo();
  echo["gradcheck.h"] = fmt_f64(h);
  echo["gradcheck.tol"] = fmt_f64(tol);
  write_resolved(a.out_dir, echo);
  std::cout << rep.render();
  return rep.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"s2slab — encoder-enhanced seq2seq pretraining laboratory"};
  app.require_subcommand(1);
  std::vector<std::unique_ptr<VerbArgs>> store;
  std::function<int()> action;

  auto wire = [&](CLI::App* sub, VerbArgs& a, int (*fn)(const VerbArgs&)) {
    sub->callback([&a, fn, &action]() { action = [&a, fn]() { return fn(a); }; });
  };

  {
    CLI::App* sub = app.add_subcommand("build-vocab", "build the corpus vocabulary");
    VerbArgs& a = add_common(sub, store, "build-vocab", "", true, false);
    a.corpus_opt = sub->get_option("--corpus");
    wire(sub, a, run_build_vocab);
  }
  {
    CLI::App* sub =
        app.add_subcommand("corrupt-dump", "dump paired corrupted views of the corpus");
    VerbArgs& a = add_common(sub, store, "corrupt-dump", "train.seed", true, false);
    a.corpus_opt = sub->get_option("--corpus");
    wire(sub, a, run_corrupt_dump);
  }
  {
    CLI::App* sub = app.add_subcommand("pretrain", "run the pretraining loop");
    VerbArgs& a = add_common(sub, store, "pretrain", "train.seed", true, true,
                             "checkpoint stem to resume from");
    a.corpus_opt = sub->get_option("--corpus");
    wire(sub, a, run_pretrain);
  }
  {
    CLI::App* sub = app.add_subcommand(
        "sweep", "pretrain across a list of objective-weight values");
    VerbArgs& a = add_common(sub, store, "sweep", "train.seed", true, false);
    a.corpus_opt = sub->get_option("--corpus");
    wire(sub, a, run_sweep);
  }
  {
    CLI::App* sub = app.add_subcommand("ablate-objectives",
                                       "pretrain the M1..M5 objective combinations");
    VerbArgs& a = add_common(sub, store, "ablate-objectives", "train.seed", true, false);
    a.corpus_opt = sub->get_option("--corpus");
    wire(sub, a, run_ablate);
  }
  {
    CLI::App* sub =
        app.add_subcommand("finetune", "fine-tune a checkpoint on a toy downstream task");
    VerbArgs& a = add_common(sub, store, "finetune", "analysis.seed", true, true,
                             "pretrained checkpoint stem");
    a.corpus_opt = sub->get_option("--corpus");
    wire(sub, a, run_finetune);
  }
  {
    CLI::App* sub = app.add_subcommand(
        "probe", "frozen-encoder probing classifiers on a checkpoint");
    VerbArgs& a = add_common(sub, store, "probe", "analysis.seed", true, true,
                             "checkpoint stem to probe");
    a.corpus_opt = sub->get_option("--corpus");
    wire(sub, a, run_probe_verb);
  }
  {
    CLI::App* sub = app.add_subcommand("activation-report",
                                       "FFN neuron activation rates per layer");
    VerbArgs& a = add_common(sub, store, "activation-report", "analysis.seed", true, true,
                             "checkpoint stem to analyze");
    a.corpus_opt = sub->get_option("--corpus");
    wire(sub, a, run_activation_report);
  }
  {
    CLI::App* sub = app.add_subcommand(
        "layer-ablation", "drop top layers per side, fine-tune briefly and compare");
    VerbArgs& a = add_common(sub, store, "layer-ablation", "analysis.seed", true, true,
                             "checkpoint stem to ablate");
    a.corpus_opt = sub->get_option("--corpus");
    wire(sub, a, run_layer_ablation);
  }
  {
    CLI::App* sub = app.add_subcommand(
        "grad-check", "finite-difference check of the combined objective's gradients");
    VerbArgs& a = add_common(sub, store, "grad-check", "train.seed", false, false);
    wire(sub, a, run_grad_check);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    return action ? action() : 1;
  } catch (const NumericalAbort& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
