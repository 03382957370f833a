#include "s2slab/drivers.hpp"

#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace s2slab {

LoadedModel load_model(const std::string& stem) {
  Checkpoint ck = load_checkpoint(stem);
  LoadedModel m;
  m.config = ck.config;
  m.params = ModelParams::init(ModelConfig::from_echo(ck.config), 0);
  restore_tensors(ck, m.params.all());
  return m;
}

GradCheckReport full_loss_grad_check(const TrainConfig& cfg, double h, double tol) {
  TrainConfig rc = cfg;
  rc.validate();
  size_t specials = static_cast<size_t>(Vocab::num_specials());
  if (rc.model.vocab_size < specials + 4)
    throw std::runtime_error("grad-check: model.vocab_size must be at least " +
                             std::to_string(specials + 4));
  if (rc.model.max_len < 8)
    throw std::runtime_error("grad-check: model.max_len must be at least 8");

  // Synthetic vocabulary of exactly vocab_size entries.
  std::vector<std::string> words;
  std::string all_words;
  for (size_t i = 0; i + specials < rc.model.vocab_size; ++i) {
    words.push_back("w" + std::to_string(i));
    all_words += (i ? " " : "") + words.back();
  }
  Vocab vocab = Vocab::build_from_lines({all_words}, rc.model.vocab_size);
  rc.model.validate();

  // One deterministic batch of synthetic sentences.
  Rng rng = Rng::for_stream(rc.seed, 0x67636b /* gck */, 0);
  size_t max_content = std::min<size_t>(10, rc.model.max_len - 2);
  std::vector<TokenSequence> sentences;
  for (size_t r = 0; r < rc.batch_size; ++r) {
    size_t len = static_cast<size_t>(rng.uniform_int(5, static_cast<int64_t>(max_content)));
    std::string line;
    for (size_t t = 0; t < len; ++t)
      line += (t ? " " : "") + words[static_cast<size_t>(
                  rng.uniform_int(0, static_cast<int64_t>(words.size()) - 1))];
    sentences.push_back(vocab.encode(line));
  }
  std::vector<size_t> picks(sentences.size());
  std::iota(picks.begin(), picks.end(), size_t{0});
  StepData data = corrupt_step_batch(sentences, picks, rc.noise, vocab, rc.seed, 1);

  ModelParams params = ModelParams::init(rc.model, rc.seed);
  perturb_values(params.all(), 0.05, rc.seed);

  auto f = [&]() {
    // dropout off: the loss must be a deterministic function of the params
    return compute_losses(data, params, vocab, rc.objective, ForwardOptions{}).terms.total;
  };
  return grad_check(f, params.all(), h, tol);
}

namespace {

std::string fmt_f64(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_short(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

std::string cell(const std::optional<double>& v) {
  return v ? fmt_f64(*v) : "-";
}

struct RunEval {
  PretrainOutcome outcome;
  double probe_accuracy = 0.0;
  std::string checkpoint_hash;
};

RunEval run_and_probe(const TrainConfig& cfg, const std::vector<std::string>& corpus_lines,
                      const std::string& run_dir, const DriverEval& eval) {
  RunEval r;
  r.outcome = pretrain(cfg, corpus_lines, run_dir);
  ProbeTask task = ProbeTask::make(eval.probe_task);
  task.train_size = eval.probe_train_size;
  task.dev_size = eval.probe_dev_size;
  ProbeResult probe =
      run_probe(r.outcome.params, r.outcome.vocab, task, eval.probe, eval.probe_seed);
  r.probe_accuracy = probe.dev_accuracy;
  r.checkpoint_hash = checkpoint_hash_hex(r.outcome.final_checkpoint);
  return r;
}

std::map<std::string, std::string> base_provenance(const TrainConfig& base,
                                                   const DriverEval& eval) {
  std::map<std::string, std::string> p = base.echo();
  p["eval.probe"] = eval.probe_task;
  p["eval.probe_seed"] = std::to_string(eval.probe_seed);
  p["eval.probe_train_size"] = std::to_string(eval.probe_train_size);
  p["eval.probe_dev_size"] = std::to_string(eval.probe_dev_size);
  return p;
}

}  // namespace

std::vector<ObjectiveVariant> objective_variants() {
  return {{"M1", "nll*"},
          {"M2", "nll*,de"},
          {"M3", "nll*,de,cl"},
          {"M4", "nll*,nll,cl"},
          {"M5", "nll*,nll,de,cl"}};
}

AnalysisReport sweep(const std::string& parameter, const std::vector<double>& values,
                     const TrainConfig& base, const std::vector<std::string>& corpus_lines,
                     const std::string& out_dir, const DriverEval& eval) {
  if (parameter != "lambda_de" && parameter != "lambda_cl")
    throw std::runtime_error("sweep: parameter must be lambda_de or lambda_cl, got '" +
                             parameter + "'");
  if (values.empty()) throw std::runtime_error("sweep: value list is empty");
  const bool de_swept = parameter == "lambda_de";
  if (de_swept ? !base.objective.use_de : !base.objective.use_cl)
    throw std::runtime_error("sweep: the swept term is disabled in the objective");

  AnalysisReport rep;
  rep.title = "weight-sweep";
  rep.columns = {parameter, "nll-star", "nll", "de", "cl", "total", "probe-acc",
                 "checkpoint"};
  rep.provenance = base_provenance(base, eval);
  rep.provenance["sweep.parameter"] = parameter;

  for (double value : values) {
    TrainConfig cfg = base;
    ObjectiveConfig defaults;
    if (de_swept) {
      cfg.objective.lambda_de = value;
      cfg.objective.lambda_cl = defaults.lambda_cl;  // hold the other at default
    } else {
      cfg.objective.lambda_cl = value;
      cfg.objective.lambda_de = defaults.lambda_de;
    }
    std::string run_dir = out_dir + "/" + parameter + "-" + fmt_short(value);
    RunEval r = run_and_probe(cfg, corpus_lines, run_dir, eval);

    rep.rows.push_back({fmt_short(value), cell(r.outcome.final_nll_star),
                        cell(r.outcome.final_nll), cell(r.outcome.final_de),
                        cell(r.outcome.final_cl), fmt_f64(r.outcome.final_total),
                        fmt_f64(r.probe_accuracy), r.checkpoint_hash});
  }

  rep.write(out_dir + "/sweep.tsv");
  return rep;
}

AnalysisReport ablate_objectives(const TrainConfig& base,
                                 const std::vector<std::string>& corpus_lines,
                                 const std::string& out_dir, const DriverEval& eval,
                                 const std::vector<std::string>& which) {
  std::vector<ObjectiveVariant> grid = objective_variants();
  std::vector<ObjectiveVariant> chosen;
  if (which.empty()) {
    chosen = grid;
  } else {
    for (const std::string& name : which) {
      bool found = false;
      for (const auto& v : grid)
        if (v.name == name) {
          chosen.push_back(v);
          found = true;
        }
      if (!found) throw std::runtime_error("ablate: unknown variant '" + name + "'");
    }
  }

  AnalysisReport rep;
  rep.title = "objective-ablation";
  rep.columns = {"variant",  "nll-star",  "nll",       "de",
                 "cl",       "final-total", "probe-acc", "checkpoint"};
  rep.provenance = base_provenance(base, eval);

  for (const auto& variant : chosen) {
    TrainConfig cfg = base;
    cfg.objective.set_enabled_terms(variant.enabled);
    RunEval r = run_and_probe(cfg, corpus_lines, out_dir + "/" + variant.name, eval);

    auto mark = [&](bool on) { return on ? std::string("x") : std::string(""); };
    rep.rows.push_back({variant.name, mark(cfg.objective.use_nll_star),
                        mark(cfg.objective.use_nll), mark(cfg.objective.use_de),
                        mark(cfg.objective.use_cl), fmt_f64(r.outcome.final_total),
                        fmt_f64(r.probe_accuracy), r.checkpoint_hash});
  }

  rep.write(out_dir + "/ablation.tsv");
  return rep;
}

}  // namespace s2slab
