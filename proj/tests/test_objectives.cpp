#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "s2slab/gradcheck.hpp"
#include "s2slab/objectives.hpp"
#include "s2slab/rng.hpp"

using namespace s2slab;

namespace {

std::vector<double> rand_vec(size_t n, uint64_t seed, double scale = 1.0) {
  Rng rng = Rng::for_stream(seed, 0x6f626a);
  std::vector<double> v(n);
  for (auto& x : v) x = scale * (2.0 * rng.uniform() - 1.0);
  return v;
}

// Independent flat-loop: mean over mask=1 of -log softmax(logits)[label].
double ce_oracle(const std::vector<double>& logits, size_t positions, size_t classes,
                 const std::vector<int32_t>& labels, const std::vector<uint8_t>& mask) {
  double total = 0.0;
  size_t n = 0;
  for (size_t p = 0; p < positions; ++p) {
    if (!mask[p]) continue;
    const double* row = logits.data() + p * classes;
    double mx = row[0];
    for (size_t c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
    double z = 0.0;
    for (size_t c = 0; c < classes; ++c) z += std::exp(row[c] - mx);
    total += -(row[labels[p]] - mx - std::log(z));
    ++n;
  }
  return total / static_cast<double>(n);
}

double cosine(const double* a, const double* b, size_t d) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t k = 0; k < d; ++k) {
    dot += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Independent flat-loop InfoNCE with cosine similarity.
double contrastive_oracle(const std::vector<double>& h, const std::vector<double>& hp,
                          size_t n, size_t d, double tau) {
  double total = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double pos = cosine(h.data() + i * d, hp.data() + i * d, d) / tau;
    double mx = -1e300;
    std::vector<double> sims(n);
    for (size_t j = 0; j < n; ++j) {
      sims[j] = cosine(h.data() + i * d, hp.data() + j * d, d) / tau;
      mx = std::max(mx, sims[j]);
    }
    double z = 0.0;
    for (size_t j = 0; j < n; ++j) z += std::exp(sims[j] - mx);
    total += -(pos - mx - std::log(z));
  }
  return total / static_cast<double>(n);
}

}  // namespace

TEST_CASE("reconstruction loss: uniform logits give ln V") {
  size_t b = 2, t = 3, v = 4;
  Tensor logits = Tensor::zeros({b, t, v}, true);
  std::vector<TokenId> targets = {1, 2, 3, 0, 1, 2};
  std::vector<uint8_t> mask(6, 1);
  Tensor loss = loss_reconstruction(logits, targets, mask);
  CHECK(loss.item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("reconstruction loss: confident correct prediction is ~0") {
  size_t v = 5;
  std::vector<double> data(1 * 2 * v, 0.0);
  std::vector<TokenId> targets = {3, 1};
  data[0 * v + 3] = 1e9;
  data[1 * v + 1] = 1e9;
  Tensor logits = Tensor::constant({1, 2, v}, std::move(data));
  Tensor loss = loss_reconstruction(logits, targets, {1, 1});
  CHECK(loss.item() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("reconstruction loss matches the flat-loop oracle to 1e-10") {
  size_t b = 2, t = 7, v = 11;
  std::vector<double> data = rand_vec(b * t * v, 41, 3.0);
  std::vector<TokenId> targets;
  std::vector<uint8_t> mask;
  Rng rng = Rng::for_stream(42, 0);
  for (size_t i = 0; i < b * t; ++i) {
    targets.push_back(static_cast<TokenId>(rng.uniform_int(0, static_cast<int64_t>(v) - 1)));
    mask.push_back(rng.uniform() < 0.7 ? 1 : 0);
  }
  mask[0] = 1;  // ensure nonempty
  Tensor logits = Tensor::constant({b, t, v}, std::vector<double>(data));
  double got = loss_reconstruction(logits, targets, mask).item();
  double want = ce_oracle(data, b * t, v, targets, mask);
  CHECK(std::abs(got - want) < 1e-10);
}

TEST_CASE("reconstruction loss ignores masked-out positions and rejects empty masks") {
  size_t v = 4;
  std::vector<double> d1 = rand_vec(2 * v, 7);
  std::vector<double> d2 = d1;
  d2[v] += 100.0;  // perturb position 1, which is masked out
  std::vector<TokenId> targets = {2, 3};
  Tensor a = Tensor::constant({1, 2, v}, std::move(d1));
  Tensor b = Tensor::constant({1, 2, v}, std::move(d2));
  CHECK(loss_reconstruction(a, targets, {1, 0}).item() ==
        loss_reconstruction(b, targets, {1, 0}).item());
  CHECK_THROWS(loss_reconstruction(a, targets, {0, 0}));
  CHECK_THROWS(loss_reconstruction(a, {2}, {1, 0}));  // size mismatch
}

TEST_CASE("reconstruction loss gradient matches finite differences") {
  size_t b = 1, t = 4, v = 6;
  Tensor logits = Tensor::param("logits", {b, t, v}, rand_vec(b * t * v, 99, 2.0));
  std::vector<TokenId> targets = {5, 0, 3, 2};
  std::vector<uint8_t> mask = {1, 1, 0, 1};
  auto f = [&]() { return loss_reconstruction(logits, targets, mask); };
  GradCheckReport rep = grad_check(f, {logits}, 1e-5, 1e-7);
  INFO(rep.render());
  CHECK(rep.pass);
}

TEST_CASE("denoise loss: perfect one-hot prediction is 0, uniform is ln 3") {
  std::vector<int8_t> labels = {0, 2, 1, 0};
  std::vector<uint8_t> mask = {1, 1, 1, 1};
  std::vector<double> hot(4 * 3, 0.0);
  for (size_t p = 0; p < 4; ++p) hot[p * 3 + static_cast<size_t>(labels[p])] = 1e9;
  CHECK(loss_denoise(Tensor::constant({1, 4, 3}, std::move(hot)), labels, mask, nullptr)
            .item() == doctest::Approx(0.0).epsilon(1e-12));

  Tensor uniform = Tensor::zeros({1, 4, 3});
  CHECK(loss_denoise(uniform, labels, mask, nullptr).item() ==
        doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("denoise loss matches the flat-loop oracle to 1e-10") {
  size_t b = 3, t = 9;
  std::vector<double> data = rand_vec(b * t * 3, 55, 2.5);
  std::vector<int8_t> labels;
  std::vector<uint8_t> mask;
  Rng rng = Rng::for_stream(56, 0);
  for (size_t i = 0; i < b * t; ++i) {
    labels.push_back(static_cast<int8_t>(rng.uniform_int(0, 2)));
    mask.push_back(rng.uniform() < 0.6 ? 1 : 0);
  }
  mask[3] = 1;
  Tensor logits = Tensor::constant({b, t, 3}, std::vector<double>(data));
  double got = loss_denoise(logits, labels, mask, nullptr).item();
  std::vector<int32_t> wide(labels.begin(), labels.end());
  double want = ce_oracle(data, b * t, 3, wide, mask);
  CHECK(std::abs(got - want) < 1e-10);
}

TEST_CASE("denoise loss with zero eligible positions is 0 with a warning") {
  Tensor logits = Tensor::constant({1, 2, 3}, rand_vec(6, 8));
  std::vector<std::string> warnings;
  Tensor loss = loss_denoise(logits, {0, 1}, {0, 0}, &warnings);
  CHECK(loss.item() == 0.0);
  CHECK_FALSE(loss.requires_grad());
  CHECK(warnings.size() == 1);
  // out-of-range label under the mask is rejected; outside the mask ignored
  CHECK_THROWS(loss_denoise(logits, {5, 1}, {1, 1}, nullptr));
  CHECK_NOTHROW(loss_denoise(logits, {5, 1}, {0, 1}, nullptr));
}

TEST_CASE("denoise loss gradient matches finite differences") {
  Tensor logits = Tensor::param("logits", {2, 3, 3}, rand_vec(18, 77, 1.5));
  std::vector<int8_t> labels = {0, 1, 2, 2, 1, 0};
  std::vector<uint8_t> mask = {1, 0, 1, 1, 1, 0};
  auto f = [&]() { return loss_denoise(logits, labels, mask, nullptr); };
  GradCheckReport rep = grad_check(f, {logits}, 1e-5, 1e-7);
  INFO(rep.render());
  CHECK(rep.pass);
}

TEST_CASE("contrastive loss: a single identical pair scores 0") {
  Tensor h = Tensor::constant({1, 3}, {0.3, -0.4, 0.5});
  Tensor hp = Tensor::constant({1, 3}, {0.3, -0.4, 0.5});
  CHECK(loss_contrastive(h, hp, 1.0).item() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("contrastive loss: two orthogonal aligned pairs give softplus(-1) per row") {
  Tensor h = Tensor::constant({2, 2}, {1.0, 0.0, 0.0, 1.0});
  Tensor hp = Tensor::constant({2, 2}, {1.0, 0.0, 0.0, 1.0});
  double want = std::log1p(std::exp(-1.0));  // softplus(-1) ≈ 0.3132616875182229
  double got = loss_contrastive(h, hp, 1.0).item();
  CHECK(std::abs(got - want) < 1e-10);
  CHECK(got == doctest::Approx(0.3132616875182228).epsilon(1e-12));
}

TEST_CASE("contrastive loss is invariant to positive per-row rescaling") {
  size_t n = 4, d = 6;
  std::vector<double> h = rand_vec(n * d, 31);
  std::vector<double> hp = rand_vec(n * d, 32);
  std::vector<double> h2 = h, hp2 = hp;
  double scales[] = {2.0, 0.01, 7.5, 300.0};
  for (size_t i = 0; i < n; ++i)
    for (size_t k = 0; k < d; ++k) {
      h2[i * d + k] *= scales[i];
      hp2[i * d + k] *= scales[(i + 1) % n];
    }
  double a = loss_contrastive(Tensor::constant({n, d}, std::move(h)),
                              Tensor::constant({n, d}, std::move(hp)), 0.7)
                 .item();
  double b = loss_contrastive(Tensor::constant({n, d}, std::move(h2)),
                              Tensor::constant({n, d}, std::move(hp2)), 0.7)
                 .item();
  // the 1e-12 epsilon guard inside normalization leaves a scale-dependent
  // residual of ~1e-11; anything tighter than 1e-9 is numerically meaningless
  CHECK(a == doctest::Approx(b).epsilon(1e-9));
}

TEST_CASE("contrastive loss matches the flat-loop oracle to 1e-10") {
  size_t n = 5, d = 8;
  double tau = 0.5;
  std::vector<double> h = rand_vec(n * d, 61);
  std::vector<double> hp = rand_vec(n * d, 62);
  double got = loss_contrastive(Tensor::constant({n, d}, std::vector<double>(h)),
                                Tensor::constant({n, d}, std::vector<double>(hp)), tau)
                   .item();
  double want = contrastive_oracle(h, hp, n, d, tau);
  CHECK(std::abs(got - want) < 1e-10);
}

TEST_CASE("contrastive loss strictly decreases as a positive rotates toward its anchor") {
  // pair 1 anchor at (1,0); its view sweeps along the unit circle toward it.
  // pair 2 fixed at (0,1). Shrinking the angle raises the positive similarity
  // and lowers the similarity to the other anchor simultaneously.
  auto loss_at = [](double theta) {
    Tensor h = Tensor::constant({2, 2}, {1.0, 0.0, 0.0, 1.0});
    Tensor hp = Tensor::constant({2, 2}, {std::cos(theta), std::sin(theta), 0.0, 1.0});
    return loss_contrastive(h, hp, 1.0).item();
  };
  double prev = loss_at(1.2);
  for (double theta : {0.9, 0.6, 0.3, 0.1, 0.02}) {
    double cur = loss_at(theta);
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("contrastive loss rejects zero-norm rows and shape mismatches") {
  Tensor h = Tensor::constant({2, 2}, {1.0, 0.0, 0.0, 0.0});
  Tensor hp = Tensor::constant({2, 2}, {1.0, 0.0, 0.0, 1.0});
  CHECK_THROWS(loss_contrastive(h, hp, 1.0));
  CHECK_THROWS(loss_contrastive(hp, h, 1.0));
  Tensor bad = Tensor::constant({1, 2}, {1.0, 0.0});
  CHECK_THROWS(loss_contrastive(hp, bad, 1.0));
  CHECK_THROWS(loss_contrastive(hp, hp, 0.0));
}

TEST_CASE("symmetric contrastive mode averages both directions") {
  size_t n = 3, d = 4;
  std::vector<double> h = rand_vec(n * d, 71);
  std::vector<double> hp = rand_vec(n * d, 72);
  Tensor th = Tensor::constant({n, d}, std::vector<double>(h));
  Tensor thp = Tensor::constant({n, d}, std::vector<double>(hp));
  double fwd = loss_contrastive(th, thp, 1.0).item();
  double bwd = loss_contrastive(thp, th, 1.0).item();
  double sym = loss_contrastive(th, thp, 1.0, true).item();
  CHECK(sym == doctest::Approx(0.5 * (fwd + bwd)).epsilon(1e-12));
  CHECK(fwd != bwd);  // generic case: the two directions differ
}

TEST_CASE("contrastive loss gradient matches finite differences") {
  size_t n = 3, d = 5;
  Tensor h = Tensor::param("h", {n, d}, rand_vec(n * d, 81));
  Tensor hp = Tensor::param("hp", {n, d}, rand_vec(n * d, 82));
  for (bool symmetric : {false, true}) {
    auto f = [&]() { return loss_contrastive(h, hp, 0.8, symmetric); };
    GradCheckReport rep = grad_check(f, {h, hp}, 1e-5, 1e-6);
    INFO(rep.render());
    CHECK(rep.pass);
  }
}

TEST_CASE("combined objective weights terms and reports disabled cells as '-'") {
  ObjectiveConfig cfg;
  Tensor a = Tensor::scalar(1.25), b = Tensor::scalar(0.5);
  Tensor c = Tensor::scalar(2.0), d = Tensor::scalar(4.0);

  LossTerms all = combine_losses(cfg, a, b, c, d);
  CHECK(all.total.item() == doctest::Approx(1.25 + 0.5 + 0.05 * 2.0 + 0.1 * 4.0)
                                .epsilon(1e-12));
  CHECK(metric_cell(all.nll_star) == "1.25");
  CHECK(metric_cell(all.de) == "2");

  cfg.lambda_de = cfg.lambda_cl = 0.0;
  CHECK(combine_losses(cfg, a, b, c, d).total.item() ==
        doctest::Approx(1.75).epsilon(1e-12));

  LossTerms only_star = combine_losses(cfg, a, std::nullopt, std::nullopt, std::nullopt);
  CHECK(only_star.total.item() == doctest::Approx(1.25).epsilon(1e-12));
  CHECK(metric_cell(only_star.nll) == "-");
  CHECK(metric_cell(only_star.cl) == "-");
  CHECK_THROWS(combine_losses(cfg, std::nullopt, std::nullopt, std::nullopt, std::nullopt));
}

TEST_CASE("objective config parses and echoes enabled-term lists") {
  ObjectiveConfig cfg;
  CHECK(cfg.enabled_terms() == "nll*,nll,de,cl");

  cfg.set_enabled_terms("nll*");
  CHECK(cfg.use_nll_star);
  CHECK_FALSE(cfg.use_nll);
  CHECK_FALSE(cfg.use_de);
  CHECK_FALSE(cfg.use_cl);
  CHECK(cfg.enabled_terms() == "nll*");

  cfg.set_enabled_terms("nll*,de,cl");
  CHECK(cfg.enabled_terms() == "nll*,de,cl");
  CHECK_THROWS(cfg.set_enabled_terms("nll*,bogus"));
  CHECK_THROWS(cfg.set_enabled_terms(""));

  ObjectiveConfig bad;
  bad.tau = 0.0;
  CHECK_THROWS(bad.validate());
  bad = ObjectiveConfig{};
  bad.lambda_de = -0.1;
  CHECK_THROWS(bad.validate());
}
