#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "s2slab/checkpoint.hpp"
#include "s2slab/model.hpp"

using namespace s2slab;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("s2slab_ckpt_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string stem(const std::string& name) const { return (path / name).string(); }
};

Vocab test_vocab() {
  std::vector<std::string> lines = {"alpha beta gamma delta epsilon zeta"};
  return Vocab::build_from_lines(lines, 32);
}

ModelConfig tiny_config(const Vocab& v) {
  ModelConfig cfg;
  cfg.vocab_size = v.size();
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.ffn_dim = 12;
  cfg.max_len = 16;
  cfg.dropout = 0.0;
  return cfg;
}

std::vector<char> slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::vector<char>((std::istreambuf_iterator<char>(f)),
                           std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("checkpoint round-trips parameters bit-exactly with config echo") {
  TempDir dir;
  Vocab v = test_vocab();
  ModelConfig cfg = tiny_config(v);
  ModelParams p = ModelParams::init(cfg, 123);

  std::map<std::string, std::string> meta = cfg.echo();
  meta["train.step"] = "17";
  meta["train.seed"] = "99";
  save_checkpoint(dir.stem("m"), meta, p.all());

  Checkpoint ckpt = load_checkpoint(dir.stem("m"));
  CHECK(ckpt.config.at("train.step") == "17");
  CHECK(ckpt.config.at("model.d_model") == "8");
  CHECK(ckpt.entries.size() == p.all().size());

  ModelConfig cfg2 = ModelConfig::from_echo(ckpt.config);
  CHECK(cfg2.d_model == cfg.d_model);
  CHECK(cfg2.vocab_size == cfg.vocab_size);

  ModelParams q = ModelParams::init(cfg2, 777);  // different values
  CHECK(q.tok_emb.value() != p.tok_emb.value());
  restore_tensors(ckpt, q.all());
  auto pa = p.all(), qa = q.all();
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(qa[i].name() == pa[i].name());
    CHECK(qa[i].value() == pa[i].value());  // bitwise equality
  }
}

TEST_CASE("saving twice produces byte-identical files") {
  TempDir dir;
  Vocab v = test_vocab();
  ModelParams p = ModelParams::init(tiny_config(v), 5);
  std::map<std::string, std::string> meta = {{"train.step", "3"}};
  save_checkpoint(dir.stem("a"), meta, p.all());
  save_checkpoint(dir.stem("b"), meta, p.all());
  CHECK(slurp(dir.stem("a") + ".ckpt") == slurp(dir.stem("b") + ".ckpt"));
  CHECK(slurp(dir.stem("a") + ".bin") == slurp(dir.stem("b") + ".bin"));
  CHECK_FALSE(slurp(dir.stem("a") + ".bin").empty());
}

TEST_CASE("payload corruption is detected by the checksum") {
  TempDir dir;
  Tensor t = Tensor::param("w", {2, 2}, {1.0, 2.0, 3.0, 4.0});
  save_checkpoint(dir.stem("c"), {}, {t});

  std::string bin = dir.stem("c") + ".bin";
  std::vector<char> bytes = slurp(bin);
  bytes[5] ^= 0x40;
  std::ofstream(bin, std::ios::binary | std::ios::trunc)
      .write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  CHECK_THROWS_WITH_AS(static_cast<void>(load_checkpoint(dir.stem("c"))),
                       doctest::Contains("checksum"), std::runtime_error);
}

TEST_CASE("restore validates names and shapes") {
  TempDir dir;
  Tensor t = Tensor::param("w", {2, 3}, std::vector<double>(6, 1.5));
  save_checkpoint(dir.stem("d"), {}, {t});
  Checkpoint ckpt = load_checkpoint(dir.stem("d"));
  CHECK(ckpt.has("w"));
  CHECK_FALSE(ckpt.has("missing"));

  Tensor wrong_name = Tensor::param("w2", {2, 3}, std::vector<double>(6, 0.0));
  CHECK_THROWS(restore_tensors(ckpt, {wrong_name}));
  Tensor wrong_shape = Tensor::param("w", {3, 2}, std::vector<double>(6, 0.0));
  CHECK_THROWS(restore_tensors(ckpt, {wrong_shape}));

  Tensor ok = Tensor::param("w", {2, 3}, std::vector<double>(6, 0.0));
  restore_tensors(ckpt, {ok});
  CHECK(ok.value() == t.value());
}

TEST_CASE("missing files and bad manifests raise errors") {
  TempDir dir;
  CHECK_THROWS(load_checkpoint(dir.stem("nope")));

  std::ofstream(dir.stem("junk") + ".ckpt") << "not a manifest\n";
  std::ofstream(dir.stem("junk") + ".bin").put(0);
  CHECK_THROWS(load_checkpoint(dir.stem("junk")));

  CHECK_THROWS(save_checkpoint(dir.stem("x"), {},
                               {Tensor::zeros({2}, true)}));  // unnamed tensor
}

TEST_CASE("special float values survive the round trip") {
  TempDir dir;
  double denorm = 5e-324;
  Tensor t = Tensor::param("vals", {5},
                           {0.0, -0.0, 1e308, denorm, -123.456789012345678});
  save_checkpoint(dir.stem("f"), {}, {t});
  Checkpoint ckpt = load_checkpoint(dir.stem("f"));
  Tensor back = Tensor::param("vals", {5}, std::vector<double>(5, 9.0));
  restore_tensors(ckpt, {back});
  for (size_t i = 0; i < 5; ++i) {
    CHECK(std::memcmp(&back.value()[i], &t.value()[i], sizeof(double)) == 0);
  }
}
