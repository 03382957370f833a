#include "s2slab/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace s2slab {

namespace {

constexpr char kMagic[] = "s2slab-checkpoint v1";

void write_le_f64(std::ostream& os, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

double read_le_f64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

}  // namespace

uint64_t payload_checksum(const std::vector<double>& payload) {
  uint64_t h = 1469598103934665603ull;  // FNV-1a offset basis
  for (double v : payload) {
    uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xff;
      h *= 1099511628211ull;  // FNV prime
    }
  }
  return h;
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return true;
  return false;
}

const CheckpointEntry& Checkpoint::entry(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return e;
  throw std::runtime_error("checkpoint: no tensor named '" + name + "'");
}

void Checkpoint::read_into(const std::string& name, Tensor& dst) const {
  const CheckpointEntry& e = entry(name);
  if (e.shape != dst.shape())
    throw std::runtime_error("checkpoint: shape mismatch for '" + name + "': stored " +
                             shape_str(e.shape) + ", expected " + shape_str(dst.shape()));
  size_t n = shape_numel(e.shape);
  std::copy(payload.begin() + e.offset, payload.begin() + e.offset + n,
            dst.value().begin());
}

void save_checkpoint(const std::string& stem,
                     const std::map<std::string, std::string>& config,
                     const std::vector<Tensor>& tensors) {
  std::vector<double> payload;
  std::ostringstream manifest;
  manifest << kMagic << "\n";
  for (const auto& [k, v] : config) manifest << "config " << k << " " << v << "\n";
  for (const auto& t : tensors) {
    if (t.name().empty()) throw std::runtime_error("checkpoint: cannot save unnamed tensor");
    manifest << "tensor " << t.name() << " " << t.rank();
    for (size_t d : t.shape()) manifest << " " << d;
    manifest << " " << payload.size() << "\n";
    const auto& v = t.value();
    payload.insert(payload.end(), v.begin(), v.end());
  }
  char hash[32];
  std::snprintf(hash, sizeof(hash), "%016llx",
                static_cast<unsigned long long>(payload_checksum(payload)));
  manifest << "payload " << payload.size() << " " << hash << "\n";

  std::ofstream mf(stem + ".ckpt", std::ios::trunc);
  if (!mf) throw std::runtime_error("checkpoint: cannot write " + stem + ".ckpt");
  mf << manifest.str();
  mf.close();
  if (!mf) throw std::runtime_error("checkpoint: failed writing " + stem + ".ckpt");

  std::ofstream bf(stem + ".bin", std::ios::trunc | std::ios::binary);
  if (!bf) throw std::runtime_error("checkpoint: cannot write " + stem + ".bin");
  for (double v : payload) write_le_f64(bf, v);
  bf.close();
  if (!bf) throw std::runtime_error("checkpoint: failed writing " + stem + ".bin");
}

Checkpoint load_checkpoint(const std::string& stem) {
  std::ifstream mf(stem + ".ckpt");
  if (!mf) throw std::runtime_error("checkpoint: cannot open " + stem + ".ckpt");

  Checkpoint ckpt;
  std::string line;
  if (!std::getline(mf, line) || line != kMagic)
    throw std::runtime_error("checkpoint: bad magic in " + stem + ".ckpt");

  size_t expected_count = 0;
  std::string expected_hash;
  while (std::getline(mf, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "config") {
      std::string key, value;
      ls >> key;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      ckpt.config[key] = value;
    } else if (kind == "tensor") {
      CheckpointEntry e;
      size_t rank = 0;
      ls >> e.name >> rank;
      e.shape.resize(rank);
      for (size_t i = 0; i < rank; ++i) ls >> e.shape[i];
      ls >> e.offset;
      if (!ls) throw std::runtime_error("checkpoint: malformed tensor line: " + line);
      ckpt.entries.push_back(std::move(e));
    } else if (kind == "payload") {
      ls >> expected_count >> expected_hash;
      if (!ls) throw std::runtime_error("checkpoint: malformed payload line: " + line);
    } else {
      throw std::runtime_error("checkpoint: unknown manifest line: " + line);
    }
  }

  std::ifstream bf(stem + ".bin", std::ios::binary);
  if (!bf) throw std::runtime_error("checkpoint: cannot open " + stem + ".bin");
  ckpt.payload.resize(expected_count);
  for (size_t i = 0; i < expected_count; ++i) ckpt.payload[i] = read_le_f64(bf);
  if (!bf) throw std::runtime_error("checkpoint: payload truncated in " + stem + ".bin");

  char hash[32];
  std::snprintf(hash, sizeof(hash), "%016llx",
                static_cast<unsigned long long>(payload_checksum(ckpt.payload)));
  if (expected_hash != hash)
    throw std::runtime_error("checkpoint: payload checksum mismatch in " + stem + ".bin");

  for (const auto& e : ckpt.entries)
    if (e.offset + shape_numel(e.shape) > ckpt.payload.size())
      throw std::runtime_error("checkpoint: tensor '" + e.name + "' overruns the payload");
  return ckpt;
}

void restore_tensors(const Checkpoint& ckpt, std::vector<Tensor> tensors) {
  for (auto& t : tensors) ckpt.read_into(t.name(), t);
}

}  // namespace s2slab
