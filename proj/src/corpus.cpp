#include "s2slab/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "s2slab/rng.hpp"

namespace s2slab {

const std::array<std::string, 5>& Vocab::special_tokens() {
  static const std::array<std::string, 5> kSpecials = {"<pad>", "<bos>", "<eos>", "<mask>",
                                                       "<unk>"};
  return kSpecials;
}

std::vector<std::string> whitespace_tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

Vocab Vocab::build_from_lines(const std::vector<std::string>& lines, size_t max_size) {
  if (max_size < static_cast<size_t>(num_specials()) + 1)
    throw std::runtime_error("vocab: max_size leaves no room for content tokens");

  std::map<std::string, size_t> freq;
  size_t total = 0;
  for (const auto& line : lines)
    for (const auto& tok : whitespace_tokenize(line)) {
      ++freq[tok];
      ++total;
    }
  if (total == 0) throw std::runtime_error("vocab: empty corpus");

  // Most frequent first; ties broken lexicographically (map iteration is
  // already lexicographic, stable_sort keeps that order within equal counts).
  std::vector<std::pair<std::string, size_t>> entries(freq.begin(), freq.end());
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  Vocab v;
  for (const auto& s : special_tokens()) v.tokens_.push_back(s);
  size_t budget = max_size - num_specials();
  for (const auto& [tok, n] : entries) {
    (void)n;
    if (v.tokens_.size() >= num_specials() + budget) break;
    v.tokens_.push_back(tok);
  }
  for (size_t i = 0; i < v.tokens_.size(); ++i)
    v.index_[v.tokens_[i]] = static_cast<TokenId>(i);
  return v;
}

Vocab Vocab::build_from_file(const std::string& path, size_t max_size) {
  return build_from_lines(read_lines(path), max_size);
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("vocab: cannot open " + path);
  Vocab v;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    v.tokens_.push_back(line);
  }
  if (v.tokens_.size() < static_cast<size_t>(num_specials()))
    throw std::runtime_error("vocab: file shorter than the special-token block");
  for (TokenId i = 0; i < num_specials(); ++i)
    if (v.tokens_[i] != special_tokens()[i])
      throw std::runtime_error("vocab: special token mismatch at id " + std::to_string(i));
  for (size_t i = 0; i < v.tokens_.size(); ++i) {
    if (!v.index_.emplace(v.tokens_[i], static_cast<TokenId>(i)).second)
      throw std::runtime_error("vocab: duplicate token '" + v.tokens_[i] + "'");
  }
  return v;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("vocab: cannot write " + path);
  for (const auto& t : tokens_) out << t << "\n";
}

TokenId Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<size_t>(id) >= tokens_.size())
    throw std::out_of_range("vocab: id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<size_t>(id)];
}

TokenSequence Vocab::encode(const std::string& text) const {
  TokenSequence seq;
  seq.push_back(kBos);
  for (const auto& tok : whitespace_tokenize(text)) seq.push_back(id(tok));
  seq.push_back(kEos);
  return seq;
}

std::string Vocab::decode(const TokenSequence& seq) const {
  std::string out;
  for (TokenId t : seq) {
    if (is_special(t)) continue;
    if (!out.empty()) out += ' ';
    out += token(t);
  }
  return out;
}

size_t Batch::row_length(size_t r) const {
  size_t n = 0;
  for (size_t c = 0; c < len; ++c)
    if (!is_pad(r, c)) ++n;
  return n;
}

TokenSequence Batch::row(size_t r) const {
  TokenSequence seq;
  for (size_t c = 0; c < len; ++c) {
    if (is_pad(r, c)) break;
    seq.push_back(at(r, c));
  }
  return seq;
}

Batch pad_batch(const std::vector<TokenSequence>& seqs) {
  if (seqs.empty()) throw std::runtime_error("batch: empty sequence list");
  Batch b;
  b.rows = seqs.size();
  b.len = 0;
  for (const auto& s : seqs) {
    if (s.empty()) throw std::runtime_error("batch: empty sequence");
    b.len = std::max(b.len, s.size());
  }
  b.ids.assign(b.rows * b.len, Vocab::kPad);
  b.pad_mask.assign(b.rows * b.len, 1);
  for (size_t r = 0; r < b.rows; ++r)
    for (size_t c = 0; c < seqs[r].size(); ++c) {
      b.ids[r * b.len + c] = seqs[r][c];
      b.pad_mask[r * b.len + c] = 0;
    }
  return b;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("corpus: cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

std::vector<TokenSequence> encode_lines(const std::vector<std::string>& lines,
                                        const Vocab& vocab, size_t max_len) {
  if (max_len < 3) throw std::runtime_error("corpus: max_len must be at least 3");
  std::vector<TokenSequence> seqs;
  for (const auto& line : lines) {
    auto toks = whitespace_tokenize(line);
    if (toks.empty()) continue;
    size_t chunk = max_len - 2;  // room for BOS/EOS
    for (size_t off = 0; off < toks.size(); off += chunk) {
      TokenSequence seq;
      seq.push_back(Vocab::kBos);
      size_t end = std::min(off + chunk, toks.size());
      for (size_t i = off; i < end; ++i) seq.push_back(vocab.id(toks[i]));
      seq.push_back(Vocab::kEos);
      seqs.push_back(std::move(seq));
    }
  }
  return seqs;
}

std::vector<TokenSequence> load_corpus(const std::string& path, const Vocab& vocab,
                                       size_t max_len) {
  return encode_lines(read_lines(path), vocab, max_len);
}

std::vector<Batch> make_batches(const std::vector<TokenSequence>& seqs, size_t batch_size,
                                uint64_t seed) {
  if (batch_size == 0) throw std::runtime_error("batch: batch_size must be positive");
  std::vector<size_t> order(seqs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng = Rng::for_stream(seed, 0x6f726465u /* "orde" */);
  rng.shuffle(order);

  std::vector<Batch> batches;
  for (size_t off = 0; off < order.size(); off += batch_size) {
    std::vector<TokenSequence> group;
    size_t end = std::min(off + batch_size, order.size());
    for (size_t i = off; i < end; ++i) group.push_back(seqs[order[i]]);
    batches.push_back(pad_batch(group));
  }
  return batches;
}

}  // namespace s2slab
