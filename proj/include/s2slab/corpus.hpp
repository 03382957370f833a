#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace s2slab {

using TokenId = int32_t;
using TokenSequence = std::vector<TokenId>;

// Whitespace-token vocabulary. Ids are dense; specials occupy the first slots
// in a fixed order so id < num_specials() identifies them everywhere.
class Vocab {
 public:
  enum : TokenId { kPad = 0, kBos = 1, kEos = 2, kMask = 3, kUnk = 4 };

  static const std::array<std::string, 5>& special_tokens();
  static constexpr TokenId num_specials() { return 5; }

  // Most frequent tokens first, frequency ties broken lexicographically.
  // max_size bounds the total size including specials.
  static Vocab build_from_lines(const std::vector<std::string>& lines, size_t max_size);
  static Vocab build_from_file(const std::string& path, size_t max_size);

  // One token per line, line number == id; specials must come first.
  static Vocab load(const std::string& path);
  void save(const std::string& path) const;

  TokenId id(const std::string& token) const;  // kUnk when absent
  const std::string& token(TokenId id) const;
  size_t size() const { return tokens_.size(); }
  bool is_special(TokenId id) const { return id >= 0 && id < num_specials(); }

  // Whitespace split, OOV -> UNK, BOS prepended, EOS appended.
  TokenSequence encode(const std::string& text) const;
  // Drops specials, joins with single spaces.
  std::string decode(const TokenSequence& seq) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

std::vector<std::string> whitespace_tokenize(const std::string& text);

// Padded batch of sequences; pad_mask is 1 exactly where PAD was appended.
struct Batch {
  size_t rows = 0;
  size_t len = 0;
  std::vector<TokenId> ids;       // row-major [rows, len]
  std::vector<uint8_t> pad_mask;  // [rows, len]

  TokenId at(size_t r, size_t c) const { return ids[r * len + c]; }
  bool is_pad(size_t r, size_t c) const { return pad_mask[r * len + c] != 0; }
  size_t row_length(size_t r) const;       // count of non-PAD positions
  TokenSequence row(size_t r) const;       // unpadded sequence
};

Batch pad_batch(const std::vector<TokenSequence>& seqs);

// Encodes each line; documents longer than max_len are split at token
// boundaries into max_len-sized sequences (length includes BOS/EOS).
std::vector<TokenSequence> load_corpus(const std::string& path, const Vocab& vocab,
                                       size_t max_len);
std::vector<TokenSequence> encode_lines(const std::vector<std::string>& lines,
                                        const Vocab& vocab, size_t max_len);

std::vector<std::string> read_lines(const std::string& path);

// Deterministic shuffle under seed, then consecutive groups of batch_size;
// the last short batch is emitted as-is.
std::vector<Batch> make_batches(const std::vector<TokenSequence>& seqs, size_t batch_size,
                                uint64_t seed);

}  // namespace s2slab
