#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace sigrec {

enum class SliceLocation { kHead, kTail };

/// Which window of a function body feeds the model: the first or last
/// `size` instructions.
struct SliceSpec {
  std::size_t size = 40;
  SliceLocation location = SliceLocation::kHead;

  bool operator==(const SliceSpec&) const = default;
};

/// First/last min(size, len) instructions, order preserved. Applying it
/// twice with the same spec is a no-op.
std::vector<std::string> slice_function(const std::vector<std::string>& instructions,
                                        const SliceSpec& spec);

/// One instruction becomes exactly four instruction words: the mnemonic,
/// then up to three operands split on top-level commas (commas inside
/// parentheses don't split). Short instructions are right-padded with the
/// PAD word; extra operands are truncated.
std::array<std::string, 4> split_instruction(std::string_view instruction);

/// Flattens whole instructions into their 4-words-per-instruction stream.
std::vector<std::string> instruction_words(
    const std::vector<std::string>& instructions);

/// Token table with two reserved rows: id 0 is the PAD word, id 1 the
/// unknown-word bucket. Lookup of an unmapped token yields UNK.
class Vocabulary {
 public:
  static constexpr std::int32_t kPadId = 0;
  static constexpr std::int32_t kUnkId = 1;
  static const std::string& pad_token();  // "<PAD>"
  static const std::string& unk_token();  // "<UNK>"

  Vocabulary();

  /// Appends a token with the next free id. Reserved names and duplicates
  /// raise InvalidArgument. Returns the new id.
  std::int32_t add(std::string token, std::uint64_t count);

  std::int32_t id(std::string_view token) const;  // kUnkId when absent
  const std::string& token(std::int32_t id) const;
  std::uint64_t count(std::int32_t id) const;
  void set_count(std::int32_t id, std::uint64_t count);
  std::size_t size() const { return tokens_.size(); }

  bool operator==(const Vocabulary& other) const {
    return tokens_ == other.tokens_ && counts_ == other.counts_;
  }

 private:
  std::vector<std::string> tokens_;
  std::vector<std::uint64_t> counts_;
  std::unordered_map<std::string, std::int32_t> ids_;
};

/// Builds the table from per-function token sequences (training split
/// only). Tokens seen fewer than min_count times are dropped; survivors get
/// ids from 2 in (count desc, token asc) order, so the assignment is a pure
/// function of the corpus. PAD occurrences are tallied into the PAD row;
/// dropped-token occurrences into the UNK row. Empty corpus raises
/// InvalidArgument.
Vocabulary build_vocab(const std::vector<std::vector<std::string>>& sequences,
                       std::uint64_t min_count = 5);

/// Fixed-length encoded window: exactly 4 * size ids, the first
/// true_token_count of which came from real instructions (a short
/// instruction's internal PADs count as real positions; only whole missing
/// instructions at the end are buffer padding).
struct TokenSequence {
  std::vector<std::int32_t> ids;
  std::size_t true_token_count = 0;

  bool operator==(const TokenSequence&) const = default;
};

/// Slices per `spec`, splits each instruction into 4 words, and maps them
/// through the vocabulary (unknown → UNK). Output length is exactly
/// 4 * spec.size, right-padded with PAD ids.
TokenSequence encode(const std::vector<std::string>& instructions,
                     const Vocabulary& vocab, const SliceSpec& spec);

/// Unsliced id stream of a whole function body (4 ids per instruction), as
/// consumed by embedding training.
std::vector<std::int32_t> encode_words(const std::vector<std::string>& instructions,
                                       const Vocabulary& vocab);

/// Vocabulary file: `token<TAB>count` per line, ordered by id, starting
/// with the two reserved rows. Reading validates the preamble and rebuilds
/// the id assignment from line order.
void write_vocab(std::ostream& out, const Vocabulary& vocab);
void write_vocab_file(const std::string& path, const Vocabulary& vocab);
Vocabulary read_vocab(std::istream& in);
Vocabulary read_vocab_file(const std::string& path);

}  // namespace sigrec
