#include "sigrec/tokenize.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>

#include "sigrec/common.hpp"

namespace sigrec {

std::vector<std::string> slice_function(const std::vector<std::string>& instructions,
                                        const SliceSpec& spec) {
  if (spec.size == 0) throw InvalidArgument("slice size must be >= 1");
  std::size_t n = std::min(spec.size, instructions.size());
  auto first = spec.location == SliceLocation::kHead
                   ? instructions.begin()
                   : instructions.end() - static_cast<std::ptrdiff_t>(n);
  return std::vector<std::string>(first, first + static_cast<std::ptrdiff_t>(n));
}

std::array<std::string, 4> split_instruction(std::string_view instruction) {
  std::array<std::string, 4> words = {Vocabulary::pad_token(),
                                      Vocabulary::pad_token(),
                                      Vocabulary::pad_token(),
                                      Vocabulary::pad_token()};
  std::size_t space = instruction.find(' ');
  words[0] = std::string(instruction.substr(0, space));
  if (space == std::string_view::npos) return words;

  std::string_view operands = instruction.substr(space + 1);
  std::size_t word = 1;
  std::size_t begin = 0;
  int depth = 0;
  for (std::size_t i = 0; i <= operands.size() && word < 4; ++i) {
    if (i < operands.size()) {
      char c = operands[i];
      if (c == '(') ++depth;
      if (c == ')' && depth > 0) --depth;
      if (c != ',' || depth != 0) continue;
    }
    if (i > begin) words[word++] = std::string(operands.substr(begin, i - begin));
    begin = i + 1;
  }
  return words;
}

std::vector<std::string> instruction_words(
    const std::vector<std::string>& instructions) {
  std::vector<std::string> words;
  words.reserve(instructions.size() * 4);
  for (const auto& instr : instructions)
    for (auto& w : split_instruction(instr)) words.push_back(std::move(w));
  return words;
}

const std::string& Vocabulary::pad_token() {
  static const std::string token = "<PAD>";
  return token;
}

const std::string& Vocabulary::unk_token() {
  static const std::string token = "<UNK>";
  return token;
}

Vocabulary::Vocabulary() {
  tokens_ = {pad_token(), unk_token()};
  counts_ = {0, 0};
  ids_ = {{pad_token(), kPadId}, {unk_token(), kUnkId}};
}

std::int32_t Vocabulary::add(std::string token, std::uint64_t count) {
  if (token == pad_token() || token == unk_token())
    throw InvalidArgument("reserved token: " + token);
  auto id = static_cast<std::int32_t>(tokens_.size());
  if (!ids_.emplace(token, id).second)
    throw InvalidArgument("duplicate token: " + token);
  tokens_.push_back(std::move(token));
  counts_.push_back(count);
  return id;
}

std::int32_t Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw InvalidArgument("token id out of range: " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

std::uint64_t Vocabulary::count(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= counts_.size())
    throw InvalidArgument("token id out of range: " + std::to_string(id));
  return counts_[static_cast<std::size_t>(id)];
}

void Vocabulary::set_count(std::int32_t id, std::uint64_t count) {
  if (id < 0 || static_cast<std::size_t>(id) >= counts_.size())
    throw InvalidArgument("token id out of range: " + std::to_string(id));
  counts_[static_cast<std::size_t>(id)] = count;
}

Vocabulary build_vocab(const std::vector<std::vector<std::string>>& sequences,
                       std::uint64_t min_count) {
  std::unordered_map<std::string, std::uint64_t> freq;
  std::uint64_t pad_seen = 0;
  std::uint64_t total = 0;
  for (const auto& seq : sequences) {
    for (const auto& token : seq) {
      ++total;
      if (token == Vocabulary::pad_token()) {
        ++pad_seen;
        continue;
      }
      ++freq[token];
    }
  }
  if (total == 0) throw InvalidArgument("empty corpus");

  std::vector<std::pair<std::string, std::uint64_t>> kept;
  std::uint64_t dropped = 0;
  for (auto& [token, count] : freq) {
    if (count >= min_count)
      kept.emplace_back(token, count);
    else
      dropped += count;
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocabulary vocab;
  vocab.set_count(Vocabulary::kPadId, pad_seen);
  vocab.set_count(Vocabulary::kUnkId, dropped);
  for (auto& [token, count] : kept) vocab.add(std::move(token), count);
  return vocab;
}

TokenSequence encode(const std::vector<std::string>& instructions,
                     const Vocabulary& vocab, const SliceSpec& spec) {
  auto sliced = slice_function(instructions, spec);
  TokenSequence seq;
  seq.ids.assign(4 * spec.size, Vocabulary::kPadId);
  seq.true_token_count = 4 * sliced.size();
  std::size_t pos = 0;
  for (const auto& instr : sliced)
    for (const auto& word : split_instruction(instr)) seq.ids[pos++] = vocab.id(word);
  return seq;
}

std::vector<std::int32_t> encode_words(const std::vector<std::string>& instructions,
                                       const Vocabulary& vocab) {
  std::vector<std::int32_t> ids;
  ids.reserve(instructions.size() * 4);
  for (const auto& instr : instructions)
    for (const auto& word : split_instruction(instr)) ids.push_back(vocab.id(word));
  return ids;
}

void write_vocab(std::ostream& out, const Vocabulary& vocab) {
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    auto id = static_cast<std::int32_t>(i);
    out << vocab.token(id) << '\t' << vocab.count(id) << '\n';
  }
  if (!out) throw IoError("failed writing vocabulary");
}

void write_vocab_file(const std::string& path, const Vocabulary& vocab) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for write: " + path);
  write_vocab(out, vocab);
}

Vocabulary read_vocab(std::istream& in) {
  Vocabulary vocab;
  std::string line;
  std::size_t lineno = 0;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw ParseError("vocabulary line missing tab separator", lineno);
    std::string token = line.substr(0, tab);
    std::uint64_t count = 0;
    try {
      count = std::stoull(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw ParseError("bad vocabulary count", lineno);
    }
    if (row < 2) {
      const std::string& expected =
          row == 0 ? Vocabulary::pad_token() : Vocabulary::unk_token();
      if (token != expected)
        throw FormatError("vocabulary preamble must start with " +
                          Vocabulary::pad_token() + ", " + Vocabulary::unk_token());
      vocab.set_count(row == 0 ? Vocabulary::kPadId : Vocabulary::kUnkId, count);
    } else {
      vocab.add(std::move(token), count);
    }
    ++row;
  }
  if (row < 2) throw FormatError("vocabulary file missing reserved preamble");
  return vocab;
}

Vocabulary read_vocab_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary: " + path);
  return read_vocab(in);
}

}  // namespace sigrec
