#include <catch2/catch.hpp>

#include <sstream>
#include <string>
#include <vector>

#include "sigrec/common.hpp"
#include "sigrec/tokenize.hpp"

using namespace sigrec;

namespace {

std::vector<std::string> numbered(int n) {
  std::vector<std::string> v;
  for (int i = 1; i <= n; ++i) v.push_back("i" + std::to_string(i));
  return v;
}

const std::string PAD = Vocabulary::pad_token();

// Independent check of the operand-splitting rule: commas that sit at
// parenthesis depth zero.
int top_level_commas(const std::string& s) {
  int depth = 0, commas = 0;
  for (char c : s) {
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if (c == ',' && depth == 0) ++commas;
  }
  return commas;
}

}  // namespace

TEST_CASE("slice takes head or tail windows") {
  auto ten = numbered(10);

  auto head = slice_function(ten, {5, SliceLocation::kHead});
  CHECK(head == std::vector<std::string>{"i1", "i2", "i3", "i4", "i5"});

  auto tail = slice_function(ten, {5, SliceLocation::kTail});
  CHECK(tail == std::vector<std::string>{"i6", "i7", "i8", "i9", "i10"});

  // Short functions: both windows are the whole body.
  auto thirty = numbered(30);
  CHECK(slice_function(thirty, {40, SliceLocation::kHead}) == thirty);
  CHECK(slice_function(thirty, {40, SliceLocation::kTail}) == thirty);

  // Idempotent.
  CHECK(slice_function(head, {5, SliceLocation::kHead}) == head);
  CHECK(slice_function(tail, {5, SliceLocation::kTail}) == tail);

  CHECK_THROWS_AS(slice_function(ten, {0, SliceLocation::kHead}), InvalidArgument);
}

TEST_CASE("instructions split into exactly four words") {
  CHECK(split_instruction("mov a,b") ==
        std::array<std::string, 4>{"mov", "a", "b", PAD});
  CHECK(split_instruction("ret") ==
        std::array<std::string, 4>{"ret", PAD, PAD, PAD});
  CHECK(split_instruction("mov IMM(%rip),%rax") ==
        std::array<std::string, 4>{"mov", "IMM(%rip)", "%rax", PAD});
  CHECK(split_instruction("imul IMM,%eax,%ebx") ==
        std::array<std::string, 4>{"imul", "IMM", "%eax", "%ebx"});
  // Memory operands with interior commas stay whole.
  std::string mem = "mov IMM(%rax,%rbx,8),%rcx";
  REQUIRE(top_level_commas("IMM(%rax,%rbx,8),%rcx") == 1);
  CHECK(split_instruction(mem) ==
        std::array<std::string, 4>{"mov", "IMM(%rax,%rbx,8)", "%rcx", PAD});
  // More than three operands: truncated to the first three.
  CHECK(split_instruction("x a,b,c,d") ==
        std::array<std::string, 4>{"x", "a", "b", "c"});
  // Sanitized call targets are a single operand word.
  CHECK(split_instruction("call IMM<FUNC>") ==
        std::array<std::string, 4>{"call", "IMM<FUNC>", PAD, PAD});
}

TEST_CASE("instruction word stream flattens 4 words per instruction") {
  auto words = instruction_words({"mov a,b", "ret"});
  CHECK(words == std::vector<std::string>{"mov", "a", "b", PAD, "ret", PAD, PAD,
                                          PAD});
}

TEST_CASE("vocabulary ids are deterministic in count then lexicographic order") {
  // Corpus with counts: mov x5, %rax x5, IMM x2.
  std::vector<std::vector<std::string>> corpus = {
      {"mov", "mov", "mov", "%rax", "IMM"},
      {"mov", "mov", "%rax", "%rax", "%rax", "%rax", "IMM"},
  };
  auto vocab = build_vocab(corpus, 3);
  REQUIRE(vocab.size() == 4);  // reserved + mov + %rax
  CHECK(vocab.token(0) == "<PAD>");
  CHECK(vocab.token(1) == "<UNK>");
  // Tie on count 5: '%rax' sorts before 'mov'.
  CHECK(vocab.token(2) == "%rax");
  CHECK(vocab.token(3) == "mov");
  CHECK(vocab.count(2) == 5);
  CHECK(vocab.count(3) == 5);
  CHECK(vocab.count(Vocabulary::kUnkId) == 2);  // dropped IMM occurrences
  CHECK(vocab.id("mov") == 3);
  CHECK(vocab.id("IMM") == Vocabulary::kUnkId);
  CHECK(vocab.id("never seen") == Vocabulary::kUnkId);

  SECTION("min_count 1 keeps everything") {
    auto all = build_vocab(corpus, 1);
    CHECK(all.size() == 5);
    CHECK(all.id("IMM") == 4);
  }
  SECTION("round trip id(token(i)) == i") {
    for (std::size_t i = 0; i < vocab.size(); ++i) {
      auto id = static_cast<std::int32_t>(i);
      CHECK(vocab.id(vocab.token(id)) == id);
    }
  }
  SECTION("empty corpus is rejected") {
    CHECK_THROWS_AS(build_vocab({}, 1), InvalidArgument);
    CHECK_THROWS_AS(build_vocab({{}, {}}, 1), InvalidArgument);
  }
  SECTION("PAD occurrences are tallied on the reserved row") {
    auto padded = build_vocab({{"ret", PAD, PAD, PAD}}, 1);
    CHECK(padded.count(Vocabulary::kPadId) == 3);
    CHECK(padded.id(PAD) == Vocabulary::kPadId);
  }
}

TEST_CASE("encode produces fixed-length padded id sequences") {
  std::vector<std::vector<std::string>> corpus = {
      instruction_words({"ret", "mov a,b", "push %rbp"})};
  auto vocab = build_vocab(corpus, 1);

  SECTION("single instruction, size 5") {
    auto seq = encode({"ret"}, vocab, {5, SliceLocation::kHead});
    REQUIRE(seq.ids.size() == 20);
    CHECK(seq.true_token_count == 4);
    CHECK(seq.ids[0] == vocab.id("ret"));
    for (std::size_t i = 1; i < 20; ++i) CHECK(seq.ids[i] == Vocabulary::kPadId);
  }
  SECTION("unknown tokens become UNK") {
    auto seq = encode({"xor %edx,%edx"}, vocab, {1, SliceLocation::kHead});
    REQUIRE(seq.ids.size() == 4);
    CHECK(seq.ids[0] == Vocabulary::kUnkId);
    CHECK(seq.ids[1] == Vocabulary::kUnkId);
    CHECK(seq.ids[2] == Vocabulary::kUnkId);
    CHECK(seq.ids[3] == Vocabulary::kPadId);  // operand padding
    CHECK(seq.true_token_count == 4);
  }
  SECTION("40 instructions at size 40 give 160 timesteps") {
    std::vector<std::string> body(40, "ret");
    auto seq = encode(body, vocab, {40, SliceLocation::kHead});
    CHECK(seq.ids.size() == 160);
    CHECK(seq.true_token_count == 160);
  }
  SECTION("encode slices internally") {
    std::vector<std::string> body = {"ret", "mov a,b", "push %rbp"};
    auto head = encode(body, vocab, {1, SliceLocation::kHead});
    auto tail = encode(body, vocab, {1, SliceLocation::kTail});
    CHECK(head.ids[0] == vocab.id("ret"));
    CHECK(tail.ids[0] == vocab.id("push"));
    CHECK(head.true_token_count == 4);
  }
}

TEST_CASE("vocabulary file round-trips with reserved preamble") {
  std::vector<std::vector<std::string>> corpus = {
      {"mov", "mov", "mov", "%rax", "%rax", "%rax", "mov", "%rax", "mov",
       "%rax", "IMM", "IMM", PAD}};
  auto vocab = build_vocab(corpus, 3);

  std::ostringstream out;
  write_vocab(out, vocab);
  CHECK(out.str() ==
        "<PAD>\t1\n"
        "<UNK>\t2\n"
        "%rax\t5\n"
        "mov\t5\n");

  std::istringstream in(out.str());
  auto back = read_vocab(in);
  CHECK(back == vocab);

  SECTION("missing preamble is rejected") {
    std::istringstream bad("mov\t5\n<PAD>\t0\n");
    CHECK_THROWS_AS(read_vocab(bad), FormatError);
  }
  SECTION("truncated file is rejected") {
    std::istringstream bad("<PAD>\t0\n");
    CHECK_THROWS_AS(read_vocab(bad), FormatError);
  }
  SECTION("bad count is rejected") {
    std::istringstream bad("<PAD>\t0\n<UNK>\tzero\n");
    CHECK_THROWS_AS(read_vocab(bad), ParseError);
  }
  SECTION("missing tab is rejected") {
    std::istringstream bad("<PAD> 0\n");
    CHECK_THROWS_AS(read_vocab(bad), ParseError);
  }
}
