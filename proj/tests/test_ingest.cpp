#include <catch2/catch.hpp>

#include <sstream>
#include <string>
#include <vector>

#include "sigrec/common.hpp"
#include "sigrec/hash.hpp"
#include "sigrec/ingest.hpp"
#include "sigrec/labels.hpp"

using namespace sigrec;

namespace {

// objdump -d output for a single-function object file, byte-for-byte.
const std::string kAddListing =
    "\n"
    "add.o:     file format elf64-x86-64\n"
    "\n"
    "\n"
    "Disassembly of section .text:\n"
    "\n"
    "0000000000000000 <add>:\n"
    "   0:\tf3 0f 1e fa          \tendbr64 \n"
    "   4:\t55                   \tpush   %rbp\n"
    "   5:\t48 89 e5             \tmov    %rsp,%rbp\n"
    "   8:\t89 7d fc             \tmov    %edi,-0x4(%rbp)\n"
    "   b:\t89 75 f8             \tmov    %esi,-0x8(%rbp)\n"
    "   e:\t8b 55 fc             \tmov    -0x4(%rbp),%edx\n"
    "  11:\t8b 45 f8             \tmov    -0x8(%rbp),%eax\n"
    "  14:\t01 d0                \tadd    %edx,%eax\n"
    "  16:\t5d                   \tpop    %rbp\n"
    "  17:\tc3                   \tret    \n";

// Linked-executable flavor: several functions, a PLT call, and an inline
// "# ..." comment from objdump's relocation annotation.
const std::string kMultiListing =
    "0000000000001149 <add>:\n"
    "    1149:\tf3 0f 1e fa          \tendbr64 \n"
    "    114d:\t8d 04 37             \tlea    (%rdi,%rsi,1),%eax\n"
    "    1150:\tc3                   \tret    \n"
    "\n"
    "0000000000001151 <main>:\n"
    "    1151:\tf3 0f 1e fa          \tendbr64 \n"
    "    1155:\t48 83 ec 08          \tsub    $0x8,%rsp\n"
    "    1159:\tba 0a 00 00 00       \tmov    $0xa,%edx\n"
    "    115e:\t48 8d 35 9f 0e 00 00 \tlea    0xe9f(%rip),%rsi        "
    "# 2004 <_IO_stdin_used+0x4>\n"
    "    1165:\tbf 01 00 00 00       \tmov    $0x1,%edi\n"
    "    116a:\tb8 00 00 00 00       \tmov    $0x0,%eax\n"
    "    116f:\te8 dc fe ff ff       \tcall   1050 <__printf_chk@plt>\n"
    "    1174:\tb8 00 00 00 00       \tmov    $0x0,%eax\n"
    "    1179:\t48 83 c4 08          \tadd    $0x8,%rsp\n"
    "    117d:\tc3                   \tret    \n"
    "\n";

ParsedListing parse_string(const std::string& text, std::string binary = "bin") {
  std::istringstream in(text);
  return parse_listing(in, std::move(binary));
}

DatasetRecord make_record(std::string binary, std::string function,
                          std::vector<std::string> instructions,
                          SignatureLabel label) {
  DatasetRecord rec;
  rec.binary = std::move(binary);
  rec.function = std::move(function);
  rec.instructions = std::move(instructions);
  rec.label = label;
  rec.hash = function_hash(rec.instructions);
  return rec;
}

}  // namespace

TEST_CASE("listing parser extracts functions and normalizes text") {
  auto parsed = parse_string(kAddListing, "add");
  REQUIRE(parsed.functions.size() == 1);
  const auto& fn = parsed.functions[0];
  CHECK(fn.binary == "add");
  CHECK(fn.name == "add");
  const std::vector<std::string> expected = {
      "endbr64",
      "push %rbp",
      "mov %rsp,%rbp",
      "mov %edi,-0x4(%rbp)",
      "mov %esi,-0x8(%rbp)",
      "mov -0x4(%rbp),%edx",
      "mov -0x8(%rbp),%eax",
      "add %edx,%eax",
      "pop %rbp",
      "ret",
  };
  CHECK(fn.instructions == expected);
  CHECK(parsed.stats.functions == 1);
  CHECK(parsed.stats.instruction_lines == 10);
  CHECK(parsed.stats.empty_functions_dropped == 0);
}

TEST_CASE("listing parser handles multiple functions and comments") {
  auto parsed = parse_string(kMultiListing, "multi");
  REQUIRE(parsed.functions.size() == 2);

  const auto& add = parsed.functions[0];
  CHECK(add.name == "add");
  CHECK(add.instructions ==
        std::vector<std::string>{"endbr64", "lea (%rdi,%rsi,1),%eax", "ret"});

  const auto& main_fn = parsed.functions[1];
  CHECK(main_fn.name == "main");
  const std::vector<std::string> expected = {
      "endbr64",
      "sub $0x8,%rsp",
      "mov $0xa,%edx",
      "lea 0xe9f(%rip),%rsi",  // "# 2004 <...>" comment stripped
      "mov $0x1,%edi",
      "mov $0x0,%eax",
      "call 1050 <__printf_chk@plt>",
      "mov $0x0,%eax",
      "add $0x8,%rsp",
      "ret",
  };
  CHECK(main_fn.instructions == expected);
}

TEST_CASE("listing parser flags malformed input") {
  SECTION("instruction before any header") {
    std::string text = "   0:\t55                   \tpush   %rbp\n";
    CHECK_THROWS_MATCHES(parse_string(text), ParseError,
                         Catch::Matchers::Message(
                             "instruction before any function header (line 1)"));
  }
  SECTION("non-hex header address") {
    std::string text = "00zz00 <f>:\n";
    CHECK_THROWS_AS(parse_string(text), ParseError);
  }
  SECTION("garbage line") {
    std::string text =
        "0000000000000000 <f>:\n"
        "   0:\tc3                   \tret    \n"
        "this is not a listing line\n";
    try {
      parse_string(text);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line_number == 3);
    }
  }
}

TEST_CASE("listing parser skips continuations, elisions and empty functions") {
  std::string text =
      "0000000000000000 <empty>:\n"
      "0000000000000010 <f>:\n"
      "  10:\t48 b8 41 41 41 41 41 \tmovabs $0x4141414141414141,%rax\n"
      "  17:\t41 41 41\n"
      "\t...\n"
      "  1a:\tc3                   \tret    \n";
  auto parsed = parse_string(text);
  REQUIRE(parsed.functions.size() == 1);
  CHECK(parsed.functions[0].name == "f");
  CHECK(parsed.functions[0].instructions ==
        std::vector<std::string>{"movabs $0x4141414141414141,%rax", "ret"});
  CHECK(parsed.stats.empty_functions_dropped == 1);
  CHECK(parsed.stats.skipped_lines == 2);
}

TEST_CASE("instruction sanitizer masks immediates and symbol references") {
  const std::vector<std::pair<std::string, std::string>> cases = {
      {"je 401f31 <add+0x34>", "je IMM<FUNC>"},
      {"movabs $0x4141414141414141,%rax", "movabs IMM,%rax"},
      {"mov -0x4(%rbp),%edx", "mov IMM(%rbp),%edx"},
      {"lea (%rdi,%rsi,1),%eax", "lea (%rdi,%rsi,1),%eax"},
      {"call 1050 <__printf_chk@plt>", "call IMM<FUNC>"},
      {"mov %fs:0x28,%rax", "mov %fs:IMM,%rax"},
      {"sub $0x8,%rsp", "sub IMM,%rsp"},
      {"add %edx,%eax", "add %edx,%eax"},
      {"call *0x8(%rax)", "call *IMM(%rax)"},
      {"fld %st(0)", "fld %st(0)"},
      {"lea 0xe9f(%rip),%rsi", "lea IMM(%rip),%rsi"},
      {"ret", "ret"},
  };
  for (const auto& [input, expected] : cases) {
    INFO(input);
    CHECK(sanitize_instruction(input) == expected);
    // Idempotent: sanitizing sanitized text changes nothing.
    CHECK(sanitize_instruction(expected) == expected);
  }
}

TEST_CASE("md5 hex digests match reference vectors") {
  CHECK(md5_hex("") == "d41d8cd98f00b204e9800998ecf8427e");
  CHECK(md5_hex("abc") == "900150983cd24fb0d6963f7d28e17f72");
  CHECK(function_hash({"a", "b"}) == md5_hex("a\nb"));
  CHECK(function_hash({"a", "b"}) == "8cdeb44417f3c26826595d5820cf5700");
}

TEST_CASE("sanitized bodies hash deterministically") {
  auto parsed = parse_string(kAddListing, "add");
  auto sanitized = sanitize_instructions(parsed.functions[0].instructions);
  const std::vector<std::string> expected = {
      "endbr64",
      "push %rbp",
      "mov %rsp,%rbp",
      "mov %edi,IMM(%rbp)",
      "mov %esi,IMM(%rbp)",
      "mov IMM(%rbp),%edx",
      "mov IMM(%rbp),%eax",
      "add %edx,%eax",
      "pop %rbp",
      "ret",
  };
  CHECK(sanitized == expected);
  CHECK(function_hash(sanitized) == "a0cfc11fb8bf014a69c38608b0c6f201");
}

TEST_CASE("dedup keeps the first record per hash") {
  SignatureLabel lbl;
  lbl.pc = 0;
  std::vector<DatasetRecord> records = {
      make_record("b1", "f1", {"ret"}, lbl),
      make_record("b1", "f2", {"nop", "ret"}, lbl),
      make_record("b2", "f3", {"ret"}, lbl),  // duplicate of f1's body
  };
  CHECK(dedup_by_hash(records) == 1);
  REQUIRE(records.size() == 2);
  CHECK(records[0].function == "f1");
  CHECK(records[1].function == "f2");
}

TEST_CASE("dataset assembly attaches and canonicalizes labels") {
  std::vector<RawFunction> functions = {
      {"bin", "two_args", {"push %rbp", "mov $0x1,%eax", "ret"}},
      {"bin", "clone", {"push %rbp", "xor %eax,%eax", "ret"}},
      {"bin", "clone2", {"push %rbp", "xor %eax,%eax", "ret"}},  // dup body
      {"bin", "mystery", {"ret"}},                               // no label
      {"bin", "variadic", {"nop", "ret"}},
  };
  std::vector<LabelRecord> labels = {
      {"bin", "two_args", 2, {"int", "char *"}},
      {"bin", "clone", 0, {}},
      {"bin", "clone2", 0, {}},
      {"bin", "variadic", 12, {"char*", "struct foo*", "unsigned long"}},
      {"bin", "orphan", 1, {"void*"}},
  };

  IngestStats stats;
  auto records = build_dataset(functions, labels, stats);
  CHECK(stats.duplicates_removed == 1);
  CHECK(stats.unlabeled_dropped == 1);
  CHECK(stats.unused_labels == 2);  // clone2 (its body deduped) and orphan
  CHECK(stats.records == 3);
  REQUIRE(records.size() == 3);

  CHECK(records[0].function == "two_args");
  CHECK(records[0].label.pc == 2);
  CHECK(records[0].label.pt ==
        std::array<int, 3>{*pt_class_from_name("int"),
                           *pt_class_from_name("char*"), kPtNull});
  CHECK(records[0].instructions ==
        std::vector<std::string>{"push %rbp", "mov IMM,%eax", "ret"});

  CHECK(records[1].function == "clone");
  CHECK(records[1].label.pc == 0);
  CHECK(records[1].label.pt == std::array<int, 3>{kPtNull, kPtNull, kPtNull});

  CHECK(records[2].function == "variadic");
  CHECK(records[2].label.pc == kPcOthers);
  CHECK(records[2].label.pt ==
        std::array<int, 3>{*pt_class_from_name("char*"),
                           *pt_class_from_name("struct*"), kPtOthers});

  SECTION("duplicate label keys are rejected") {
    labels.push_back({"bin", "two_args", 3, {"int", "int", "int"}});
    IngestStats st;
    CHECK_THROWS_AS(build_dataset(functions, labels, st), FormatError);
  }
  SECTION("fewer types than the count is rejected") {
    std::vector<LabelRecord> bad = {{"bin", "two_args", 2, {"int"}}};
    IngestStats st;
    CHECK_THROWS_AS(build_dataset(functions, bad, st), FormatError);
  }
}

TEST_CASE("split is deterministic and ratio-exact") {
  SignatureLabel lbl;
  lbl.pc = 0;
  std::vector<DatasetRecord> records;
  for (int i = 0; i < 10; ++i)
    records.push_back(
        make_record("b", "f" + std::to_string(i), {"ret", std::to_string(i)}, lbl));

  auto split = split_dataset(records, 0.8, 1);
  CHECK(split.train.size() == 8);
  CHECK(split.test.size() == 2);

  auto again = split_dataset(records, 0.8, 1);
  CHECK(split.train == again.train);
  CHECK(split.test == again.test);

  auto other = split_dataset(records, 0.8, 2);
  CHECK(split.train != other.train);

  // Union is preserved.
  std::vector<std::string> names;
  for (const auto& r : split.train) names.push_back(r.function);
  for (const auto& r : split.test) names.push_back(r.function);
  std::sort(names.begin(), names.end());
  std::vector<std::string> all;
  for (const auto& r : records) all.push_back(r.function);
  std::sort(all.begin(), all.end());
  CHECK(names == all);

  CHECK(split_dataset(records, 0.0, 1).train.empty());
  CHECK(split_dataset(records, 1.0, 1).test.empty());
  CHECK_THROWS_AS(split_dataset(records, 1.5, 1), InvalidArgument);
}

TEST_CASE("dataset jsonl round-trips and pins the schema") {
  SignatureLabel lbl;
  lbl.pc = 1;
  lbl.pt = {*pt_class_from_name("int"), kPtNull, kPtNull};
  DatasetRecord rec = make_record("bin", "f", {"push %rbp"}, lbl);
  rec.hash = "h";

  std::ostringstream out;
  write_dataset_jsonl(out, {rec});
  CHECK(out.str() ==
        "{\"hash\":\"h\",\"instructions\":[\"push %rbp\"],\"pc\":\"1\","
        "\"pt1\":\"int\",\"pt2\":\"NULL\",\"pt3\":\"NULL\","
        "\"source_id\":[\"bin\",\"f\"]}\n");

  std::istringstream in(out.str());
  auto back = read_dataset_jsonl(in);
  REQUIRE(back.size() == 1);
  CHECK(back[0] == rec);

  SECTION("unknown class names are rejected") {
    std::istringstream bad(
        "{\"hash\":\"h\",\"instructions\":[],\"pc\":\"nine\",\"pt1\":\"NULL\","
        "\"pt2\":\"NULL\",\"pt3\":\"NULL\",\"source_id\":[\"b\",\"f\"]}\n");
    CHECK_THROWS_AS(read_dataset_jsonl(bad), ParseError);
  }
  SECTION("inconsistent pc/pt labels are rejected") {
    std::istringstream bad(
        "{\"hash\":\"h\",\"instructions\":[],\"pc\":\"0\",\"pt1\":\"int\","
        "\"pt2\":\"NULL\",\"pt3\":\"NULL\",\"source_id\":[\"b\",\"f\"]}\n");
    CHECK_THROWS_AS(read_dataset_jsonl(bad), ParseError);
  }
  SECTION("missing fields are rejected with the line number") {
    std::istringstream bad("{}\n\n{\"hash\":\"h\"}\n");
    try {
      read_dataset_jsonl(bad);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line_number == 1);
    }
  }
}

TEST_CASE("label sidecar parsing validates fields") {
  std::istringstream in(
      "{\"binary\":\"b\",\"function\":\"f\",\"pc\":2,\"pts\":[\"int\",\"char *\"]}\n"
      "\n"
      "{\"binary\":\"b\",\"function\":\"g\",\"pc\":0,\"pts\":[]}\n");
  auto labels = read_labels_jsonl(in);
  REQUIRE(labels.size() == 2);
  CHECK(labels[0].binary == "b");
  CHECK(labels[0].function == "f");
  CHECK(labels[0].pc == 2);
  CHECK(labels[0].param_types == std::vector<std::string>{"int", "char *"});
  CHECK(labels[1].pc == 0);

  SECTION("negative pc is rejected") {
    std::istringstream bad(
        "{\"binary\":\"b\",\"function\":\"f\",\"pc\":-1,\"pts\":[]}\n");
    CHECK_THROWS_AS(read_labels_jsonl(bad), ParseError);
  }
  SECTION("missing pts is rejected") {
    std::istringstream bad("{\"binary\":\"b\",\"function\":\"f\",\"pc\":0}\n");
    CHECK_THROWS_AS(read_labels_jsonl(bad), ParseError);
  }
}

TEST_CASE("taxonomies map names, counts and source types") {
  CHECK(pc_class_names().size() == 10);
  CHECK(pt_class_names().size() == 12);
  CHECK(pc_class_name(0) == "0");
  CHECK(pc_class_name(kPcOthers) == "others");
  CHECK(pt_class_name(0) == "struct*");
  CHECK(pt_class_name(kPtNull) == "NULL");
  CHECK_THROWS_AS(pc_class_name(10), InvalidArgument);
  CHECK_THROWS_AS(pt_class_name(-1), InvalidArgument);

  CHECK(pc_class_from_name("3") == 3);
  CHECK(pc_class_from_name("others") == kPcOthers);
  CHECK_FALSE(pc_class_from_name("9").has_value());
  CHECK(pt_class_from_name("void*") == 3);
  CHECK_FALSE(pt_class_from_name("double").has_value());

  CHECK(pc_class_from_count(0) == 0);
  CHECK(pc_class_from_count(8) == 8);
  CHECK(pc_class_from_count(9) == kPcOthers);
  CHECK(pc_class_from_count(100) == kPcOthers);

  CHECK(pt_class_from_type("int") == *pt_class_from_name("int"));
  CHECK(pt_class_from_type("char *") == *pt_class_from_name("char*"));
  CHECK(pt_class_from_type("  void * ") == *pt_class_from_name("void*"));
  CHECK(pt_class_from_type("struct foo *") == *pt_class_from_name("struct*"));
  CHECK(pt_class_from_type("struct foo") == *pt_class_from_name("struct"));
  CHECK(pt_class_from_type("unsigned long") == kPtOthers);
  CHECK_FALSE(pt_class_from_type("unsigned long", false).has_value());

  SignatureLabel ok;
  ok.pc = 2;
  ok.pt = {1, 1, kPtNull};
  CHECK(ok.valid());
  ok.pt = {1, kPtNull, kPtNull};  // NULL inside the observed prefix
  CHECK_FALSE(ok.valid());
  ok.pc = 0;
  ok.pt = {kPtNull, kPtNull, kPtNull};
  CHECK(ok.valid());
  ok.pt = {1, kPtNull, kPtNull};  // typed position past the end
  CHECK_FALSE(ok.valid());
  ok.pc = kPcOthers;
  ok.pt = {1, 1, 1};
  CHECK(ok.valid());
}
