// End-to-end tests for the command-line front end. The binary under test is
// located through the SIGREC_CLI_BIN environment variable (set by the build)
// and exercised through a shell in throwaway working directories.

#include <catch2/catch.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sigrec/ingest.hpp"
#include "sigrec/model.hpp"

namespace fs = std::filesystem;
using namespace sigrec;

namespace {

const std::string& cli_bin() {
  static const std::string path = [] {
    const char* env = std::getenv("SIGREC_CLI_BIN");
    REQUIRE(env != nullptr);
    return std::string(env);
  }();
  return path;
}

fs::path make_workspace() {
  static int counter = 0;
  const fs::path dir = fs::temp_directory_path() /
                       ("sigrec_cli_" + std::to_string(::getpid())) /
                       std::to_string(counter++);
  fs::create_directories(dir);
  return dir;
}

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Runs the CLI with `args` inside `dir`; `env_prefix` may carry
/// VAR=value assignments.
CliResult run_cli(const fs::path& dir, const std::string& args,
                  const std::string& env_prefix = "") {
  const fs::path out_file = dir / "_stdout.txt";
  const fs::path err_file = dir / "_stderr.txt";
  const std::string command = "cd '" + dir.string() + "' && " + env_prefix +
                              (env_prefix.empty() ? "" : " ") + "'" +
                              cli_bin() + "' " + args + " > '" +
                              out_file.string() + "' 2> '" +
                              err_file.string() + "'";
  const int raw = std::system(command.c_str());
  CliResult result;
  result.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  result.out = slurp(out_file);
  result.err = slurp(err_file);
  return result;
}

void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << content;
  REQUIRE(out.good());
}

/// Two tiny objdump-style listings (one function duplicated across
/// binaries) plus the matching label sidecar.
void write_corpus(const fs::path& dir) {
  write_file(dir / "asm" / "bin_a.txt",
             "bin_a:     file format elf64-x86-64\n"
             "\n"
             "Disassembly of section .text:\n"
             "\n"
             "0000000000001149 <alpha>:\n"
             "    1149:\t55                   \tpush   %rbp\n"
             "    114a:\t89 c8                \tmov    %ecx,%eax\n"
             "    114c:\t83 c0 01             \tadd    $0x1,%eax\n"
             "    114f:\tc3                   \tret\n"
             "\n"
             "0000000000001150 <beta>:\n"
             "    1150:\t55                   \tpush   %rbp\n"
             "    1151:\tf3 0f 58 c1          \taddss  %xmm1,%xmm0\n"
             "    1155:\tc3                   \tret\n"
             "\n"
             "0000000000001156 <gamma>:\n"
             "    1156:\t31 c0                \txor    %eax,%eax\n"
             "    1158:\te8 10 00 00 00       \tcall   1169 <alpha+0x20>\n"
             "    115d:\tc3                   \tret\n");
  write_file(dir / "asm" / "bin_b.txt",
             "bin_b:     file format elf64-x86-64\n"
             "\n"
             "0000000000002000 <delta>:\n"
             "    2000:\t48 89 fe             \tmov    %rdi,%rsi\n"
             "    2003:\t48 8b 07             \tmov    (%rdi),%rax\n"
             "    2006:\tc3                   \tret\n"
             "\n"
             "0000000000002010 <alpha>:\n"
             "    2010:\t55                   \tpush   %rbp\n"
             "    2011:\t89 c8                \tmov    %ecx,%eax\n"
             "    2013:\t83 c0 01             \tadd    $0x1,%eax\n"
             "    2016:\tc3                   \tret\n");
  write_file(
      dir / "labels.jsonl",
      "{\"binary\":\"bin_a\",\"function\":\"alpha\",\"pc\":1,\"pts\":[\"int\"]}\n"
      "{\"binary\":\"bin_a\",\"function\":\"beta\",\"pc\":2,\"pts\":[\"float\",\"float\"]}\n"
      "{\"binary\":\"bin_a\",\"function\":\"gamma\",\"pc\":0,\"pts\":[]}\n"
      "{\"binary\":\"bin_b\",\"function\":\"delta\",\"pc\":1,\"pts\":[\"struct *\"]}\n"
      "{\"binary\":\"bin_b\",\"function\":\"alpha\",\"pc\":1,\"pts\":[\"int\"]}\n");
}

/// ingest + embed with settings small enough for the toy corpus.
void run_pipeline_front(const fs::path& dir) {
  auto ingest = run_cli(dir, "ingest --asm-dir asm --labels labels.jsonl");
  REQUIRE(ingest.code == 0);
  auto embed = run_cli(dir,
                       "embed --dataset dataset.train.jsonl --dim 8 "
                       "--epochs 2 --min-count 1 --window 2");
  REQUIRE(embed.code == 0);
}

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

}  // namespace

TEST_CASE("cli usage surface") {
  const auto dir = make_workspace();

  SECTION("no arguments is a usage error") {
    CHECK(run_cli(dir, "").code == 1);
  }

  SECTION("--help lists every subcommand") {
    const auto r = run_cli(dir, "--help");
    CHECK(r.code == 0);
    for (const char* cmd :
         {"ingest", "embed", "train", "predict", "eval", "ablate"})
      CHECK(r.out.find(cmd) != std::string::npos);
  }

  SECTION("unknown command is a usage error") {
    const auto r = run_cli(dir, "bogus");
    CHECK(r.code == 1);
    CHECK(r.err.find("unknown command") != std::string::npos);
  }

  SECTION("per-command help exits cleanly") {
    const auto r = run_cli(dir, "train --help");
    CHECK(r.code == 0);
    CHECK(r.out.find("--structure") != std::string::npos);
  }

  SECTION("missing required options are usage errors") {
    CHECK(run_cli(dir, "train").code == 1);
    CHECK(run_cli(dir, "ingest --asm-dir only").code == 1);
  }

  SECTION("unsupported precision is a usage error") {
    write_corpus(dir);
    const auto r = run_cli(
        dir, "ingest --asm-dir asm --labels labels.jsonl --precision 64");
    CHECK(r.code == 1);
    CHECK(r.err.find("precision") != std::string::npos);
  }
}

TEST_CASE("cli ingest") {
  const auto dir = make_workspace();
  write_corpus(dir);

  SECTION("writes dataset, split files and resolved config") {
    const auto r = run_cli(dir, "ingest --asm-dir asm --labels labels.jsonl");
    REQUIRE(r.code == 0);
    CHECK(fs::exists(dir / "dataset.jsonl"));
    CHECK(fs::exists(dir / "dataset.train.jsonl"));
    CHECK(fs::exists(dir / "dataset.test.jsonl"));
    CHECK(fs::exists(dir / "ingest.config.json"));

    // 5 parsed functions, 1 cross-binary duplicate collapsed
    CHECK(r.out.find("parsed functions: 5") != std::string::npos);
    CHECK(r.out.find("duplicates removed: 1") != std::string::npos);
    const auto records = read_dataset_jsonl_file((dir / "dataset.jsonl").string());
    CHECK(records.size() == 4);
    const auto train =
        read_dataset_jsonl_file((dir / "dataset.train.jsonl").string());
    const auto test =
        read_dataset_jsonl_file((dir / "dataset.test.jsonl").string());
    CHECK(train.size() + test.size() == records.size());

    const auto config =
        nlohmann::json::parse(slurp(dir / "ingest.config.json"));
    CHECK(config["command"] == "ingest");
    CHECK(config["seed"] == 1);
    CHECK(config["precision"] == 32);
    CHECK(config["options"]["split_ratio"] == 0.8);
  }

  SECTION("reruns are byte-identical") {
    REQUIRE(run_cli(dir, "ingest --asm-dir asm --labels labels.jsonl").code == 0);
    const std::string first = slurp(dir / "dataset.jsonl");
    const std::string first_train = slurp(dir / "dataset.train.jsonl");
    REQUIRE(run_cli(dir, "ingest --asm-dir asm --labels labels.jsonl").code == 0);
    CHECK(slurp(dir / "dataset.jsonl") == first);
    CHECK(slurp(dir / "dataset.train.jsonl") == first_train);
  }

  SECTION("a different seed changes the split but not the dataset") {
    REQUIRE(run_cli(dir, "ingest --asm-dir asm --labels labels.jsonl").code == 0);
    const std::string dataset = slurp(dir / "dataset.jsonl");
    const std::string train = slurp(dir / "dataset.train.jsonl");
    REQUIRE(
        run_cli(dir, "ingest --asm-dir asm --labels labels.jsonl --seed 99")
            .code == 0);
    CHECK(slurp(dir / "dataset.jsonl") == dataset);
    CHECK(slurp(dir / "dataset.train.jsonl") != train);
  }

  SECTION("missing inputs exit with the input-error code") {
    CHECK(run_cli(dir, "ingest --asm-dir missing --labels labels.jsonl").code == 2);
    CHECK(run_cli(dir, "ingest --asm-dir asm --labels missing.jsonl").code == 2);
  }

  SECTION("bad split ratio is a usage error") {
    CHECK(run_cli(dir, "ingest --asm-dir asm --labels labels.jsonl "
                       "--split-ratio 1.5").code == 1);
  }

  SECTION("the output directory option and environment variable agree") {
    REQUIRE(run_cli(dir, "ingest --asm-dir asm --labels labels.jsonl "
                         "--out-dir from_flag").code == 0);
    CHECK(fs::exists(dir / "from_flag" / "dataset.jsonl"));
    REQUIRE(run_cli(dir, "ingest --asm-dir asm --labels labels.jsonl",
                    "SIGREC_OUT_DIR=from_env").code == 0);
    CHECK(fs::exists(dir / "from_env" / "dataset.jsonl"));
  }
}

TEST_CASE("cli embed") {
  const auto dir = make_workspace();
  write_corpus(dir);
  REQUIRE(run_cli(dir, "ingest --asm-dir asm --labels labels.jsonl").code == 0);

  SECTION("writes vocabulary and embeddings of the requested width") {
    const auto r = run_cli(dir,
                           "embed --dataset dataset.train.jsonl --dim 8 "
                           "--epochs 2 --min-count 1 --window 2");
    REQUIRE(r.code == 0);
    REQUIRE(fs::exists(dir / "embeddings.txt"));
    REQUIRE(fs::exists(dir / "vocab.tsv"));
    CHECK(fs::exists(dir / "embed.config.json"));

    const auto loaded = read_embeddings_file((dir / "embeddings.txt").string());
    CHECK(loaded.vectors.rows() == 8);
    CHECK(loaded.tokens.size() >= 2);
    CHECK(loaded.tokens[0] == "<PAD>");
  }

  SECTION("same seed reruns are byte-identical, different seeds differ") {
    const std::string args =
        "embed --dataset dataset.train.jsonl --dim 8 --epochs 2 "
        "--min-count 1 --window 2";
    REQUIRE(run_cli(dir, args).code == 0);
    const std::string first = slurp(dir / "embeddings.txt");
    REQUIRE(run_cli(dir, args).code == 0);
    CHECK(slurp(dir / "embeddings.txt") == first);
    REQUIRE(run_cli(dir, args + " --seed 7").code == 0);
    CHECK(slurp(dir / "embeddings.txt") != first);
  }

  SECTION("failed runs leave no partial outputs") {
    write_file(dir / "empty.jsonl", "");
    const auto r = run_cli(dir, "embed --dataset empty.jsonl --min-count 1");
    CHECK(r.code == 2);
    CHECK_FALSE(fs::exists(dir / "embeddings.txt"));
    CHECK_FALSE(fs::exists(dir / "vocab.tsv"));
    CHECK_FALSE(fs::exists(dir / "embed.config.json"));
  }
}

TEST_CASE("cli train") {
  const auto dir = make_workspace();
  write_corpus(dir);
  run_pipeline_front(dir);
  const std::string base =
      "train --dataset dataset.train.jsonl --embeddings embeddings.txt "
      "--vocab vocab.tsv --size 6 --hidden 8 --batch 2 --epochs 2 --lr 1e-2";

  SECTION("multi-task training saves a loadable checkpoint") {
    const auto r = run_cli(dir, base);
    REQUIRE(r.code == 0);
    CHECK(r.out.find("epoch 1/2") != std::string::npos);
    CHECK(fs::exists(dir / "train.config.json"));
    const auto m = model::load_checkpoint_file((dir / "model.ckpt").string());
    CHECK(m.config.structure == model::Structure::kMtl);
    CHECK(m.config.hidden == 8);
    CHECK(m.config.slice.size == 6);
    CHECK(m.heads.size() == 4);
  }

  SECTION("single-task training carries the selected task") {
    REQUIRE(run_cli(dir, base + " --structure stl --task pt2 --out stl.ckpt")
                .code == 0);
    const auto m = model::load_checkpoint_file((dir / "stl.ckpt").string());
    CHECK(m.config.structure == model::Structure::kStl);
    REQUIRE(m.config.task.has_value());
    CHECK(*m.config.task == model::Task::kPt2);
    CHECK(m.heads.size() == 1);
  }

  SECTION("structure/task combinations are validated") {
    CHECK(run_cli(dir, base + " --structure stl").code == 1);
    CHECK(run_cli(dir, base + " --task pc").code == 1);
    CHECK(run_cli(dir, base + " --structure other").code == 1);
    CHECK(run_cli(dir, base + " --structure stl --task pt9").code == 1);
  }

  SECTION("invalid location is a usage error") {
    CHECK(run_cli(dir, base + " --location middle").code == 1);
  }

  SECTION("checkpoints are deterministic per seed") {
    REQUIRE(run_cli(dir, base + " --out a.ckpt").code == 0);
    REQUIRE(run_cli(dir, base + " --out b.ckpt").code == 0);
    REQUIRE(run_cli(dir, base + " --out c.ckpt --seed 3").code == 0);
    CHECK(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"));
    CHECK(slurp(dir / "a.ckpt") != slurp(dir / "c.ckpt"));
  }

  SECTION("works without a vocabulary file") {
    REQUIRE(run_cli(dir,
                    "train --dataset dataset.train.jsonl --embeddings "
                    "embeddings.txt --size 6 --hidden 8 --batch 2 --epochs 1 "
                    "--out novocab.ckpt")
                .code == 0);
    const auto m = model::load_checkpoint_file((dir / "novocab.ckpt").string());
    CHECK(m.vocab.size() >= 2);
  }

  SECTION("missing embeddings file is an input error") {
    CHECK(run_cli(dir,
                  "train --dataset dataset.train.jsonl --embeddings nope.txt")
              .code == 2);
  }
}

TEST_CASE("cli predict and eval") {
  const auto dir = make_workspace();
  write_corpus(dir);
  run_pipeline_front(dir);
  REQUIRE(run_cli(dir,
                  "train --dataset dataset.train.jsonl --embeddings "
                  "embeddings.txt --vocab vocab.tsv --size 6 --hidden 8 "
                  "--batch 2 --epochs 2 --lr 1e-2")
              .code == 0);

  SECTION("one prediction line per function, in listing order") {
    const auto r = run_cli(dir, "predict --model model.ckpt --asm asm/bin_a.txt");
    REQUIRE(r.code == 0);
    CHECK(count_lines(r.out) == 3);
    const auto alpha = r.out.find("bin_a:alpha");
    const auto beta = r.out.find("bin_a:beta");
    const auto gamma = r.out.find("bin_a:gamma");
    REQUIRE(alpha != std::string::npos);
    REQUIRE(beta != std::string::npos);
    REQUIRE(gamma != std::string::npos);
    CHECK(alpha < beta);
    CHECK(beta < gamma);
    CHECK(r.out.find("pc=") != std::string::npos);
    CHECK(r.out.find("pt3=") != std::string::npos);
  }

  SECTION("jsonl predictions parse and carry full distributions") {
    const auto r = run_cli(
        dir, "predict --model model.ckpt --asm asm/bin_a.txt --format jsonl");
    REQUIRE(r.code == 0);
    std::istringstream in(r.out);
    std::string line;
    int rows = 0;
    while (std::getline(in, line)) {
      const auto j = nlohmann::json::parse(line);
      CHECK(j["binary"] == "bin_a");
      REQUIRE(j["heads"].contains("pc"));
      CHECK(j["heads"]["pc"]["probs"].size() == 10);
      ++rows;
    }
    CHECK(rows == 3);
  }

  SECTION("corrupt checkpoint is an input error") {
    CHECK(run_cli(dir, "predict --model vocab.tsv --asm asm/bin_a.txt").code == 2);
  }

  SECTION("eval writes the report in each format") {
    const auto table =
        run_cli(dir, "eval --model model.ckpt --dataset dataset.test.jsonl");
    REQUIRE(table.code == 0);
    CHECK(table.out.find("task pc") != std::string::npos);
    CHECK(table.out.find('%') != std::string::npos);

    const auto tsv = run_cli(dir,
                             "eval --model model.ckpt --dataset "
                             "dataset.test.jsonl --format tsv --out report.tsv");
    REQUIRE(tsv.code == 0);
    const std::string text = slurp(dir / "report.tsv");
    CHECK(text.rfind("task\tclass\t", 0) == 0);

    const auto jsonl = run_cli(dir,
                               "eval --model model.ckpt --dataset "
                               "dataset.test.jsonl --format jsonl");
    REQUIRE(jsonl.code == 0);
    std::istringstream in(jsonl.out);
    std::string line;
    int rows = 0;
    while (std::getline(in, line)) {
      CHECK(nlohmann::json::parse(line).contains("accuracy"));
      ++rows;
    }
    CHECK(rows == 4);
  }

  SECTION("timing is reported only on request") {
    const auto plain =
        run_cli(dir, "eval --model model.ckpt --dataset dataset.test.jsonl");
    CHECK(plain.out.find("inference") == std::string::npos);
    const auto timed = run_cli(dir,
                               "eval --model model.ckpt --dataset "
                               "dataset.test.jsonl --timing --timing-reps 1");
    REQUIRE(timed.code == 0);
    CHECK(timed.out.find("per-function inference:") != std::string::npos);
  }

  SECTION("empty test set is an input error") {
    write_file(dir / "empty.jsonl", "");
    CHECK(run_cli(dir, "eval --model model.ckpt --dataset empty.jsonl").code == 2);
  }
}

TEST_CASE("cli ablate") {
  const auto dir = make_workspace();
  write_corpus(dir);
  run_pipeline_front(dir);
  const std::string base =
      "ablate --dataset dataset.jsonl --embeddings embeddings.txt "
      "--vocab vocab.tsv --hidden 8 --batch 2 --epochs 1 --lr 1e-2 "
      "--split-ratio 0.5 --timing-reps 1";

  SECTION("grid of sizes x locations x structures, one row each") {
    const auto r = run_cli(dir, base + " --sizes 4,8 --locations head,tail "
                                       "--structures mtl");
    REQUIRE(r.code == 0);
    for (const char* name : {"ablation.txt", "ablation.tsv", "ablation.jsonl"})
      CHECK(fs::exists(dir / name));

    std::istringstream in(slurp(dir / "ablation.jsonl"));
    std::string line;
    std::vector<nlohmann::json> rows;
    while (std::getline(in, line)) rows.push_back(nlohmann::json::parse(line));
    REQUIRE(rows.size() == 4);
    for (const auto& row : rows) {
      CHECK(row["status"] == "ok");
      CHECK(row["structure"] == "mtl");
    }
    CHECK(rows[0]["size"] == 4);
    CHECK(rows[0]["location"] == "head");
    CHECK(rows[1]["location"] == "tail");
    CHECK(rows[3]["size"] == 8);
  }

  SECTION("invalid grid values are usage errors") {
    CHECK(run_cli(dir, base + " --sizes 0").code == 1);
    CHECK(run_cli(dir, base + " --sizes x").code == 1);
    CHECK(run_cli(dir, base + " --locations middle").code == 1);
    CHECK(run_cli(dir, base + " --structures mtl,other").code == 1);
  }

  SECTION("explicit test dataset skips the split") {
    const auto r = run_cli(dir, base +
                                    " --sizes 4 --locations head --structures "
                                    "mtl --test-dataset dataset.test.jsonl");
    REQUIRE(r.code == 0);
    std::istringstream in(slurp(dir / "ablation.jsonl"));
    std::string line;
    REQUIRE(std::getline(in, line));
    CHECK(nlohmann::json::parse(line)["status"] == "ok");
  }
}
