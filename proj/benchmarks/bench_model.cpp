#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "sigrec/model.hpp"
#include "sigrec/rng.hpp"
#include "sigrec/tokenize.hpp"

using namespace sigrec;

namespace {

const std::vector<std::string>& instruction_pool() {
  static const std::vector<std::string> pool = {
      "mov %rax,%rbx", "add %rcx,%rdx", "sub %rsi,%rdi", "xor %r8,%r9",
      "cmp %rbx,%rcx", "test %rax,%rax", "push %rbp",    "pop %rbp",
      "mov IMM(%rbp),%edx", "call IMM<FUNC>", "lea IMM(%rip),%rsi", "ret"};
  return pool;
}

std::vector<std::string> random_function(int length, Rng& rng) {
  const auto& pool = instruction_pool();
  std::vector<std::string> instrs;
  instrs.reserve(static_cast<std::size_t>(length));
  for (int i = 0; i < length; ++i)
    instrs.push_back(pool[rng.uniform_int(pool.size())]);
  return instrs;
}

Vocabulary pool_vocab() {
  std::vector<std::vector<std::string>> sequences;
  sequences.push_back(instruction_words(instruction_pool()));
  return build_vocab(sequences, 1);
}

MatXf random_embedding(int dim, std::size_t vocab_size, Rng& rng) {
  MatXf e(dim, static_cast<Eigen::Index>(vocab_size));
  for (Eigen::Index c = 0; c < e.cols(); ++c)
    for (Eigen::Index r = 0; r < e.rows(); ++r)
      e(r, c) = static_cast<float>(rng.uniform(-0.5, 0.5));
  return e;
}

model::MtlGruModel make_model(model::Structure structure,
                              std::optional<model::Task> task, int hidden) {
  Rng rng(7);
  const auto vocab = pool_vocab();
  const auto embedding = random_embedding(128, vocab.size(), rng);
  model::ModelConfig cfg;
  cfg.structure = structure;
  cfg.task = task;
  cfg.slice = SliceSpec{40, SliceLocation::kHead};
  cfg.embed_dim = 128;
  cfg.hidden = hidden;
  return model::build_model(cfg, vocab, embedding, 1);
}

/// Per-function inference with the shared-encoder model (all four heads).
void BM_MultiTaskPredict(benchmark::State& state) {
  const auto m = make_model(model::Structure::kMtl, std::nullopt,
                            static_cast<int>(state.range(0)));
  Rng rng(3);
  const auto fn = random_function(40, rng);
  for (auto _ : state) {
    auto prediction = model::predict(m, fn);
    benchmark::DoNotOptimize(prediction.heads.data());
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_MultiTaskPredict)->Arg(64)->Arg(256)->ArgName("hidden");

/// The same function pushed through four single-task models — the
/// configuration the shared encoder replaces.
void BM_FourSingleTaskPredicts(benchmark::State& state) {
  std::vector<model::MtlGruModel> models;
  for (model::Task task : {model::Task::kPc, model::Task::kPt1,
                           model::Task::kPt2, model::Task::kPt3})
    models.push_back(make_model(model::Structure::kStl, task,
                                static_cast<int>(state.range(0))));
  Rng rng(3);
  const auto fn = random_function(40, rng);
  for (auto _ : state) {
    for (const auto& m : models) {
      auto prediction = model::predict(m, fn);
      benchmark::DoNotOptimize(prediction.heads.data());
    }
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_FourSingleTaskPredicts)->Arg(64)->Arg(256)->ArgName("hidden");

/// Batched forward pass, the shape used during evaluation.
void BM_BatchedForward(benchmark::State& state) {
  const auto m = make_model(model::Structure::kMtl, std::nullopt, 256);
  Rng rng(3);
  std::vector<TokenSequence> batch;
  for (int i = 0; i < state.range(0); ++i)
    batch.push_back(model::encode_for_model(m, random_function(40, rng)));
  for (auto _ : state) {
    auto probs = model::forward_probs(m, batch);
    benchmark::DoNotOptimize(probs.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_BatchedForward)->Arg(32)->Arg(128)->ArgName("batch");

/// Window slicing plus tokenization plus id mapping for one function.
void BM_EncodeFunction(benchmark::State& state) {
  const auto vocab = pool_vocab();
  Rng rng(3);
  const auto fn = random_function(120, rng);
  const SliceSpec spec{40, SliceLocation::kHead};
  for (auto _ : state) {
    auto seq = encode(fn, vocab, spec);
    benchmark::DoNotOptimize(seq.ids.data());
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_EncodeFunction);

}  // namespace

BENCHMARK_MAIN();
