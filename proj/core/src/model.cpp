#include "sigrec/model.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "sigrec/hash.hpp"

namespace sigrec::model {

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Names and task plumbing
// ---------------------------------------------------------------------------

std::string_view structure_name(Structure s) {
  return s == Structure::kMtl ? "mtl" : "stl";
}

std::optional<Structure> structure_from_name(std::string_view name) {
  if (name == "mtl") return Structure::kMtl;
  if (name == "stl") return Structure::kStl;
  return std::nullopt;
}

std::string_view task_name(Task t) {
  switch (t) {
    case Task::kPc: return "pc";
    case Task::kPt1: return "pt1";
    case Task::kPt2: return "pt2";
    case Task::kPt3: return "pt3";
  }
  throw InvalidArgument("unknown task");
}

std::optional<Task> task_from_name(std::string_view name) {
  if (name == "pc") return Task::kPc;
  if (name == "pt1") return Task::kPt1;
  if (name == "pt2") return Task::kPt2;
  if (name == "pt3") return Task::kPt3;
  return std::nullopt;
}

int task_class_count(Task t) {
  return t == Task::kPc ? kPcClasses : kPtClasses;
}

int task_label(const SignatureLabel& label, Task t) {
  switch (t) {
    case Task::kPc: return label.pc;
    case Task::kPt1: return label.pt[0];
    case Task::kPt2: return label.pt[1];
    case Task::kPt3: return label.pt[2];
  }
  throw InvalidArgument("unknown task");
}

void validate_config(const ModelConfig& config) {
  if (config.structure == Structure::kMtl && config.task)
    throw InvalidArgument("multi-task configuration must not select a task");
  if (config.structure == Structure::kStl && !config.task)
    throw InvalidArgument("single-task configuration requires a task");
  if (config.shared_layers != 2)
    throw InvalidArgument("encoder depth is fixed at two layers");
  if (config.embed_dim < 1) throw InvalidArgument("embed_dim must be positive");
  if (config.hidden < 1) throw InvalidArgument("hidden width must be positive");
  if (config.slice.size < 1) throw InvalidArgument("slice size must be positive");
  if (config.dropout < 0.0 || config.dropout >= 1.0)
    throw InvalidArgument("dropout must be in [0, 1)");
}

std::vector<Task> config_tasks(const ModelConfig& config) {
  if (config.structure == Structure::kStl) return {*config.task};
  return {Task::kPc, Task::kPt1, Task::kPt2, Task::kPt3};
}

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

MtlGruModel build_model(const ModelConfig& config, const Vocabulary& vocab,
                        const MatXf& embedding, std::uint64_t seed) {
  validate_config(config);
  if (embedding.rows() != config.embed_dim)
    throw InvalidArgument("embedding dimension does not match configuration");
  if (embedding.cols() != static_cast<Eigen::Index>(vocab.size()))
    throw InvalidArgument("embedding table does not cover the vocabulary");

  MtlGruModel m;
  m.config = config;
  m.vocab = vocab;
  m.embedding = embedding;

  Rng rng(seed);
  m.gru1 = nn::GruParams<float>::glorot(config.embed_dim, config.hidden, rng);
  m.gru2 = nn::GruParams<float>::glorot(config.hidden, config.hidden, rng);
  for (Task t : config_tasks(config))
    m.heads.push_back(
        nn::DenseParams<float>::glorot(config.hidden, task_class_count(t), rng));
  return m;
}

MatXf embedding_matrix_for_vocab(const Vocabulary& vocab,
                                 const LoadedEmbeddings& loaded) {
  std::unordered_map<std::string_view, Eigen::Index> index;
  index.reserve(loaded.tokens.size());
  for (std::size_t i = 0; i < loaded.tokens.size(); ++i)
    index.emplace(loaded.tokens[i], static_cast<Eigen::Index>(i));

  MatXf out(loaded.vectors.rows(), static_cast<Eigen::Index>(vocab.size()));
  for (std::size_t id = 0; id < vocab.size(); ++id) {
    auto it = index.find(vocab.token(static_cast<std::int32_t>(id)));
    if (it == index.end())
      throw InvalidArgument("embedding file lacks vocabulary token '" +
                            vocab.token(static_cast<std::int32_t>(id)) + "'");
    out.col(static_cast<Eigen::Index>(id)) = loaded.vectors.col(it->second);
  }
  return out;
}

namespace {

std::size_t gru_scalar_count(const nn::GruParams<float>& p) {
  auto cnt = [](const auto& m) {
    return static_cast<std::size_t>(m.rows() * m.cols());
  };
  return cnt(p.Wz) + cnt(p.Wr) + cnt(p.Wh) + cnt(p.Uz) + cnt(p.Ur) +
         cnt(p.Uh) + cnt(p.bz) + cnt(p.br) + cnt(p.bh);
}

}  // namespace

std::size_t count_parameters(const MtlGruModel& model) {
  validate_config(model.config);
  std::size_t total = gru_scalar_count(model.gru1) + gru_scalar_count(model.gru2);
  for (const auto& head : model.heads)
    total += static_cast<std::size_t>(head.W.rows() * head.W.cols() +
                                      head.b.size());
  if (model.config.train_embeddings)
    total += static_cast<std::size_t>(model.embedding.rows() *
                                      model.embedding.cols());
  return total;
}

// ---------------------------------------------------------------------------
// Forward helpers
// ---------------------------------------------------------------------------

namespace {

/// Columns of the embedding table gathered per step for a batch of equally
/// long id sequences.
std::vector<MatXf> gather_inputs(const MatXf& embedding,
                                 const std::vector<const TokenSequence*>& batch) {
  const auto steps = static_cast<Eigen::Index>(batch.front()->ids.size());
  const auto b = static_cast<Eigen::Index>(batch.size());
  std::vector<MatXf> xs(static_cast<std::size_t>(steps));
  for (Eigen::Index t = 0; t < steps; ++t) {
    MatXf x(embedding.rows(), b);
    for (Eigen::Index j = 0; j < b; ++j) {
      const auto& ids = batch[static_cast<std::size_t>(j)]->ids;
      x.col(j) = embedding.col(ids[static_cast<std::size_t>(t)]);
    }
    xs[static_cast<std::size_t>(t)] = std::move(x);
  }
  return xs;
}

std::vector<Eigen::Index> gather_lengths(
    const std::vector<const TokenSequence*>& batch) {
  std::vector<Eigen::Index> lengths;
  lengths.reserve(batch.size());
  for (const auto* seq : batch) {
    if (seq->true_token_count == 0)
      throw InvalidArgument("cannot run the encoder on an empty function");
    lengths.push_back(static_cast<Eigen::Index>(seq->true_token_count));
  }
  return lengths;
}

/// Masked forward that keeps only the per-step hidden states (inference
/// path; no backward caches).
std::vector<MatXf> gru_output_sequence(const std::vector<MatXf>& xs,
                                       const std::vector<Eigen::Index>& lengths,
                                       const nn::GruParams<float>& p) {
  std::vector<MatXf> outs(xs.size());
  MatXf h = MatXf::Zero(p.hidden_dim(), xs.front().cols());
  for (std::size_t t = 0; t < xs.size(); ++t) {
    auto [h_new, cache] = nn::gru_cell_forward(xs[t], h, p);
    for (Eigen::Index i = 0; i < h_new.cols(); ++i)
      if (static_cast<Eigen::Index>(t) >= lengths[static_cast<std::size_t>(i)])
        h_new.col(i) = h.col(i);
    outs[t] = h_new;
    h = std::move(h_new);
  }
  return outs;
}

/// Dropout-free two-layer encoding of one batch: the final hidden state of
/// the second layer.
MatXf encode_batch(const MtlGruModel& model,
                   const std::vector<const TokenSequence*>& batch) {
  auto lengths = gather_lengths(batch);
  auto xs1 = gather_inputs(model.embedding, batch);
  auto outs1 = gru_output_sequence(xs1, lengths, model.gru1);
  MatXf h = MatXf::Zero(model.gru2.hidden_dim(),
                        static_cast<Eigen::Index>(batch.size()));
  for (std::size_t t = 0; t < outs1.size(); ++t) {
    auto [h_new, cache] = nn::gru_cell_forward(outs1[t], h, model.gru2);
    for (Eigen::Index i = 0; i < h_new.cols(); ++i)
      if (static_cast<Eigen::Index>(t) >= lengths[static_cast<std::size_t>(i)])
        h_new.col(i) = h.col(i);
    h = std::move(h_new);
  }
  return h;
}

constexpr std::size_t kInferenceChunk = 256;

}  // namespace

TokenSequence encode_for_model(const MtlGruModel& model,
                               const std::vector<std::string>& instructions) {
  return encode(instructions, model.vocab, model.config.slice);
}

std::vector<MatXf> forward_probs(const MtlGruModel& model,
                                 const std::vector<TokenSequence>& batch) {
  validate_config(model.config);
  if (batch.empty()) throw InvalidArgument("empty inference batch");
  const auto n = static_cast<Eigen::Index>(batch.size());
  const auto tasks = config_tasks(model.config);

  std::vector<MatXf> probs;
  probs.reserve(tasks.size());
  for (std::size_t k = 0; k < tasks.size(); ++k)
    probs.emplace_back(task_class_count(tasks[k]), n);

  const std::size_t expected_len = batch.front().ids.size();
  for (std::size_t start = 0; start < batch.size(); start += kInferenceChunk) {
    const std::size_t end = std::min(batch.size(), start + kInferenceChunk);
    std::vector<const TokenSequence*> chunk;
    chunk.reserve(end - start);
    for (std::size_t i = start; i < end; ++i) {
      if (batch[i].ids.size() != expected_len)
        throw InvalidArgument("inference batch mixes sequence lengths");
      chunk.push_back(&batch[i]);
    }
    MatXf h = encode_batch(model, chunk);
    for (std::size_t k = 0; k < model.heads.size(); ++k) {
      MatXf p = nn::dense_softmax_forward(h, model.heads[k]);
      probs[k].middleCols(static_cast<Eigen::Index>(start),
                          static_cast<Eigen::Index>(end - start)) = p;
    }
  }
  return probs;
}

Prediction predict(const MtlGruModel& model,
                   const std::vector<std::string>& sanitized_instructions) {
  if (sanitized_instructions.empty())
    throw InvalidArgument("cannot predict on an empty function");
  std::vector<TokenSequence> batch = {
      encode_for_model(model, sanitized_instructions)};
  auto probs = forward_probs(model, batch);

  Prediction pred;
  const auto tasks = config_tasks(model.config);
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    HeadPrediction hp;
    hp.task = tasks[k];
    hp.probs = probs[k].col(0);
    hp.label = 0;
    for (Eigen::Index i = 1; i < hp.probs.size(); ++i)
      if (hp.probs(i) > hp.probs(hp.label)) hp.label = static_cast<int>(i);
    pred.heads.push_back(std::move(hp));
  }
  return pred;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

struct GruAdam {
  nn::AdamState<MatXf> Wz, Wr, Wh, Uz, Ur, Uh;
  nn::AdamState<VecXf> bz, br, bh;

  GruAdam(const nn::GruParams<float>& p, const nn::AdamConfig& cfg)
      : Wz(nn::AdamState<MatXf>::zeros_like(p.Wz, cfg)),
        Wr(nn::AdamState<MatXf>::zeros_like(p.Wr, cfg)),
        Wh(nn::AdamState<MatXf>::zeros_like(p.Wh, cfg)),
        Uz(nn::AdamState<MatXf>::zeros_like(p.Uz, cfg)),
        Ur(nn::AdamState<MatXf>::zeros_like(p.Ur, cfg)),
        Uh(nn::AdamState<MatXf>::zeros_like(p.Uh, cfg)),
        bz(nn::AdamState<VecXf>::zeros_like(p.bz, cfg)),
        br(nn::AdamState<VecXf>::zeros_like(p.br, cfg)),
        bh(nn::AdamState<VecXf>::zeros_like(p.bh, cfg)) {}

  void step(nn::GruParams<float>& p, const nn::GruGrads<float>& g) {
    nn::adam_update(p.Wz, g.Wz, Wz);
    nn::adam_update(p.Wr, g.Wr, Wr);
    nn::adam_update(p.Wh, g.Wh, Wh);
    nn::adam_update(p.Uz, g.Uz, Uz);
    nn::adam_update(p.Ur, g.Ur, Ur);
    nn::adam_update(p.Uh, g.Uh, Uh);
    nn::adam_update(p.bz, g.bz, bz);
    nn::adam_update(p.br, g.br, br);
    nn::adam_update(p.bh, g.bh, bh);
  }
};

struct DenseAdam {
  nn::AdamState<MatXf> W;
  nn::AdamState<VecXf> b;

  DenseAdam(const nn::DenseParams<float>& p, const nn::AdamConfig& cfg)
      : W(nn::AdamState<MatXf>::zeros_like(p.W, cfg)),
        b(nn::AdamState<VecXf>::zeros_like(p.b, cfg)) {}

  void step(nn::DenseParams<float>& p, const nn::DenseGrads<float>& g) {
    nn::adam_update(p.W, g.W, W);
    nn::adam_update(p.b, g.b, b);
  }
};

double squared_norm(const nn::GruGrads<float>& g) {
  return g.Wz.squaredNorm() + g.Wr.squaredNorm() + g.Wh.squaredNorm() +
         g.Uz.squaredNorm() + g.Ur.squaredNorm() + g.Uh.squaredNorm() +
         g.bz.squaredNorm() + g.br.squaredNorm() + g.bh.squaredNorm();
}

void scale_grads(nn::GruGrads<float>& g, float s) {
  g.Wz *= s;
  g.Wr *= s;
  g.Wh *= s;
  g.Uz *= s;
  g.Ur *= s;
  g.Uh *= s;
  g.bz *= s;
  g.br *= s;
  g.bh *= s;
}

}  // namespace

TrainHistory train(MtlGruModel& model,
                   const std::vector<DatasetRecord>& records,
                   const TrainConfig& config) {
  validate_config(model.config);
  if (records.empty()) throw InvalidArgument("empty training set");
  if (config.epochs < 0) throw InvalidArgument("epochs must be non-negative");
  if (config.batch_size < 1) throw InvalidArgument("batch size must be positive");
  if (config.clip_norm && *config.clip_norm <= 0.0)
    throw InvalidArgument("clip norm must be positive");

  const auto tasks = config_tasks(model.config);
  const std::size_t n = records.size();
  const auto hidden = static_cast<Eigen::Index>(model.config.hidden);

  std::vector<TokenSequence> seqs;
  seqs.reserve(n);
  std::vector<std::vector<Eigen::Index>> labels(tasks.size());
  for (auto& l : labels) l.reserve(n);
  for (const auto& rec : records) {
    if (rec.instructions.empty())
      throw InvalidArgument("training record without instructions: " +
                            rec.binary + ":" + rec.function);
    seqs.push_back(encode(rec.instructions, model.vocab, model.config.slice));
    for (std::size_t k = 0; k < tasks.size(); ++k)
      labels[k].push_back(task_label(rec.label, tasks[k]));
  }

  Rng rng(config.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  GruAdam opt1(model.gru1, config.adam);
  GruAdam opt2(model.gru2, config.adam);
  std::vector<DenseAdam> opt_heads;
  for (const auto& head : model.heads) opt_heads.emplace_back(head, config.adam);
  std::optional<nn::AdamState<MatXf>> opt_embed;
  if (model.config.train_embeddings)
    opt_embed = nn::AdamState<MatXf>::zeros_like(model.embedding, config.adam);

  const double rate = model.config.dropout;
  const bool use_dropout = rate > 0.0;

  TrainHistory history;
  history.tasks = tasks;
  history.epochs.reserve(static_cast<std::size_t>(config.epochs));

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t_start = std::chrono::steady_clock::now();
    rng.shuffle(order);
    std::vector<double> loss_sum(tasks.size(), 0.0);

    for (std::size_t start = 0; start < n;
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end =
          std::min(n, start + static_cast<std::size_t>(config.batch_size));
      const auto b = static_cast<Eigen::Index>(end - start);

      std::vector<const TokenSequence*> batch;
      std::vector<std::vector<Eigen::Index>> batch_labels(tasks.size());
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(&seqs[order[i]]);
        for (std::size_t k = 0; k < tasks.size(); ++k)
          batch_labels[k].push_back(labels[k][order[i]]);
      }

      auto lengths = gather_lengths(batch);
      auto xs1 = gather_inputs(model.embedding, batch);
      const auto steps = xs1.size();

      std::vector<MatXf> mask1;
      MatXf mask2;
      if (use_dropout) {
        mask1.reserve(steps);
        for (std::size_t t = 0; t < steps; ++t)
          mask1.push_back(nn::dropout_mask<float>(hidden, b, rate, rng));
        mask2 = nn::dropout_mask<float>(hidden, b, rate, rng);
      }

      auto seq1 = nn::gru_sequence_forward(xs1, lengths, model.gru1, true);
      std::vector<MatXf> xs2(steps);
      for (std::size_t t = 0; t < steps; ++t)
        xs2[t] = use_dropout ? seq1.cache.steps[t].h.cwiseProduct(mask1[t])
                             : seq1.cache.steps[t].h;
      auto seq2 = nn::gru_sequence_forward(xs2, lengths, model.gru2, true);
      MatXf h_shared =
          use_dropout ? seq2.h_final.cwiseProduct(mask2) : seq2.h_final;

      MatXf dh_shared = MatXf::Zero(hidden, b);
      std::vector<nn::DenseGrads<float>> head_grads(model.heads.size());
      for (std::size_t k = 0; k < model.heads.size(); ++k) {
        MatXf probs = nn::dense_softmax_forward(h_shared, model.heads[k]);
        loss_sum[k] +=
            static_cast<double>(nn::cross_entropy_mean(probs, batch_labels[k])) *
            static_cast<double>(b);
        head_grads[k] = nn::dense_softmax_ce_backward(
            probs, batch_labels[k], h_shared, model.heads[k],
            1.0f / static_cast<float>(b), dh_shared);
      }

      MatXf dh2 = use_dropout ? dh_shared.cwiseProduct(mask2).eval()
                              : std::move(dh_shared);
      std::vector<MatXf> dxs2;
      auto grads2 = nn::gru_sequence_backward(dh2, seq2.cache, model.gru2, &dxs2);

      std::vector<MatXf> dh1(steps);
      for (std::size_t t = 0; t < steps; ++t)
        dh1[t] = use_dropout ? dxs2[t].cwiseProduct(mask1[t]).eval()
                             : std::move(dxs2[t]);
      std::vector<MatXf> dxs1;
      auto grads1 = nn::gru_sequence_backward_per_step(
          dh1, seq1.cache, model.gru1,
          model.config.train_embeddings ? &dxs1 : nullptr);

      MatXf dE;
      if (model.config.train_embeddings) {
        dE = MatXf::Zero(model.embedding.rows(), model.embedding.cols());
        for (std::size_t t = 0; t < steps; ++t) {
          for (Eigen::Index j = 0; j < b; ++j) {
            const auto id =
                batch[static_cast<std::size_t>(j)]->ids[t];
            dE.col(id) += dxs1[t].col(j);
          }
        }
      }

      if (config.clip_norm) {
        double sq = squared_norm(grads1) + squared_norm(grads2);
        for (const auto& g : head_grads)
          sq += g.W.squaredNorm() + g.b.squaredNorm();
        if (model.config.train_embeddings) sq += dE.squaredNorm();
        const double norm = std::sqrt(sq);
        if (norm > *config.clip_norm) {
          const auto s = static_cast<float>(*config.clip_norm / norm);
          scale_grads(grads1, s);
          scale_grads(grads2, s);
          for (auto& g : head_grads) {
            g.W *= s;
            g.b *= s;
          }
          if (model.config.train_embeddings) dE *= s;
        }
      }

      opt1.step(model.gru1, grads1);
      opt2.step(model.gru2, grads2);
      for (std::size_t k = 0; k < model.heads.size(); ++k)
        opt_heads[k].step(model.heads[k], head_grads[k]);
      if (model.config.train_embeddings)
        nn::adam_update(model.embedding, dE, *opt_embed);
    }

    EpochStats stats;
    stats.head_loss.reserve(tasks.size());
    for (double s : loss_sum) stats.head_loss.push_back(s / static_cast<double>(n));
    stats.seconds = std::chrono::duration<double>(
                        std::chrono::steady_clock::now() - t_start)
                        .count();
    history.epochs.push_back(std::move(stats));
  }
  return history;
}

double compute_loss(const MtlGruModel& model,
                    const std::vector<DatasetRecord>& records) {
  if (records.empty()) throw InvalidArgument("empty dataset");
  std::vector<TokenSequence> seqs;
  seqs.reserve(records.size());
  for (const auto& rec : records) {
    if (rec.instructions.empty())
      throw InvalidArgument("record without instructions: " + rec.binary +
                            ":" + rec.function);
    seqs.push_back(encode(rec.instructions, model.vocab, model.config.slice));
  }
  auto probs = forward_probs(model, seqs);
  const auto tasks = config_tasks(model.config);

  double total = 0.0;
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    std::vector<Eigen::Index> lab;
    lab.reserve(records.size());
    for (const auto& rec : records) lab.push_back(task_label(rec.label, tasks[k]));
    total += static_cast<double>(nn::cross_entropy_mean(probs[k], lab));
  }
  return total;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

struct TensorRef {
  std::string name;
  const float* data;
  Eigen::Index rows, cols;
};

template <typename M>
TensorRef tensor_ref(std::string name, const M& m) {
  return {std::move(name), m.data(), m.rows(), m.cols()};
}

std::vector<TensorRef> tensor_list(const MtlGruModel& model) {
  std::vector<TensorRef> list;
  list.push_back(tensor_ref("embedding", model.embedding));
  const nn::GruParams<float>* grus[2] = {&model.gru1, &model.gru2};
  for (int g = 0; g < 2; ++g) {
    const std::string prefix = g == 0 ? "gru1." : "gru2.";
    list.push_back(tensor_ref(prefix + "Wz", grus[g]->Wz));
    list.push_back(tensor_ref(prefix + "Wr", grus[g]->Wr));
    list.push_back(tensor_ref(prefix + "Wh", grus[g]->Wh));
    list.push_back(tensor_ref(prefix + "Uz", grus[g]->Uz));
    list.push_back(tensor_ref(prefix + "Ur", grus[g]->Ur));
    list.push_back(tensor_ref(prefix + "Uh", grus[g]->Uh));
    list.push_back(tensor_ref(prefix + "bz", grus[g]->bz));
    list.push_back(tensor_ref(prefix + "br", grus[g]->br));
    list.push_back(tensor_ref(prefix + "bh", grus[g]->bh));
  }
  const auto tasks = config_tasks(model.config);
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    const std::string prefix = "head." + std::string(task_name(tasks[k])) + ".";
    list.push_back(tensor_ref(prefix + "W", model.heads[k].W));
    list.push_back(tensor_ref(prefix + "b", model.heads[k].b));
  }
  return list;
}

void append_u16(std::string& buf, std::uint16_t v) {
  buf.append(reinterpret_cast<const char*>(&v), sizeof v);
}

void append_u32(std::string& buf, std::uint32_t v) {
  buf.append(reinterpret_cast<const char*>(&v), sizeof v);
}

std::string vocab_digest(const Vocabulary& vocab) {
  std::ostringstream ss;
  write_vocab(ss, vocab);
  return md5_hex(ss.str());
}

json config_to_json(const ModelConfig& c) {
  json j = {
      {"dropout", c.dropout},
      {"embed_dim", c.embed_dim},
      {"hidden", c.hidden},
      {"shared_layers", c.shared_layers},
      {"slice",
       {{"location", c.slice.location == SliceLocation::kHead ? "head" : "tail"},
        {"size", c.slice.size}}},
      {"structure", std::string(structure_name(c.structure))},
      {"train_embeddings", c.train_embeddings},
  };
  if (c.task) j["task"] = std::string(task_name(*c.task));
  return j;
}

const json& require(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end())
    throw FormatError(std::string("checkpoint header missing field '") + key +
                      "'");
  return *it;
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  auto structure = structure_from_name(require(j, "structure").get<std::string>());
  if (!structure) throw FormatError("checkpoint header: unknown structure");
  c.structure = *structure;
  if (j.contains("task")) {
    auto task = task_from_name(j.at("task").get<std::string>());
    if (!task) throw FormatError("checkpoint header: unknown task");
    c.task = *task;
  }
  const json& slice = require(j, "slice");
  const auto loc = require(slice, "location").get<std::string>();
  if (loc == "head") {
    c.slice.location = SliceLocation::kHead;
  } else if (loc == "tail") {
    c.slice.location = SliceLocation::kTail;
  } else {
    throw FormatError("checkpoint header: unknown slice location");
  }
  c.slice.size = require(slice, "size").get<std::size_t>();
  c.embed_dim = require(j, "embed_dim").get<int>();
  c.hidden = require(j, "hidden").get<int>();
  c.shared_layers = require(j, "shared_layers").get<int>();
  c.dropout = require(j, "dropout").get<double>();
  c.train_embeddings = require(j, "train_embeddings").get<bool>();
  try {
    validate_config(c);
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  return c;
}

std::uint32_t crc32_of(const std::string& data) {
  return static_cast<std::uint32_t>(
      ::crc32(::crc32(0L, nullptr, 0),
              reinterpret_cast<const Bytef*>(data.data()),
              static_cast<uInt>(data.size())));
}

}  // namespace

void save_checkpoint(const MtlGruModel& model, std::ostream& out) {
  validate_config(model.config);
  if (static_cast<std::size_t>(model.heads.size()) !=
      config_tasks(model.config).size())
    throw InvalidArgument("model head count does not match configuration");

  const auto tensors = tensor_list(model);
  json manifest = json::array();
  for (const auto& t : tensors)
    manifest.push_back({{"cols", t.cols}, {"name", t.name}, {"rows", t.rows}});

  json head_tasks = json::array();
  json head_classes = json::array();
  for (Task t : config_tasks(model.config)) {
    head_tasks.push_back(std::string(task_name(t)));
    head_classes.push_back(task_class_count(t));
  }

  json vocab_rows = json::array();
  for (std::size_t id = 0; id < model.vocab.size(); ++id) {
    const auto i = static_cast<std::int32_t>(id);
    vocab_rows.push_back({model.vocab.token(i), model.vocab.count(i)});
  }

  json header = {
      {"config", config_to_json(model.config)},
      {"head_classes", head_classes},
      {"head_tasks", head_tasks},
      {"tensors", manifest},
      {"tool", {{"name", kToolName}, {"version", kToolVersion}}},
      {"vocab", vocab_rows},
      {"vocab_hash", vocab_digest(model.vocab)},
  };
  const std::string header_str = header.dump();

  std::string buf;
  buf.append(kCheckpointMagic, sizeof kCheckpointMagic);
  append_u16(buf, kCheckpointVersion);
  append_u32(buf, static_cast<std::uint32_t>(header_str.size()));
  buf += header_str;
  for (const auto& t : tensors)
    buf.append(reinterpret_cast<const char*>(t.data),
               static_cast<std::size_t>(t.rows) *
                   static_cast<std::size_t>(t.cols) * sizeof(float));
  append_u32(buf, crc32_of(buf));

  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("failed to write checkpoint stream");
}

void save_checkpoint_file(const MtlGruModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  save_checkpoint(model, out);
  out.close();
  if (!out) throw IoError("failed to write checkpoint: " + path);
}

MtlGruModel load_checkpoint(std::istream& in, std::optional<Structure> expect) {
  std::string data((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  constexpr std::size_t kMinSize = 4 + 2 + 4 + 4;
  if (data.size() < kMinSize) throw FormatError("truncated checkpoint");

  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, data.data() + data.size() - 4, 4);
  std::string body = data.substr(0, data.size() - 4);
  if (crc32_of(body) != stored_crc)
    throw FormatError("checkpoint checksum mismatch");

  if (std::memcmp(data.data(), kCheckpointMagic, 4) != 0)
    throw FormatError("not a checkpoint file (bad magic)");
  std::uint16_t version;
  std::memcpy(&version, data.data() + 4, 2);
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " +
                      std::to_string(version));
  std::uint32_t header_len;
  std::memcpy(&header_len, data.data() + 6, 4);
  std::size_t offset = 10;
  if (offset + header_len > body.size())
    throw FormatError("truncated checkpoint");

  json header;
  try {
    header = json::parse(data.substr(offset, header_len));
  } catch (const json::exception& e) {
    throw FormatError(std::string("unreadable checkpoint header: ") + e.what());
  }
  offset += header_len;

  MtlGruModel model;
  model.config = config_from_json(require(header, "config"));
  const auto tasks = config_tasks(model.config);

  const json& head_tasks = require(header, "head_tasks");
  const json& head_classes = require(header, "head_classes");
  if (head_tasks.size() != tasks.size() || head_classes.size() != tasks.size())
    throw FormatError("checkpoint head layout does not match configuration");
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    if (head_tasks[k].get<std::string>() != task_name(tasks[k]) ||
        head_classes[k].get<int>() != task_class_count(tasks[k]))
      throw FormatError("checkpoint head layout does not match configuration");
  }

  const json& vocab_rows = require(header, "vocab");
  if (!vocab_rows.is_array() || vocab_rows.size() < 2)
    throw FormatError("checkpoint vocabulary is malformed");
  try {
    for (std::size_t id = 0; id < vocab_rows.size(); ++id) {
      const auto& row = vocab_rows[id];
      if (!row.is_array() || row.size() != 2)
        throw FormatError("checkpoint vocabulary is malformed");
      auto token = row[0].get<std::string>();
      auto count = row[1].get<std::uint64_t>();
      if (id == 0) {
        if (token != Vocabulary::pad_token())
          throw FormatError("checkpoint vocabulary is malformed");
        model.vocab.set_count(Vocabulary::kPadId, count);
      } else if (id == 1) {
        if (token != Vocabulary::unk_token())
          throw FormatError("checkpoint vocabulary is malformed");
        model.vocab.set_count(Vocabulary::kUnkId, count);
      } else {
        model.vocab.add(std::move(token), count);
      }
    }
  } catch (const json::exception&) {
    throw FormatError("checkpoint vocabulary is malformed");
  } catch (const InvalidArgument&) {
    throw FormatError("checkpoint vocabulary is malformed");
  }
  if (require(header, "vocab_hash").get<std::string>() !=
      vocab_digest(model.vocab))
    throw FormatError("checkpoint vocabulary digest mismatch");

  // Materialize parameter holders with the shapes the configuration
  // implies, then fill them in manifest order.
  const auto d = static_cast<Eigen::Index>(model.config.embed_dim);
  const auto h = static_cast<Eigen::Index>(model.config.hidden);
  const auto v = static_cast<Eigen::Index>(model.vocab.size());
  model.embedding.resize(d, v);
  auto shape_gru = [&](nn::GruParams<float>& p, Eigen::Index d_in) {
    p.Wz.resize(d_in, h);
    p.Wr.resize(d_in, h);
    p.Wh.resize(d_in, h);
    p.Uz.resize(h, h);
    p.Ur.resize(h, h);
    p.Uh.resize(h, h);
    p.bz.resize(h);
    p.br.resize(h);
    p.bh.resize(h);
  };
  shape_gru(model.gru1, d);
  shape_gru(model.gru2, h);
  for (Task t : tasks) {
    nn::DenseParams<float> head;
    head.W.resize(h, task_class_count(t));
    head.b.resize(task_class_count(t));
    model.heads.push_back(std::move(head));
  }

  struct MutTensor {
    std::string name;
    float* data;
    Eigen::Index rows, cols;
  };
  std::vector<MutTensor> mut;
  {
    auto refs = tensor_list(model);
    mut.reserve(refs.size());
    // tensor_list hands out const pointers into `model`, which we own and
    // are about to fill.
    for (auto& r : refs)
      mut.push_back({r.name, const_cast<float*>(r.data), r.rows, r.cols});
  }

  const json& manifest = require(header, "tensors");
  if (manifest.size() != mut.size())
    throw FormatError("checkpoint tensor manifest mismatch");
  for (std::size_t i = 0; i < mut.size(); ++i) {
    const json& entry = manifest[i];
    if (require(entry, "name").get<std::string>() != mut[i].name ||
        require(entry, "rows").get<Eigen::Index>() != mut[i].rows ||
        require(entry, "cols").get<Eigen::Index>() != mut[i].cols)
      throw FormatError("checkpoint tensor manifest mismatch");
    const std::size_t bytes = static_cast<std::size_t>(mut[i].rows) *
                              static_cast<std::size_t>(mut[i].cols) *
                              sizeof(float);
    if (offset + bytes > body.size()) throw FormatError("truncated checkpoint");
    std::memcpy(mut[i].data, data.data() + offset, bytes);
    offset += bytes;
  }
  if (offset != body.size())
    throw FormatError("checkpoint has trailing bytes after tensors");

  if (expect && model.config.structure != *expect)
    throw InvalidArgument(std::string("checkpoint structure mismatch: expected ") +
                          std::string(structure_name(*expect)) + ", found " +
                          std::string(structure_name(model.config.structure)));
  return model;
}

MtlGruModel load_checkpoint_file(const std::string& path,
                                 std::optional<Structure> expect) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  return load_checkpoint(in, expect);
}

}  // namespace sigrec::model
