#pragma once

// Sequence classifier assembly: a two-layer GRU encoder over embedded
// instruction words feeding per-task dense-softmax heads. The multi-task
// form owns one shared encoder and four heads (parameter count, first three
// parameter types); the single-task form carries exactly one head. Also
// defines training (mini-batch Adam with dropout), inference, and a
// self-contained binary checkpoint format.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sigrec/embed.hpp"
#include "sigrec/ingest.hpp"
#include "sigrec/labels.hpp"
#include "sigrec/linalg.hpp"
#include "sigrec/nn.hpp"
#include "sigrec/tokenize.hpp"

namespace sigrec::model {

enum class Structure { kMtl, kStl };
enum class Task { kPc, kPt1, kPt2, kPt3 };

std::string_view structure_name(Structure s);
std::optional<Structure> structure_from_name(std::string_view name);
std::string_view task_name(Task t);
std::optional<Task> task_from_name(std::string_view name);

/// Number of output classes for a task head.
int task_class_count(Task t);

/// The class index a labeled record assigns to a task.
int task_label(const SignatureLabel& label, Task t);

struct ModelConfig {
  Structure structure = Structure::kMtl;
  std::optional<Task> task;  // single-task form only
  SliceSpec slice{};
  int embed_dim = 128;
  int hidden = 256;
  int shared_layers = 2;
  double dropout = 0.2;
  bool train_embeddings = false;

  bool operator==(const ModelConfig&) const = default;
};

/// Throws InvalidArgument unless the configuration is well-formed: the
/// multi-task form has no task and the single-task form has one, the
/// encoder depth is exactly two, dims are positive, dropout is in [0, 1).
void validate_config(const ModelConfig& config);

/// Head tasks implied by the configuration: all four for the multi-task
/// form, the selected one for the single-task form.
std::vector<Task> config_tasks(const ModelConfig& config);

struct MtlGruModel {
  ModelConfig config;
  Vocabulary vocab;
  MatXf embedding;  // embed_dim x |vocab|, one column per token id
  nn::GruParams<float> gru1;
  nn::GruParams<float> gru2;
  std::vector<nn::DenseParams<float>> heads;  // parallel to config_tasks()
};

/// Assembles a model with Glorot-initialized encoder/head weights (seeded)
/// and the given token embedding table (embed_dim x vocab size).
/// Throws InvalidArgument when the embedding shape disagrees with the
/// configuration or vocabulary.
MtlGruModel build_model(const ModelConfig& config,
                        const Vocabulary& vocab,
                        const MatXf& embedding, std::uint64_t seed);

/// Maps loaded embedding vectors onto vocabulary ids by token. Every
/// vocabulary token must be present.
MatXf embedding_matrix_for_vocab(const Vocabulary& vocab,
                                 const LoadedEmbeddings& loaded);

/// Exact count of trainable scalars: encoder + heads, plus the embedding
/// table only when it is trainable.
std::size_t count_parameters(const MtlGruModel& model);

struct TrainConfig {
  int epochs = 100;
  int batch_size = 128;
  std::uint64_t seed = 1;
  nn::AdamConfig adam{};              // lr 1e-4 by default
  std::optional<double> clip_norm;    // global-norm gradient clip, off by default
};

struct EpochStats {
  std::vector<double> head_loss;  // mean loss per head, parallel to tasks
  double seconds = 0.0;           // wall time of the epoch
};

struct TrainHistory {
  std::vector<Task> tasks;
  std::vector<EpochStats> epochs;
};

/// Mini-batch training: seeded shuffle each epoch, dropout masks on both
/// encoder output sequences, Adam on every trainable tensor, loss = sum of
/// per-head mean cross-entropies. Mutates the model in place and returns
/// the per-epoch history. Throws InvalidArgument on an empty training set.
TrainHistory train(MtlGruModel& model,
                   const std::vector<DatasetRecord>& records,
                   const TrainConfig& config);

/// Dropout-free dataset loss: the sum over heads of each head's mean
/// cross-entropy. Zeroed heads therefore give exactly sum(ln K_head).
double compute_loss(const MtlGruModel& model,
                    const std::vector<DatasetRecord>& records);

/// Encodes sanitized instructions with the model's slice spec and
/// vocabulary.
TokenSequence encode_for_model(
    const MtlGruModel& model, const std::vector<std::string>& instructions);

/// Batched dropout-free forward pass; returns one K x N probability matrix
/// per head (columns follow input order).
std::vector<MatXf> forward_probs(const MtlGruModel& model,
                                 const std::vector<TokenSequence>& batch);

struct HeadPrediction {
  Task task;
  int label = 0;   // argmax class, lowest index on ties
  VecXf probs;     // full distribution, sums to 1
};

struct Prediction {
  std::vector<HeadPrediction> heads;
};

/// Single-function inference (no dropout). Throws InvalidArgument on an
/// empty instruction list.
Prediction predict(const MtlGruModel& model,
                   const std::vector<std::string>& sanitized_instructions);

inline constexpr char kCheckpointMagic[4] = {'N', 'M', 'B', 'S'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

/// Self-contained checkpoint: magic, format version, a length-prefixed
/// JSON header (configuration, head layout, vocabulary and its digest,
/// tensor manifest, tool identity), little-endian float32 tensors in the
/// manifest order, and a CRC-32 of all preceding bytes. Writing is
/// deterministic: the same model always produces the same bytes.
void save_checkpoint(const MtlGruModel& model, std::ostream& out);
void save_checkpoint_file(const MtlGruModel& model, const std::string& path);

/// Loads and fully validates a checkpoint (magic, version, checksum,
/// shapes). When `expect` is set, a checkpoint of any other structure is
/// rejected with InvalidArgument.
MtlGruModel load_checkpoint(std::istream& in,
                            std::optional<Structure> expect = std::nullopt);
MtlGruModel load_checkpoint_file(const std::string& path,
                                 std::optional<Structure> expect = std::nullopt);

}  // namespace sigrec::model
