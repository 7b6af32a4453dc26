#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "sigrec/linalg.hpp"
#include "sigrec/rng.hpp"
#include "sigrec/tokenize.hpp"

namespace sigrec {

/// Word-vector tables. Columns are tokens (column i = vocabulary id i), so
/// one token's vector is contiguous; conceptually each table is |V| rows of
/// d-dimensional vectors. `input` is the embedding served to consumers;
/// `output` holds the context-prediction weights used only during training.
template <typename T>
struct EmbeddingMatrixT {
  MatX<T> input;
  MatX<T> output;

  Eigen::Index dim() const { return input.rows(); }
  Eigen::Index vocab_size() const { return input.cols(); }
};

using EmbeddingMatrix = EmbeddingMatrixT<float>;

struct CbowConfig {
  int dim = 128;
  int window = 5;     // context radius in tokens
  int negatives = 5;  // negative samples per center
  int epochs = 5;
  double learning_rate = 0.025;  // linearly decayed, floored at 1e-4x
  double subsample_threshold = 0.0;  // 0 disables frequent-token dropout
  std::uint64_t seed = 1;
};

/// Unigram^0.75 sampling table over token ids. PAD is never sampled
/// (probability 0). Throws InvalidArgument when every samplable count is
/// zero.
std::vector<double> negative_sampling_distribution(
    const std::vector<std::uint64_t>& counts);

/// Draws from a negative_sampling_distribution table by inverse CDF.
class NegativeSampler {
 public:
  explicit NegativeSampler(const std::vector<double>& probabilities);

  std::int32_t draw(Rng& rng) const;

  /// Draws `k` negatives, resampling up to 8 times when a draw collides
  /// with `center`; a still-colliding draw is dropped, so the result may be
  /// shorter than k.
  std::vector<std::int32_t> draw_avoiding(Rng& rng, std::int32_t center,
                                          int k) const;

 private:
  std::vector<double> cumulative_;
};

/// Loss of one CBOW prediction without touching the matrices:
/// -log sigma(u_center . h) - sum_neg log sigma(-u_neg . h), where h is the
/// mean input vector of the context.
template <typename T>
T cbow_loss(std::int32_t center, std::span<const std::int32_t> context,
            std::span<const std::int32_t> negatives, const MatX<T>& input,
            const MatX<T>& output);

/// One exact stochastic-gradient step on that loss; updates the context
/// rows of `input` and the center/negative rows of `output` in place and
/// returns the pre-step loss. All updates are computed from the pre-step
/// values, so with lr = 1 the gradient is recoverable as old - new.
template <typename T>
T cbow_step(std::int32_t center, std::span<const std::int32_t> context,
            std::span<const std::int32_t> negatives, MatX<T>& input,
            MatX<T>& output, T lr);

struct CbowResult {
  EmbeddingMatrix embedding;
  std::vector<double> epoch_mean_loss;  // one entry per epoch
};

/// Trains embeddings over per-function id sequences (windows never cross a
/// sequence boundary). PAD tokens are never centers but do appear as
/// context. Deterministic under config.seed. Throws InvalidArgument when
/// the corpus holds fewer than 2 tokens.
CbowResult train_cbow(const std::vector<std::vector<std::int32_t>>& corpus,
                      const Vocabulary& vocab, const CbowConfig& config);

/// Input vector for a token; unknown tokens resolve to the UNK row.
VecXf lookup(const Vocabulary& vocab, const EmbeddingMatrix& embedding,
             std::string_view token);

/// Cosine of the angle between two vectors; throws InvalidArgument on a
/// zero vector.
double cosine_similarity(const VecXf& a, const VecXf& b);

/// Embedding file: header line "|V| d", then per token (in id order) the
/// token and its d input-vector components, space-separated. Floats are
/// printed with enough digits to reload bit-exactly.
void write_embeddings(std::ostream& out, const Vocabulary& vocab,
                      const EmbeddingMatrix& embedding);
void write_embeddings_file(const std::string& path, const Vocabulary& vocab,
                           const EmbeddingMatrix& embedding);

/// Parsed embedding file: tokens in file order plus the input-vector table
/// (column i belongs to tokens[i]).
struct LoadedEmbeddings {
  std::vector<std::string> tokens;
  MatXf vectors;
};

LoadedEmbeddings read_embeddings(std::istream& in);
LoadedEmbeddings read_embeddings_file(const std::string& path);

}  // namespace sigrec
