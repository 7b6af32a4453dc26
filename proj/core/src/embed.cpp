#include "sigrec/embed.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "sigrec/common.hpp"

namespace sigrec {
namespace {

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  T e = std::exp(x);
  return e / (T(1) + e);
}

// log(1 + e^x) without overflow; -log sigma(s) = softplus(-s).
template <typename T>
T softplus(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <typename T>
VecX<T> context_mean(std::span<const std::int32_t> context,
                     const MatX<T>& input) {
  if (context.empty()) throw InvalidArgument("empty CBOW context");
  VecX<T> h = VecX<T>::Zero(input.rows());
  for (auto id : context) h += input.col(id);
  h /= static_cast<T>(context.size());
  return h;
}

}  // namespace

std::vector<double> negative_sampling_distribution(
    const std::vector<std::uint64_t>& counts) {
  if (counts.empty()) throw InvalidArgument("empty count table");
  std::vector<double> probs(counts.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (i == static_cast<std::size_t>(Vocabulary::kPadId)) continue;
    probs[i] = std::pow(static_cast<double>(counts[i]), 0.75);
    total += probs[i];
  }
  if (total <= 0.0)
    throw InvalidArgument("no samplable tokens (all counts zero)");
  for (auto& p : probs) p /= total;
  return probs;
}

NegativeSampler::NegativeSampler(const std::vector<double>& probabilities) {
  cumulative_.reserve(probabilities.size());
  double acc = 0.0;
  for (double p : probabilities) {
    acc += p;
    cumulative_.push_back(acc);
  }
  if (cumulative_.empty() || acc <= 0.0)
    throw InvalidArgument("empty sampling distribution");
  cumulative_.back() = 1.0;  // absorb rounding
}

std::int32_t NegativeSampler::draw(Rng& rng) const {
  double u = rng.uniform();
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  if (it == cumulative_.end()) --it;
  return static_cast<std::int32_t>(it - cumulative_.begin());
}

std::vector<std::int32_t> NegativeSampler::draw_avoiding(Rng& rng,
                                                         std::int32_t center,
                                                         int k) const {
  std::vector<std::int32_t> out;
  out.reserve(static_cast<std::size_t>(std::max(k, 0)));
  for (int i = 0; i < k; ++i) {
    std::int32_t x = draw(rng);
    for (int retry = 0; x == center && retry < 8; ++retry) x = draw(rng);
    if (x == center) continue;  // persistent collision: drop this negative
    out.push_back(x);
  }
  return out;
}

template <typename T>
T cbow_loss(std::int32_t center, std::span<const std::int32_t> context,
            std::span<const std::int32_t> negatives, const MatX<T>& input,
            const MatX<T>& output) {
  VecX<T> h = context_mean(context, input);
  T loss = softplus(-output.col(center).dot(h));
  for (auto neg : negatives) loss += softplus(output.col(neg).dot(h));
  return loss;
}

template <typename T>
T cbow_step(std::int32_t center, std::span<const std::int32_t> context,
            std::span<const std::int32_t> negatives, MatX<T>& input,
            MatX<T>& output, T lr) {
  VecX<T> h = context_mean(context, input);

  // Scores and dL/dscore for the center (label 1) and negatives (label 0),
  // all against the pre-step tables.
  T loss = T(0);
  VecX<T> grad_h = VecX<T>::Zero(input.rows());
  std::vector<std::pair<std::int32_t, T>> out_grads;
  out_grads.reserve(negatives.size() + 1);

  auto visit = [&](std::int32_t id, T label) {
    T s = output.col(id).dot(h);
    loss += label > T(0.5) ? softplus(-s) : softplus(s);
    T g = stable_sigmoid(s) - label;
    grad_h += g * output.col(id);
    out_grads.emplace_back(id, g);
  };
  visit(center, T(1));
  for (auto neg : negatives) visit(neg, T(0));

  for (auto [id, g] : out_grads) output.col(id) -= lr * g * h;
  T coeff = lr / static_cast<T>(context.size());
  for (auto id : context) input.col(id) -= coeff * grad_h;
  return loss;
}

template float cbow_loss<float>(std::int32_t, std::span<const std::int32_t>,
                                std::span<const std::int32_t>, const MatXf&,
                                const MatXf&);
template double cbow_loss<double>(std::int32_t, std::span<const std::int32_t>,
                                  std::span<const std::int32_t>, const MatXd&,
                                  const MatXd&);
template float cbow_step<float>(std::int32_t, std::span<const std::int32_t>,
                                std::span<const std::int32_t>, MatXf&, MatXf&,
                                float);
template double cbow_step<double>(std::int32_t, std::span<const std::int32_t>,
                                  std::span<const std::int32_t>, MatXd&, MatXd&,
                                  double);

CbowResult train_cbow(const std::vector<std::vector<std::int32_t>>& corpus,
                      const Vocabulary& vocab, const CbowConfig& config) {
  if (config.dim < 1) throw InvalidArgument("embedding dim must be >= 1");
  if (config.window < 1) throw InvalidArgument("window must be >= 1");
  if (config.negatives < 1) throw InvalidArgument("negatives must be >= 1");
  if (config.epochs < 1) throw InvalidArgument("epochs must be >= 1");

  const auto vocab_size = static_cast<Eigen::Index>(vocab.size());
  std::vector<std::uint64_t> counts(vocab.size(), 0);
  std::uint64_t total_tokens = 0;
  for (const auto& seq : corpus)
    for (auto id : seq) {
      if (id < 0 || id >= vocab_size)
        throw InvalidArgument("corpus id outside vocabulary");
      ++counts[static_cast<std::size_t>(id)];
      ++total_tokens;
    }
  if (total_tokens < 2)
    throw InvalidArgument("corpus must hold at least 2 tokens");

  NegativeSampler sampler(negative_sampling_distribution(counts));

  // Frequent-token keep probabilities (word2vec subsampling), 1 = keep.
  std::vector<double> keep(vocab.size(), 1.0);
  if (config.subsample_threshold > 0.0) {
    double t = config.subsample_threshold;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      if (counts[i] == 0) continue;
      double f = static_cast<double>(counts[i]) / static_cast<double>(total_tokens);
      keep[i] = std::min(1.0, (std::sqrt(f / t) + 1.0) * t / f);
    }
  }

  Rng init_rng(Rng::derive(config.seed, 0));
  Rng train_rng(Rng::derive(config.seed, 1));

  const auto d = static_cast<Eigen::Index>(config.dim);
  EmbeddingMatrix emb;
  emb.input.resize(d, vocab_size);
  double scale = 0.5 / static_cast<double>(config.dim);
  for (Eigen::Index c = 0; c < vocab_size; ++c)
    for (Eigen::Index r = 0; r < d; ++r)
      emb.input(r, c) = static_cast<float>(init_rng.uniform(-scale, scale));
  emb.output = MatXf::Zero(d, vocab_size);

  const double lr0 = config.learning_rate;
  const double lr_floor = lr0 * 1e-4;
  const auto total_visits =
      static_cast<double>(total_tokens) * static_cast<double>(config.epochs);
  std::uint64_t processed = 0;

  CbowResult result;
  result.epoch_mean_loss.reserve(static_cast<std::size_t>(config.epochs));
  std::vector<std::int32_t> kept;
  std::vector<std::int32_t> context;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double epoch_loss = 0.0;
    std::uint64_t steps = 0;
    for (const auto& seq : corpus) {
      kept.clear();
      for (auto id : seq) {
        ++processed;
        if (keep[static_cast<std::size_t>(id)] < 1.0 &&
            train_rng.uniform() > keep[static_cast<std::size_t>(id)])
          continue;
        kept.push_back(id);
      }
      const auto n = static_cast<std::ptrdiff_t>(kept.size());
      for (std::ptrdiff_t i = 0; i < n; ++i) {
        if (kept[static_cast<std::size_t>(i)] == Vocabulary::kPadId) continue;
        context.clear();
        for (std::ptrdiff_t o = i - config.window; o <= i + config.window; ++o) {
          if (o == i || o < 0 || o >= n) continue;
          context.push_back(kept[static_cast<std::size_t>(o)]);
        }
        if (context.empty()) continue;
        std::int32_t center = kept[static_cast<std::size_t>(i)];
        auto negatives = sampler.draw_avoiding(train_rng, center, config.negatives);
        double lr = std::max(
            lr0 * (1.0 - static_cast<double>(processed) / (total_visits + 1.0)),
            lr_floor);
        epoch_loss += cbow_step<float>(center, context, negatives, emb.input,
                                       emb.output, static_cast<float>(lr));
        ++steps;
      }
    }
    result.epoch_mean_loss.push_back(steps ? epoch_loss / static_cast<double>(steps)
                                           : 0.0);
  }
  result.embedding = std::move(emb);
  return result;
}

VecXf lookup(const Vocabulary& vocab, const EmbeddingMatrix& embedding,
             std::string_view token) {
  if (static_cast<std::size_t>(embedding.vocab_size()) != vocab.size())
    throw InvalidArgument("embedding/vocabulary size mismatch");
  return embedding.input.col(vocab.id(token));
}

double cosine_similarity(const VecXf& a, const VecXf& b) {
  if (a.size() != b.size()) throw InvalidArgument("dimension mismatch");
  double na = a.cast<double>().norm();
  double nb = b.cast<double>().norm();
  if (na == 0.0 || nb == 0.0)
    throw InvalidArgument("cosine similarity of a zero vector");
  return a.cast<double>().dot(b.cast<double>()) / (na * nb);
}

void write_embeddings(std::ostream& out, const Vocabulary& vocab,
                      const EmbeddingMatrix& embedding) {
  if (static_cast<std::size_t>(embedding.vocab_size()) != vocab.size())
    throw InvalidArgument("embedding/vocabulary size mismatch");
  out << embedding.vocab_size() << ' ' << embedding.dim() << '\n';
  char buf[32];
  for (Eigen::Index c = 0; c < embedding.vocab_size(); ++c) {
    out << vocab.token(static_cast<std::int32_t>(c));
    for (Eigen::Index r = 0; r < embedding.dim(); ++r) {
      // 9 significant digits: binary32 round-trips exactly.
      std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(embedding.input(r, c)));
      out << ' ' << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing embeddings");
}

void write_embeddings_file(const std::string& path, const Vocabulary& vocab,
                           const EmbeddingMatrix& embedding) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for write: " + path);
  write_embeddings(out, vocab, embedding);
}

LoadedEmbeddings read_embeddings(std::istream& in) {
  std::string header;
  if (!std::getline(in, header))
    throw FormatError("empty embedding file");
  std::istringstream hs(header);
  long long v = 0, d = 0;
  if (!(hs >> v >> d) || v < 1 || d < 1)
    throw FormatError("bad embedding header (want \"|V| d\")");

  LoadedEmbeddings loaded;
  loaded.tokens.reserve(static_cast<std::size_t>(v));
  loaded.vectors.resize(d, v);
  std::string line;
  for (long long i = 0; i < v; ++i) {
    if (!std::getline(in, line))
      throw FormatError("embedding file truncated at token " + std::to_string(i));
    std::istringstream ls(line);
    std::string token;
    if (!(ls >> token))
      throw ParseError("missing token", static_cast<std::size_t>(i + 2));
    for (long long r = 0; r < d; ++r) {
      float x = 0;
      if (!(ls >> x))
        throw ParseError("missing vector component",
                         static_cast<std::size_t>(i + 2));
      loaded.vectors(r, i) = x;
    }
    float extra;
    if (ls >> extra)
      throw ParseError("too many vector components",
                       static_cast<std::size_t>(i + 2));
    loaded.tokens.push_back(std::move(token));
  }
  return loaded;
}

LoadedEmbeddings read_embeddings_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open embeddings: " + path);
  return read_embeddings(in);
}

}  // namespace sigrec
