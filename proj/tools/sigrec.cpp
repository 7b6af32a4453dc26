// sigrec command-line front end: one subcommand per pipeline stage
// (ingest, embed, train, predict, eval, ablate), deterministic under fixed
// seeds, with a resolved-configuration file persisted beside every run's
// outputs. Exit codes: 0 success, 1 usage error, 2 input error, 3 internal
// error.

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/program_options.hpp>
#include <nlohmann/json.hpp>

#include <Eigen/Core>

#include "sigrec/common.hpp"
#include "sigrec/embed.hpp"
#include "sigrec/eval.hpp"
#include "sigrec/ingest.hpp"
#include "sigrec/labels.hpp"
#include "sigrec/model.hpp"
#include "sigrec/tokenize.hpp"

namespace po = boost::program_options;
namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace sigrec;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitInput = 2;
constexpr int kExitInternal = 3;

constexpr const char* kOutDirEnvVar = "SIGREC_OUT_DIR";

/// Raised for bad flag combinations detected after parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

struct GlobalOptions {
  std::uint64_t seed = 1;
  int threads = 1;
  int precision = 32;
  std::string out_dir;
};

void add_global_options(po::options_description& desc) {
  const char* env = std::getenv(kOutDirEnvVar);
  const std::string default_out_dir = env != nullptr && *env != '\0' ? env : ".";
  desc.add_options()
      ("help,h", "show this help")
      ("seed", po::value<std::uint64_t>()->default_value(1),
       "seed for every random choice this run makes")
      ("threads", po::value<int>()->default_value(1),
       "worker threads for the linear-algebra backend")
      ("precision", po::value<int>()->default_value(32),
       "floating-point width of produced artifacts (32 is the only "
       "implemented width)")
      ("out-dir", po::value<std::string>()->default_value(default_out_dir),
       "directory for outputs given as relative paths (default from "
       "$SIGREC_OUT_DIR when set)");
}

GlobalOptions read_global_options(const po::variables_map& vm) {
  GlobalOptions g;
  g.seed = vm["seed"].as<std::uint64_t>();
  g.threads = vm["threads"].as<int>();
  g.precision = vm["precision"].as<int>();
  g.out_dir = vm["out-dir"].as<std::string>();
  if (g.threads < 1) throw UsageError("--threads must be at least 1");
  if (g.precision != 32)
    throw UsageError("unsupported --precision " + std::to_string(g.precision) +
                     " (artifacts are 32-bit; 64-bit numerics exist only in "
                     "the library's verification layer)");
  Eigen::setNbThreads(g.threads);
  return g;
}

/// Output path resolution: absolute paths pass through, relative paths land
/// in the run's output directory.
std::string resolve_out(const GlobalOptions& g, const std::string& path) {
  fs::path p(path);
  if (p.is_absolute()) return p.string();
  return (fs::path(g.out_dir) / p).string();
}

/// Tracks files written by the current run so a failure removes partial
/// outputs. Call commit() once everything is fully written.
class OutputGuard {
 public:
  ~OutputGuard() {
    if (committed_) return;
    for (const auto& p : paths_) {
      std::error_code ec;
      fs::remove(p, ec);  // best effort; never throws during unwind
    }
  }

  void track(const std::string& path) { paths_.push_back(path); }
  void commit() { committed_ = true; }

 private:
  std::vector<std::string> paths_;
  bool committed_ = false;
};

void ensure_parent_dir(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

/// Persists the effective configuration of this run beside its outputs.
void write_resolved_config(const GlobalOptions& g, const std::string& command,
                           json options, const std::vector<std::string>& outputs,
                           OutputGuard& guard) {
  json doc;
  doc["command"] = command;
  doc["options"] = std::move(options);
  doc["outputs"] = outputs;
  doc["out_dir"] = g.out_dir;
  doc["precision"] = g.precision;
  doc["seed"] = g.seed;
  doc["threads"] = g.threads;
  doc["tool"] = {{"name", kToolName}, {"version", kToolVersion}};

  const std::string path = resolve_out(g, command + ".config.json");
  ensure_parent_dir(path);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write resolved config: " + path);
  guard.track(path);
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("failed writing resolved config: " + path);
}

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

SliceLocation location_from_name(const std::string& name) {
  if (name == "head") return SliceLocation::kHead;
  if (name == "tail") return SliceLocation::kTail;
  throw UsageError("invalid --location '" + name + "' (expected head or tail)");
}

const char* location_name(SliceLocation loc) {
  return loc == SliceLocation::kHead ? "head" : "tail";
}

/// Vocabulary from a loaded embedding file: tokens keep file order (which
/// is id order as written), counts are unknown and recorded as zero.
Vocabulary vocab_from_embeddings(const LoadedEmbeddings& loaded) {
  if (loaded.tokens.size() < 2 ||
      loaded.tokens[0] != Vocabulary::pad_token() ||
      loaded.tokens[1] != Vocabulary::unk_token())
    throw FormatError(
        "embedding file does not start with the reserved PAD/UNK rows");
  Vocabulary vocab;
  for (std::size_t i = 2; i < loaded.tokens.size(); ++i)
    vocab.add(loaded.tokens[i], 0);
  return vocab;
}

std::ostream& open_report_stream(const std::optional<std::string>& out_path,
                                 std::ofstream& file, const GlobalOptions& g,
                                 OutputGuard& guard) {
  if (!out_path) return std::cout;
  const std::string resolved = resolve_out(g, *out_path);
  ensure_parent_dir(resolved);
  file.open(resolved);
  if (!file) throw IoError("cannot write report: " + resolved);
  guard.track(resolved);
  return file;
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

int cmd_ingest(const std::vector<std::string>& args) {
  po::options_description desc(
      "sigrec ingest: parse a directory of disassembly listings, sanitize "
      "and deduplicate the functions, attach ground-truth labels, and write "
      "the labeled dataset plus a seeded train/test split.\n\nOptions");
  add_global_options(desc);
  desc.add_options()
      ("asm-dir", po::value<std::string>()->required(),
       "directory of objdump -d listings (every regular file is parsed; "
       "the file stem names the binary)")
      ("labels", po::value<std::string>()->required(),
       "ground-truth sidecar (JSONL: binary, function, pc, pts)")
      ("out", po::value<std::string>()->default_value("dataset.jsonl"),
       "dataset output; the train/test split lands beside it as "
       "<stem>.train.jsonl and <stem>.test.jsonl")
      ("split-ratio", po::value<double>()->default_value(0.8),
       "fraction of records assigned to the training split");

  po::variables_map vm;
  po::store(po::command_line_parser(args).options(desc).run(), vm);
  if (vm.count("help")) {
    std::cout << desc << '\n';
    return kExitOk;
  }
  po::notify(vm);
  const GlobalOptions g = read_global_options(vm);

  const std::string asm_dir = vm["asm-dir"].as<std::string>();
  const std::string labels_path = vm["labels"].as<std::string>();
  const double ratio = vm["split-ratio"].as<double>();
  if (ratio <= 0.0 || ratio >= 1.0)
    throw UsageError("--split-ratio must be strictly between 0 and 1");

  const std::string out_path = resolve_out(g, vm["out"].as<std::string>());
  std::string stem = out_path;
  if (stem.size() > 6 && stem.ends_with(".jsonl"))
    stem.resize(stem.size() - 6);
  const std::string train_path = stem + ".train.jsonl";
  const std::string test_path = stem + ".test.jsonl";

  if (!fs::is_directory(asm_dir))
    throw IoError("not a directory: " + asm_dir);
  std::vector<std::string> listing_files;
  for (const auto& entry : fs::directory_iterator(asm_dir))
    if (entry.is_regular_file()) listing_files.push_back(entry.path().string());
  std::sort(listing_files.begin(), listing_files.end());
  if (listing_files.empty())
    throw IoError("no listing files in: " + asm_dir);

  std::vector<RawFunction> functions;
  ParseStats parse_stats;
  for (const auto& file : listing_files) {
    ParsedListing listing = parse_listing_file(file);
    parse_stats.functions += listing.stats.functions;
    parse_stats.empty_functions_dropped += listing.stats.empty_functions_dropped;
    parse_stats.instruction_lines += listing.stats.instruction_lines;
    parse_stats.skipped_lines += listing.stats.skipped_lines;
    std::move(listing.functions.begin(), listing.functions.end(),
              std::back_inserter(functions));
  }

  const auto labels = read_labels_jsonl_file(labels_path);
  IngestStats stats;
  stats.parse = parse_stats;
  const auto records = build_dataset(functions, labels, stats);
  if (records.empty())
    throw InvalidArgument("no labeled functions survived ingestion");
  const auto split = split_dataset(records, ratio, g.seed);

  OutputGuard guard;
  ensure_parent_dir(out_path);
  write_dataset_jsonl_file(out_path, records);
  guard.track(out_path);
  write_dataset_jsonl_file(train_path, split.train);
  guard.track(train_path);
  write_dataset_jsonl_file(test_path, split.test);
  guard.track(test_path);

  write_resolved_config(
      g, "ingest",
      json{{"asm_dir", asm_dir},
           {"labels", labels_path},
           {"listing_files", listing_files.size()},
           {"out", out_path},
           {"split_ratio", ratio}},
      {out_path, train_path, test_path}, guard);
  guard.commit();

  std::cout << "parsed functions: " << stats.parse.functions << " ("
            << stats.parse.instruction_lines << " instruction lines, "
            << stats.parse.skipped_lines << " lines skipped, "
            << stats.parse.empty_functions_dropped
            << " empty functions dropped)\n"
            << "duplicates removed: " << stats.duplicates_removed << '\n'
            << "unlabeled functions dropped: " << stats.unlabeled_dropped
            << " (labels without a function: " << stats.unused_labels << ")\n"
            << "labeled records written: " << stats.records << '\n'
            << "train/test split: " << split.train.size() << "/"
            << split.test.size() << " (ratio " << ratio << ", seed " << g.seed
            << ")\n"
            << "dataset: " << out_path << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// embed
// ---------------------------------------------------------------------------

int cmd_embed(const std::vector<std::string>& args) {
  po::options_description desc(
      "sigrec embed: build the instruction-word vocabulary from a training "
      "dataset and train context-prediction word vectors over it.\n\nOptions");
  add_global_options(desc);
  desc.add_options()
      ("dataset", po::value<std::string>()->required(),
       "training-split dataset (JSONL)")
      ("dim", po::value<int>()->default_value(128), "embedding width")
      ("window", po::value<int>()->default_value(5), "context radius")
      ("negatives", po::value<int>()->default_value(5),
       "negative samples per center token")
      ("epochs", po::value<int>()->default_value(5), "training epochs")
      ("min-count", po::value<std::uint64_t>()->default_value(5),
       "tokens seen fewer times than this map to the unknown word")
      ("out", po::value<std::string>()->default_value("embeddings.txt"),
       "embedding table output")
      ("out-vocab", po::value<std::string>()->default_value("vocab.tsv"),
       "vocabulary output");

  po::variables_map vm;
  po::store(po::command_line_parser(args).options(desc).run(), vm);
  if (vm.count("help")) {
    std::cout << desc << '\n';
    return kExitOk;
  }
  po::notify(vm);
  const GlobalOptions g = read_global_options(vm);

  const std::string dataset_path = vm["dataset"].as<std::string>();
  const auto records = read_dataset_jsonl_file(dataset_path);
  if (records.empty()) throw InvalidArgument("dataset is empty: " + dataset_path);

  std::vector<std::vector<std::string>> word_sequences;
  word_sequences.reserve(records.size());
  for (const auto& rec : records)
    word_sequences.push_back(instruction_words(rec.instructions));
  const Vocabulary vocab =
      build_vocab(word_sequences, vm["min-count"].as<std::uint64_t>());

  std::vector<std::vector<std::int32_t>> corpus;
  corpus.reserve(records.size());
  for (const auto& rec : records)
    corpus.push_back(encode_words(rec.instructions, vocab));

  CbowConfig config;
  config.dim = vm["dim"].as<int>();
  config.window = vm["window"].as<int>();
  config.negatives = vm["negatives"].as<int>();
  config.epochs = vm["epochs"].as<int>();
  config.seed = g.seed;
  const CbowResult result = train_cbow(corpus, vocab, config);

  const std::string out_path = resolve_out(g, vm["out"].as<std::string>());
  const std::string vocab_path = resolve_out(g, vm["out-vocab"].as<std::string>());
  OutputGuard guard;
  ensure_parent_dir(out_path);
  write_embeddings_file(out_path, vocab, result.embedding);
  guard.track(out_path);
  ensure_parent_dir(vocab_path);
  write_vocab_file(vocab_path, vocab);
  guard.track(vocab_path);

  write_resolved_config(
      g, "embed",
      json{{"dataset", dataset_path},
           {"dim", config.dim},
           {"epochs", config.epochs},
           {"min_count", vm["min-count"].as<std::uint64_t>()},
           {"negatives", config.negatives},
           {"out", out_path},
           {"out_vocab", vocab_path},
           {"window", config.window}},
      {out_path, vocab_path}, guard);
  guard.commit();

  std::cout << "vocabulary: " << vocab.size() << " tokens -> " << vocab_path
            << '\n';
  for (std::size_t e = 0; e < result.epoch_mean_loss.size(); ++e)
    std::cout << "epoch " << e + 1 << "/" << result.epoch_mean_loss.size()
              << " mean loss " << result.epoch_mean_loss[e] << '\n';
  std::cout << "embeddings: " << config.dim << "-d -> " << out_path << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const std::vector<std::string>& args) {
  po::options_description desc(
      "sigrec train: train a signature-recovery model on a labeled dataset "
      "and save a self-contained checkpoint.\n\nOptions");
  add_global_options(desc);
  desc.add_options()
      ("dataset", po::value<std::string>()->required(),
       "training-split dataset (JSONL)")
      ("embeddings", po::value<std::string>()->required(),
       "embedding table from 'sigrec embed'")
      ("vocab", po::value<std::string>(),
       "vocabulary file; when omitted, tokens are taken from the embedding "
       "file (with unknown corpus counts)")
      ("structure", po::value<std::string>()->default_value("mtl"),
       "mtl (one shared encoder, all four heads) or stl (one task)")
      ("task", po::value<std::string>(),
       "single-task structure only: pc, pt1, pt2 or pt3")
      ("size", po::value<std::size_t>()->default_value(40),
       "instruction window length")
      ("location", po::value<std::string>()->default_value("head"),
       "window position: head or tail")
      ("hidden", po::value<int>()->default_value(256),
       "encoder state width")
      ("dropout", po::value<double>()->default_value(0.2),
       "dropout rate on the encoder outputs")
      ("batch", po::value<int>()->default_value(128), "mini-batch size")
      ("epochs", po::value<int>()->default_value(100), "training epochs")
      ("lr", po::value<double>()->default_value(1e-4),
       "optimizer learning rate")
      ("clip-norm", po::value<double>(),
       "optional global gradient-norm clip")
      ("train-embeddings", po::bool_switch(),
       "update the embedding table during training (frozen by default)")
      ("out", po::value<std::string>()->default_value("model.ckpt"),
       "checkpoint output");

  po::variables_map vm;
  po::store(po::command_line_parser(args).options(desc).run(), vm);
  if (vm.count("help")) {
    std::cout << desc << '\n';
    return kExitOk;
  }
  po::notify(vm);
  const GlobalOptions g = read_global_options(vm);

  const auto structure = model::structure_from_name(vm["structure"].as<std::string>());
  if (!structure)
    throw UsageError("invalid --structure '" + vm["structure"].as<std::string>() +
                     "' (expected mtl or stl)");
  std::optional<model::Task> task;
  if (vm.count("task")) {
    task = model::task_from_name(vm["task"].as<std::string>());
    if (!task)
      throw UsageError("invalid --task '" + vm["task"].as<std::string>() +
                       "' (expected pc, pt1, pt2 or pt3)");
  }
  if (*structure == model::Structure::kStl && !task)
    throw UsageError("--structure stl requires --task");
  if (*structure == model::Structure::kMtl && task)
    throw UsageError("--structure mtl takes no --task (all four are trained)");

  const std::string dataset_path = vm["dataset"].as<std::string>();
  const std::string embeddings_path = vm["embeddings"].as<std::string>();
  const auto records = read_dataset_jsonl_file(dataset_path);
  if (records.empty()) throw InvalidArgument("dataset is empty: " + dataset_path);
  const LoadedEmbeddings loaded = read_embeddings_file(embeddings_path);

  Vocabulary vocab;
  if (vm.count("vocab")) {
    vocab = read_vocab_file(vm["vocab"].as<std::string>());
  } else {
    vocab = vocab_from_embeddings(loaded);
  }
  const MatXf embedding = model::embedding_matrix_for_vocab(vocab, loaded);

  model::ModelConfig mcfg;
  mcfg.structure = *structure;
  mcfg.task = task;
  mcfg.slice = SliceSpec{vm["size"].as<std::size_t>(),
                         location_from_name(vm["location"].as<std::string>())};
  mcfg.embed_dim = static_cast<int>(embedding.rows());
  mcfg.hidden = vm["hidden"].as<int>();
  mcfg.dropout = vm["dropout"].as<double>();
  mcfg.train_embeddings = vm["train-embeddings"].as<bool>();

  model::TrainConfig tcfg;
  tcfg.epochs = vm["epochs"].as<int>();
  tcfg.batch_size = vm["batch"].as<int>();
  tcfg.seed = g.seed;
  tcfg.adam.lr = vm["lr"].as<double>();
  if (vm.count("clip-norm")) tcfg.clip_norm = vm["clip-norm"].as<double>();

  auto m = model::build_model(mcfg, vocab, embedding, g.seed);
  std::cout << "training " << model::structure_name(mcfg.structure)
            << " model: hidden " << mcfg.hidden << ", window "
            << mcfg.slice.size << " (" << location_name(mcfg.slice.location)
            << "), " << records.size() << " records, "
            << model::count_parameters(m) << " trainable parameters\n";

  const auto history = model::train(m, records, tcfg);
  for (std::size_t e = 0; e < history.epochs.size(); ++e) {
    const auto& stats = history.epochs[e];
    std::cout << "epoch " << e + 1 << "/" << history.epochs.size();
    for (std::size_t k = 0; k < history.tasks.size(); ++k)
      std::cout << "  " << model::task_name(history.tasks[k]) << " loss "
                << std::fixed << std::setprecision(4) << stats.head_loss[k]
                << std::defaultfloat;
    std::cout << "  (" << std::fixed << std::setprecision(2) << stats.seconds
              << "s)" << std::defaultfloat << '\n';
  }

  const std::string out_path = resolve_out(g, vm["out"].as<std::string>());
  OutputGuard guard;
  ensure_parent_dir(out_path);
  model::save_checkpoint_file(m, out_path);
  guard.track(out_path);

  json options{{"batch", tcfg.batch_size},
               {"dataset", dataset_path},
               {"dropout", mcfg.dropout},
               {"embeddings", embeddings_path},
               {"epochs", tcfg.epochs},
               {"hidden", mcfg.hidden},
               {"location", location_name(mcfg.slice.location)},
               {"lr", tcfg.adam.lr},
               {"out", out_path},
               {"size", mcfg.slice.size},
               {"structure", std::string(model::structure_name(mcfg.structure))},
               {"train_embeddings", mcfg.train_embeddings}};
  if (task) options["task"] = std::string(model::task_name(*task));
  if (tcfg.clip_norm) options["clip_norm"] = *tcfg.clip_norm;
  if (vm.count("vocab")) options["vocab"] = vm["vocab"].as<std::string>();
  write_resolved_config(g, "train", std::move(options), {out_path}, guard);
  guard.commit();

  std::cout << "checkpoint: " << out_path << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

void print_prediction_table(std::ostream& out, const RawFunction& fn,
                            const model::Prediction& pred) {
  out << fn.binary << ':' << fn.name;
  for (const auto& head : pred.heads) {
    const std::string& cls = head.task == model::Task::kPc
                                 ? pc_class_name(head.label)
                                 : pt_class_name(head.label);
    out << '\t' << model::task_name(head.task) << '=' << cls << " p="
        << std::fixed << std::setprecision(4) << head.probs(head.label)
        << std::defaultfloat;
  }
  out << '\n';
}

void print_prediction_jsonl(std::ostream& out, const RawFunction& fn,
                            const model::Prediction& pred) {
  json heads;
  for (const auto& head : pred.heads) {
    std::vector<double> probs(head.probs.data(),
                              head.probs.data() + head.probs.size());
    heads[std::string(model::task_name(head.task))] = {
        {"label", head.task == model::Task::kPc ? pc_class_name(head.label)
                                                : pt_class_name(head.label)},
        {"prob", head.probs(head.label)},
        {"probs", std::move(probs)},
    };
  }
  out << json{{"binary", fn.binary}, {"function", fn.name},
              {"heads", std::move(heads)}}
             .dump()
      << '\n';
}

int cmd_predict(const std::vector<std::string>& args) {
  po::options_description desc(
      "sigrec predict: recover signatures for every function in a "
      "disassembly listing.\n\nOptions");
  add_global_options(desc);
  desc.add_options()
      ("model", po::value<std::string>()->required(),
       "checkpoint from 'sigrec train'")
      ("asm", po::value<std::string>()->required(),
       "objdump -d listing to analyze")
      ("format", po::value<std::string>()->default_value("table"),
       "output format: table or jsonl")
      ("out", po::value<std::string>(),
       "write predictions to this file instead of standard output");

  po::variables_map vm;
  po::store(po::command_line_parser(args).options(desc).run(), vm);
  if (vm.count("help")) {
    std::cout << desc << '\n';
    return kExitOk;
  }
  po::notify(vm);
  const GlobalOptions g = read_global_options(vm);

  const std::string format = vm["format"].as<std::string>();
  if (format != "table" && format != "jsonl")
    throw UsageError("invalid --format '" + format +
                     "' (expected table or jsonl)");

  const std::string model_path = vm["model"].as<std::string>();
  const std::string asm_path = vm["asm"].as<std::string>();
  const auto m = model::load_checkpoint_file(model_path);
  const auto listing = parse_listing_file(asm_path);
  if (listing.functions.empty())
    throw InvalidArgument("no functions in listing: " + asm_path);

  OutputGuard guard;
  std::ofstream file;
  std::optional<std::string> out_path;
  if (vm.count("out")) out_path = vm["out"].as<std::string>();
  std::ostream& out = open_report_stream(out_path, file, g, guard);

  for (const auto& fn : listing.functions) {
    const auto pred = model::predict(m, sanitize_instructions(fn.instructions));
    if (format == "table")
      print_prediction_table(out, fn, pred);
    else
      print_prediction_jsonl(out, fn, pred);
  }
  out.flush();
  if (!out) throw IoError("failed writing predictions");

  std::vector<std::string> outputs;
  if (out_path) outputs.push_back(resolve_out(g, *out_path));
  write_resolved_config(g, "predict",
                        json{{"asm", asm_path},
                             {"format", format},
                             {"functions", listing.functions.size()},
                             {"model", model_path}},
                        outputs, guard);
  guard.commit();
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int cmd_eval(const std::vector<std::string>& args) {
  po::options_description desc(
      "sigrec eval: score a checkpoint against a labeled dataset "
      "(per-class precision/recall and weighted accuracy per task).\n\n"
      "Options");
  add_global_options(desc);
  desc.add_options()
      ("model", po::value<std::string>()->required(),
       "checkpoint from 'sigrec train'")
      ("dataset", po::value<std::string>()->required(),
       "labeled dataset to score (JSONL)")
      ("format", po::value<std::string>()->default_value("table"),
       "output format: table, tsv or jsonl")
      ("timing", po::bool_switch(),
       "also measure per-function inference time (wall clock; the one "
       "non-deterministic output)")
      ("timing-reps", po::value<int>()->default_value(3),
       "timed repetitions over the dataset when --timing is given")
      ("out", po::value<std::string>(),
       "write the report to this file instead of standard output");

  po::variables_map vm;
  po::store(po::command_line_parser(args).options(desc).run(), vm);
  if (vm.count("help")) {
    std::cout << desc << '\n';
    return kExitOk;
  }
  po::notify(vm);
  const GlobalOptions g = read_global_options(vm);

  const std::string format = vm["format"].as<std::string>();
  if (format != "table" && format != "tsv" && format != "jsonl")
    throw UsageError("invalid --format '" + format +
                     "' (expected table, tsv or jsonl)");

  const std::string model_path = vm["model"].as<std::string>();
  const std::string dataset_path = vm["dataset"].as<std::string>();
  const auto m = model::load_checkpoint_file(model_path);
  const auto records = read_dataset_jsonl_file(dataset_path);
  if (records.empty()) throw InvalidArgument("dataset is empty: " + dataset_path);

  const auto report = eval::evaluate(m, records);
  std::optional<double> ms;
  if (vm["timing"].as<bool>())
    ms = eval::time_inference_ms(m, records, vm["timing-reps"].as<int>());

  OutputGuard guard;
  std::ofstream file;
  std::optional<std::string> out_path;
  if (vm.count("out")) out_path = vm["out"].as<std::string>();
  std::ostream& out = open_report_stream(out_path, file, g, guard);

  if (format == "table") {
    eval::write_eval_table(out, report);
    if (ms)
      out << "per-function inference: " << std::fixed << std::setprecision(3)
          << *ms << " ms" << std::defaultfloat << '\n';
  } else if (format == "tsv") {
    eval::write_eval_tsv(out, report);
    if (ms) out << "timing\tinference_ms\t" << *ms << '\n';
  } else {
    eval::write_eval_jsonl(out, report);
    if (ms)
      out << json{{"inference_ms", *ms},
                  {"repetitions", vm["timing-reps"].as<int>()}}
                 .dump()
          << '\n';
  }
  out.flush();
  if (!out) throw IoError("failed writing report");

  std::vector<std::string> outputs;
  if (out_path) outputs.push_back(resolve_out(g, *out_path));
  write_resolved_config(g, "eval",
                        json{{"dataset", dataset_path},
                             {"format", format},
                             {"model", model_path},
                             {"records", records.size()},
                             {"timing", vm["timing"].as<bool>()}},
                        outputs, guard);
  guard.commit();
  return kExitOk;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

int cmd_ablate(const std::vector<std::string>& args) {
  po::options_description desc(
      "sigrec ablate: sweep window size x window location x model structure "
      "over one dataset, training and scoring a model set per cell.\n\n"
      "Options");
  add_global_options(desc);
  desc.add_options()
      ("dataset", po::value<std::string>()->required(),
       "full labeled dataset (JSONL); split per --split-ratio and --seed")
      ("test-dataset", po::value<std::string>(),
       "score on this dataset instead of splitting --dataset (which is "
       "then used whole for training)")
      ("embeddings", po::value<std::string>()->required(),
       "embedding table from 'sigrec embed'")
      ("vocab", po::value<std::string>(),
       "vocabulary file; when omitted, tokens come from the embedding file")
      ("sizes", po::value<std::string>()->default_value("5,10,20,40,80,120"),
       "comma-separated window sizes")
      ("locations", po::value<std::string>()->default_value("head,tail"),
       "comma-separated window locations")
      ("structures", po::value<std::string>()->default_value("mtl"),
       "comma-separated structures (mtl, stl)")
      ("split-ratio", po::value<double>()->default_value(0.8),
       "train fraction when --test-dataset is not given")
      ("hidden", po::value<int>()->default_value(256), "encoder state width")
      ("dropout", po::value<double>()->default_value(0.2), "dropout rate")
      ("batch", po::value<int>()->default_value(128), "mini-batch size")
      ("epochs", po::value<int>()->default_value(100),
       "training epochs per cell")
      ("lr", po::value<double>()->default_value(1e-4), "learning rate")
      ("timing-reps", po::value<int>()->default_value(3),
       "timed inference repetitions per cell (0 disables the column)")
      ("out", po::value<std::string>()->default_value("ablation"),
       "output stem; writes <stem>.txt, <stem>.tsv and <stem>.jsonl");

  po::variables_map vm;
  po::store(po::command_line_parser(args).options(desc).run(), vm);
  if (vm.count("help")) {
    std::cout << desc << '\n';
    return kExitOk;
  }
  po::notify(vm);
  const GlobalOptions g = read_global_options(vm);

  std::vector<std::size_t> sizes;
  for (const auto& s : split_csv(vm["sizes"].as<std::string>())) {
    try {
      sizes.push_back(std::stoull(s));
    } catch (const std::exception&) {
      throw UsageError("invalid window size: " + s);
    }
    if (sizes.back() == 0) throw UsageError("window size must be positive");
  }
  std::vector<SliceLocation> locations;
  for (const auto& s : split_csv(vm["locations"].as<std::string>()))
    locations.push_back(location_from_name(s));
  std::vector<model::Structure> structures;
  for (const auto& s : split_csv(vm["structures"].as<std::string>())) {
    const auto parsed = model::structure_from_name(s);
    if (!parsed) throw UsageError("invalid structure: " + s);
    structures.push_back(*parsed);
  }
  if (sizes.empty() || locations.empty() || structures.empty())
    throw UsageError("--sizes, --locations and --structures must be non-empty");

  const std::string dataset_path = vm["dataset"].as<std::string>();
  const std::string embeddings_path = vm["embeddings"].as<std::string>();
  const auto loaded = read_embeddings_file(embeddings_path);
  Vocabulary vocab;
  if (vm.count("vocab")) {
    vocab = read_vocab_file(vm["vocab"].as<std::string>());
  } else {
    vocab = vocab_from_embeddings(loaded);
  }
  const MatXf embedding = model::embedding_matrix_for_vocab(vocab, loaded);

  std::vector<DatasetRecord> train_records, test_records;
  if (vm.count("test-dataset")) {
    train_records = read_dataset_jsonl_file(dataset_path);
    test_records =
        read_dataset_jsonl_file(vm["test-dataset"].as<std::string>());
  } else {
    const double ratio = vm["split-ratio"].as<double>();
    if (ratio <= 0.0 || ratio >= 1.0)
      throw UsageError("--split-ratio must be strictly between 0 and 1");
    const auto records = read_dataset_jsonl_file(dataset_path);
    auto split = split_dataset(records, ratio, g.seed);
    train_records = std::move(split.train);
    test_records = std::move(split.test);
  }
  if (train_records.empty()) throw InvalidArgument("empty training split");
  if (test_records.empty()) throw InvalidArgument("empty test split");

  std::vector<eval::AblationCell> cells;
  for (std::size_t size : sizes)
    for (SliceLocation loc : locations)
      for (model::Structure st : structures)
        cells.push_back({size, loc, st});

  eval::AblationOptions options;
  options.hidden = vm["hidden"].as<int>();
  options.dropout = vm["dropout"].as<double>();
  options.epochs = vm["epochs"].as<int>();
  options.batch_size = vm["batch"].as<int>();
  options.seed = g.seed;
  options.adam.lr = vm["lr"].as<double>();
  options.timing_repetitions = vm["timing-reps"].as<int>();

  std::cout << "running " << cells.size() << " ablation cells ("
            << train_records.size() << " train / " << test_records.size()
            << " test records)\n";
  const auto report = eval::run_ablation(cells, vocab, embedding,
                                         train_records, test_records, options);

  const std::string stem = resolve_out(g, vm["out"].as<std::string>());
  const std::string table_path = stem + ".txt";
  const std::string tsv_path = stem + ".tsv";
  const std::string jsonl_path = stem + ".jsonl";
  OutputGuard guard;
  ensure_parent_dir(stem);
  using AblationWriter = void (*)(std::ostream&, const eval::AblationReport&);
  const std::vector<std::pair<std::string, AblationWriter>> writers = {
      {table_path, eval::write_ablation_table},
      {tsv_path, eval::write_ablation_tsv},
      {jsonl_path, eval::write_ablation_jsonl}};
  for (const auto& [path, writer] : writers) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write report: " + path);
    guard.track(path);
    writer(out, report);
    if (!out) throw IoError("failed writing report: " + path);
  }

  write_resolved_config(
      g, "ablate",
      json{{"batch", options.batch_size},
           {"dataset", dataset_path},
           {"dropout", options.dropout},
           {"embeddings", embeddings_path},
           {"epochs", options.epochs},
           {"hidden", options.hidden},
           {"locations", vm["locations"].as<std::string>()},
           {"lr", options.adam.lr},
           {"out", stem},
           {"sizes", vm["sizes"].as<std::string>()},
           {"structures", vm["structures"].as<std::string>()},
           {"timing_reps", options.timing_repetitions}},
      {table_path, tsv_path, jsonl_path}, guard);
  guard.commit();

  write_ablation_table(std::cout, report);
  std::cout << "reports: " << table_path << ", " << tsv_path << ", "
            << jsonl_path << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// dispatch
// ---------------------------------------------------------------------------

int usage(std::ostream& out, int code) {
  out << "usage: sigrec <command> [options]\n"
         "\n"
         "commands:\n"
         "  ingest   parse, sanitize, deduplicate, label and split listings\n"
         "  embed    build the vocabulary and train instruction-word vectors\n"
         "  train    train a signature-recovery model\n"
         "  predict  recover signatures for a disassembly listing\n"
         "  eval     score a checkpoint against a labeled dataset\n"
         "  ablate   sweep window size x location x structure\n"
         "\n"
         "run 'sigrec <command> --help' for the command's options.\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) return usage(std::cerr, kExitUsage);
  const std::string cmd = argv[1];
  if (cmd == "--help" || cmd == "-h" || cmd == "help")
    return usage(std::cout, kExitOk);

  int (*handler)(const std::vector<std::string>&) = nullptr;
  if (cmd == "ingest") handler = cmd_ingest;
  else if (cmd == "embed") handler = cmd_embed;
  else if (cmd == "train") handler = cmd_train;
  else if (cmd == "predict") handler = cmd_predict;
  else if (cmd == "eval") handler = cmd_eval;
  else if (cmd == "ablate") handler = cmd_ablate;
  if (handler == nullptr) {
    std::cerr << "sigrec: unknown command '" << cmd << "'\n";
    return usage(std::cerr, kExitUsage);
  }

  const std::vector<std::string> args(argv + 2, argv + argc);
  try {
    return handler(args);
  } catch (const po::error& e) {
    std::cerr << "sigrec " << cmd << ": " << e.what() << "\n"
              << "run 'sigrec " << cmd << " --help' for the options\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "sigrec " << cmd << ": " << e.what() << '\n';
    return kExitUsage;
  } catch (const IoError& e) {
    std::cerr << "sigrec " << cmd << ": " << e.what() << '\n';
    return kExitInput;
  } catch (const ParseError& e) {
    std::cerr << "sigrec " << cmd << ": " << e.what() << '\n';
    return kExitInput;
  } catch (const FormatError& e) {
    std::cerr << "sigrec " << cmd << ": " << e.what() << '\n';
    return kExitInput;
  } catch (const InvalidArgument& e) {
    std::cerr << "sigrec " << cmd << ": " << e.what() << '\n';
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "sigrec " << cmd << ": internal error: " << e.what() << '\n';
    return kExitInternal;
  }
}
