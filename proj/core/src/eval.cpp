#include "sigrec/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace sigrec::eval {

using json = nlohmann::json;

ConfusionMatrix confusion(const std::vector<int>& predictions,
                          const std::vector<int>& labels, int num_classes) {
  if (predictions.empty()) throw InvalidArgument("confusion: empty input");
  if (predictions.size() != labels.size())
    throw InvalidArgument("confusion: prediction/label count mismatch");
  if (num_classes < 1) throw InvalidArgument("confusion: no classes");

  ConfusionMatrix cm;
  cm.counts =
      Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>::Zero(
          num_classes, num_classes);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const int t = labels[i];
    const int p = predictions[i];
    if (t < 0 || t >= num_classes || p < 0 || p >= num_classes)
      throw InvalidArgument("confusion: class index out of range");
    ++cm.counts(t, p);
  }
  return cm;
}

std::vector<ClassMetrics> precision_recall(const ConfusionMatrix& cm) {
  const auto k = cm.classes();
  const auto total = cm.total();
  std::vector<ClassMetrics> out(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < k; ++i) {
    auto& m = out[static_cast<std::size_t>(i)];
    const std::int64_t tp = cm.counts(i, i);
    const std::int64_t labeled = cm.counts.row(i).sum();     // TP + FN
    const std::int64_t predicted = cm.counts.col(i).sum();   // TP + FP
    m.support = labeled;
    m.share = total > 0 ? static_cast<double>(labeled) / static_cast<double>(total)
                        : 0.0;
    if (predicted > 0)
      m.precision = static_cast<double>(tp) / static_cast<double>(predicted);
    if (labeled > 0)
      m.recall = static_cast<double>(tp) / static_cast<double>(labeled);
  }
  return out;
}

double weighted_accuracy(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total <= 0) throw InvalidArgument("weighted_accuracy: empty matrix");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < cm.classes(); ++i) {
    const std::int64_t labeled = cm.counts.row(i).sum();
    if (labeled == 0) continue;  // zero share contributes nothing
    const double share =
        static_cast<double>(labeled) / static_cast<double>(total);
    const double recall = static_cast<double>(cm.counts(i, i)) /
                          static_cast<double>(labeled);
    acc += share * recall;
  }
  return acc;
}

double efficiency(const EfficiencyInput& input) {
  if (input.accuracies.empty())
    throw InvalidArgument("efficiency: no accuracy values");
  if (input.devices.empty())
    throw InvalidArgument("efficiency: no device records");
  double num = 0.0;
  for (double a : input.accuracies) {
    if (a < 0.0) throw InvalidArgument("efficiency: negative accuracy");
    num += a;
  }
  double denom = 0.0;
  for (const auto& d : input.devices) {
    if (d.seconds <= 0.0)
      throw InvalidArgument("efficiency: time cost must be positive");
    if (d.utilization < 0.0 || d.utilization > 1.0)
      throw InvalidArgument("efficiency: utilization must be in [0, 1]");
    denom += d.seconds * d.utilization;
  }
  if (denom <= 0.0)
    throw InvalidArgument("efficiency: zero total device cost");
  return num / denom;
}

namespace {

int argmax_lowest(const MatXf& probs, Eigen::Index col) {
  int best = 0;
  for (Eigen::Index i = 1; i < probs.rows(); ++i)
    if (probs(i, col) > probs(best, col)) best = static_cast<int>(i);
  return best;
}

}  // namespace

EvalReport evaluate(const model::MtlGruModel& m,
                    const std::vector<DatasetRecord>& records) {
  if (records.empty()) throw InvalidArgument("evaluate: empty dataset");

  std::vector<TokenSequence> seqs;
  seqs.reserve(records.size());
  for (const auto& rec : records)
    seqs.push_back(model::encode_for_model(m, rec.instructions));
  const auto probs = model::forward_probs(m, seqs);
  const auto tasks = model::config_tasks(m.config);

  EvalReport report;
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    std::vector<int> predictions, labels;
    predictions.reserve(records.size());
    labels.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
      predictions.push_back(
          argmax_lowest(probs[k], static_cast<Eigen::Index>(i)));
      labels.push_back(model::task_label(records[i].label, tasks[k]));
    }
    TaskEval te;
    te.task = tasks[k];
    te.cm = confusion(predictions, labels, model::task_class_count(tasks[k]));
    te.classes = precision_recall(te.cm);
    te.accuracy = weighted_accuracy(te.cm);
    report.tasks.push_back(std::move(te));
  }
  return report;
}

double mean_epoch_seconds(const model::TrainHistory& history) {
  if (history.epochs.empty())
    throw InvalidArgument("mean_epoch_seconds: empty history");
  double total = 0.0;
  for (const auto& e : history.epochs) total += e.seconds;
  return total / static_cast<double>(history.epochs.size());
}

double time_inference_ms(const model::MtlGruModel& m,
                         const std::vector<DatasetRecord>& records,
                         int repetitions) {
  if (records.empty()) throw InvalidArgument("time_inference_ms: empty set");
  if (repetitions < 1)
    throw InvalidArgument("time_inference_ms: need at least one repetition");

  std::vector<std::vector<TokenSequence>> singles;
  singles.reserve(records.size());
  for (const auto& rec : records)
    singles.push_back({model::encode_for_model(m, rec.instructions)});

  for (const auto& s : singles) model::forward_probs(m, s);  // warm-up

  const auto t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < repetitions; ++r)
    for (const auto& s : singles) model::forward_probs(m, s);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return seconds * 1000.0 /
         (static_cast<double>(repetitions) * static_cast<double>(records.size()));
}

namespace {

/// Accuracy per task plus aggregate times for one grid cell.
void run_cell(const AblationCell& cell, const Vocabulary& vocab,
              const MatXf& embedding,
              const std::vector<DatasetRecord>& train_records,
              const std::vector<DatasetRecord>& test_records,
              const AblationOptions& options, AblationRow& row) {
  const std::vector<model::Task> all_tasks = {model::Task::kPc, model::Task::kPt1,
                                              model::Task::kPt2, model::Task::kPt3};

  std::vector<model::ModelConfig> configs;
  if (cell.structure == model::Structure::kMtl) {
    model::ModelConfig cfg;
    cfg.structure = model::Structure::kMtl;
    cfg.slice = SliceSpec{cell.size, cell.location};
    cfg.embed_dim = static_cast<int>(embedding.rows());
    cfg.hidden = options.hidden;
    cfg.dropout = options.dropout;
    cfg.train_embeddings = options.train_embeddings;
    configs.push_back(cfg);
  } else {
    for (model::Task t : all_tasks) {
      model::ModelConfig cfg;
      cfg.structure = model::Structure::kStl;
      cfg.task = t;
      cfg.slice = SliceSpec{cell.size, cell.location};
      cfg.embed_dim = static_cast<int>(embedding.rows());
      cfg.hidden = options.hidden;
      cfg.dropout = options.dropout;
      cfg.train_embeddings = options.train_embeddings;
      configs.push_back(cfg);
    }
  }

  model::TrainConfig tcfg;
  tcfg.epochs = options.epochs;
  tcfg.batch_size = options.batch_size;
  tcfg.seed = options.seed;
  tcfg.adam = options.adam;

  for (const auto& cfg : configs) {
    auto m = model::build_model(cfg, vocab, embedding, options.seed);
    auto history = model::train(m, train_records, tcfg);
    auto report = evaluate(m, test_records);
    for (const auto& te : report.tasks) {
      const auto idx = static_cast<std::size_t>(
          std::find(all_tasks.begin(), all_tasks.end(), te.task) -
          all_tasks.begin());
      row.task_accuracy[idx] = te.accuracy;
    }
    if (!history.epochs.empty()) row.epoch_seconds += mean_epoch_seconds(history);
    if (options.timing_repetitions > 0)
      row.inference_ms +=
          time_inference_ms(m, test_records, options.timing_repetitions);
  }
}

}  // namespace

AblationReport run_ablation(const std::vector<AblationCell>& cells,
                            const Vocabulary& vocab, const MatXf& embedding,
                            const std::vector<DatasetRecord>& train_records,
                            const std::vector<DatasetRecord>& test_records,
                            const AblationOptions& options) {
  AblationReport report;
  report.rows.reserve(cells.size());
  for (const auto& cell : cells) {
    AblationRow row;
    row.cell = cell;
    try {
      run_cell(cell, vocab, embedding, train_records, test_records, options,
               row);
    } catch (const std::exception& e) {
      row.failed = true;
      row.error = e.what();
      row.task_accuracy = {};
      row.epoch_seconds = 0.0;
      row.inference_ms = 0.0;
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Writers
// ---------------------------------------------------------------------------

namespace {

std::string pct(double fraction) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(2) << fraction * 100.0;
  return ss.str();
}

std::string fixed2(double v) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(2) << v;
  return ss.str();
}

std::string full(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

const char* location_name(SliceLocation loc) {
  return loc == SliceLocation::kHead ? "head" : "tail";
}

}  // namespace

void write_eval_table(std::ostream& out, const EvalReport& report) {
  for (const auto& te : report.tasks) {
    out << "task " << model::task_name(te.task) << ": weighted accuracy "
        << pct(te.accuracy) << "% over " << te.cm.total() << " samples\n";
    out << "  class  support  share%  precision%  recall%\n";
    for (std::size_t i = 0; i < te.classes.size(); ++i) {
      const auto& c = te.classes[i];
      const std::string name =
          te.task == model::Task::kPc
              ? pc_class_name(static_cast<int>(i))
              : pt_class_name(static_cast<int>(i));
      out << "  " << name << "  " << c.support << "  " << pct(c.share) << "  "
          << (c.precision ? pct(*c.precision) : std::string("-")) << "  "
          << (c.recall ? pct(*c.recall) : std::string("-")) << "\n";
    }
  }
}

void write_eval_tsv(std::ostream& out, const EvalReport& report) {
  out << "task\tclass\tsupport\tshare\tprecision\trecall\taccuracy\n";
  for (const auto& te : report.tasks) {
    for (std::size_t i = 0; i < te.classes.size(); ++i) {
      const auto& c = te.classes[i];
      const std::string name =
          te.task == model::Task::kPc
              ? pc_class_name(static_cast<int>(i))
              : pt_class_name(static_cast<int>(i));
      out << model::task_name(te.task) << '\t' << name << '\t' << c.support
          << '\t' << full(c.share) << '\t'
          << (c.precision ? full(*c.precision) : std::string("-")) << '\t'
          << (c.recall ? full(*c.recall) : std::string("-")) << '\t'
          << full(te.accuracy) << '\n';
    }
  }
}

void write_eval_jsonl(std::ostream& out, const EvalReport& report) {
  for (const auto& te : report.tasks) {
    json classes = json::array();
    for (std::size_t i = 0; i < te.classes.size(); ++i) {
      const auto& c = te.classes[i];
      json jc = {
          {"class", te.task == model::Task::kPc
                        ? pc_class_name(static_cast<int>(i))
                        : pt_class_name(static_cast<int>(i))},
          {"share", c.share},
          {"support", c.support},
      };
      if (c.precision) jc["precision"] = *c.precision;
      if (c.recall) jc["recall"] = *c.recall;
      classes.push_back(std::move(jc));
    }
    json row = {
        {"accuracy", te.accuracy},
        {"classes", std::move(classes)},
        {"samples", te.cm.total()},
        {"task", model::task_name(te.task)},
    };
    out << row.dump() << '\n';
  }
}

void write_ablation_table(std::ostream& out, const AblationReport& report) {
  out << "size  location  structure  acc_pc%  acc_pt1%  acc_pt2%  acc_pt3%  "
         "epoch_s  infer_ms  status\n";
  for (const auto& row : report.rows) {
    out << row.cell.size << "  " << location_name(row.cell.location) << "  "
        << model::structure_name(row.cell.structure) << "  ";
    if (row.failed) {
      out << "-  -  -  -  -  -  failed: " << row.error << "\n";
      continue;
    }
    for (double a : row.task_accuracy) out << pct(a) << "  ";
    out << fixed2(row.epoch_seconds) << "  " << fixed2(row.inference_ms)
        << "  ok\n";
  }
}

void write_ablation_tsv(std::ostream& out, const AblationReport& report) {
  out << "size\tlocation\tstructure\tacc_pc\tacc_pt1\tacc_pt2\tacc_pt3\t"
         "epoch_seconds\tinference_ms\tstatus\terror\n";
  for (const auto& row : report.rows) {
    out << row.cell.size << '\t' << location_name(row.cell.location) << '\t'
        << model::structure_name(row.cell.structure) << '\t';
    if (row.failed) {
      out << "-\t-\t-\t-\t-\t-\tfailed\t" << row.error << '\n';
      continue;
    }
    for (double a : row.task_accuracy) out << full(a) << '\t';
    out << full(row.epoch_seconds) << '\t' << full(row.inference_ms)
        << "\tok\t\n";
  }
}

void write_ablation_jsonl(std::ostream& out, const AblationReport& report) {
  for (const auto& row : report.rows) {
    json j = {
        {"location", location_name(row.cell.location)},
        {"size", row.cell.size},
        {"structure", model::structure_name(row.cell.structure)},
    };
    if (row.failed) {
      j["status"] = "failed";
      j["error"] = row.error;
    } else {
      j["status"] = "ok";
      j["accuracy"] = {{"pc", row.task_accuracy[0]},
                       {"pt1", row.task_accuracy[1]},
                       {"pt2", row.task_accuracy[2]},
                       {"pt3", row.task_accuracy[3]}};
      j["epoch_seconds"] = row.epoch_seconds;
      j["inference_ms"] = row.inference_ms;
    }
    out << j.dump() << '\n';
  }
}

}  // namespace sigrec::eval
