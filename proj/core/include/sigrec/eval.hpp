#pragma once

// Metrics and measurement: per-class precision/recall from confusion
// counts, class-share-weighted accuracy, the accuracy-per-device-cost
// efficiency ratio, wall-clock training/inference timing, and the
// size x location x structure ablation grid runner with table/TSV/JSONL
// writers.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "sigrec/ingest.hpp"
#include "sigrec/linalg.hpp"
#include "sigrec/model.hpp"

namespace sigrec::eval {

struct ConfusionMatrix {
  // counts(t, p): samples with true class t predicted as p.
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> counts;

  Eigen::Index classes() const { return counts.rows(); }
  std::int64_t total() const { return counts.sum(); }
};

/// Tallies (true, predicted) pairs. Throws InvalidArgument on empty input,
/// length mismatch, or out-of-range classes.
ConfusionMatrix confusion(const std::vector<int>& predictions,
                          const std::vector<int>& labels, int num_classes);

struct ClassMetrics {
  std::int64_t support = 0;  // true-label count for the class
  double share = 0.0;        // support / total
  // Absent when the denominator is zero (class never predicted / never
  // labeled); such classes are excluded from aggregates.
  std::optional<double> precision;
  std::optional<double> recall;
};

/// Per-class precision TP/(TP+FP) and recall TP/(TP+FN).
std::vector<ClassMetrics> precision_recall(const ConfusionMatrix& cm);

/// Class-share-weighted recall: sum_i share_i * recall_i, which reduces to
/// trace/total exactly.
double weighted_accuracy(const ConfusionMatrix& cm);

struct DeviceRecord {
  double seconds = 0.0;      // time cost T
  double utilization = 0.0;  // device utilization U in [0, 1]
};

struct EfficiencyInput {
  std::vector<double> accuracies;     // per-task accuracy fractions
  std::vector<DeviceRecord> devices;  // per-device (T, U)
};

/// (sum of accuracies) / (sum of T_i * U_i). Throws InvalidArgument on
/// empty inputs, non-positive times, or utilizations outside [0, 1].
double efficiency(const EfficiencyInput& input);

struct TaskEval {
  model::Task task{};
  ConfusionMatrix cm;
  std::vector<ClassMetrics> classes;
  double accuracy = 0.0;
};

struct EvalReport {
  std::vector<TaskEval> tasks;
};

/// Runs the model over the records (dropout-free, batched) and scores every
/// head against the labels. Throws InvalidArgument on an empty dataset.
EvalReport evaluate(const model::MtlGruModel& m,
                    const std::vector<DatasetRecord>& records);

/// Mean of the recorded per-epoch wall times; throws on an empty history.
double mean_epoch_seconds(const model::TrainHistory& history);

/// Mean single-function forward time in milliseconds: functions are
/// pre-encoded (loading/encoding is excluded), one warm-up pass runs first,
/// then `repetitions` timed passes at batch size 1.
double time_inference_ms(const model::MtlGruModel& m,
                         const std::vector<DatasetRecord>& records,
                         int repetitions = 3);

struct AblationCell {
  std::size_t size = 40;
  SliceLocation location = SliceLocation::kHead;
  model::Structure structure = model::Structure::kMtl;

  bool operator==(const AblationCell&) const = default;
};

struct AblationOptions {
  int hidden = 256;
  double dropout = 0.2;
  bool train_embeddings = false;
  int epochs = 100;
  int batch_size = 128;
  std::uint64_t seed = 1;
  nn::AdamConfig adam{};
  // 0 disables the per-function inference timing column.
  int timing_repetitions = 3;
};

struct AblationRow {
  AblationCell cell;
  bool failed = false;
  std::string error;
  // Accuracy per task in pc, pt1, pt2, pt3 order. A single-task cell
  // trains four separate models, one per task.
  std::array<double, 4> task_accuracy{};
  // Mean training epoch seconds; the single-task form reports the sum over
  // its four models (the aggregate cost of covering all tasks).
  double epoch_seconds = 0.0;
  // Per-function inference milliseconds, likewise aggregated for the
  // single-task form.
  double inference_ms = 0.0;
};

struct AblationReport {
  std::vector<AblationRow> rows;
};

/// Trains and scores one model set per grid cell with shared seeds. A cell
/// that throws is recorded as failed and the grid continues.
AblationReport run_ablation(const std::vector<AblationCell>& cells,
                            const Vocabulary& vocab, const MatXf& embedding,
                            const std::vector<DatasetRecord>& train_records,
                            const std::vector<DatasetRecord>& test_records,
                            const AblationOptions& options);

/// Human-readable table (percentages at two decimals), tab-separated
/// values, and line-delimited JSON with full precision.
void write_eval_table(std::ostream& out, const EvalReport& report);
void write_eval_tsv(std::ostream& out, const EvalReport& report);
void write_eval_jsonl(std::ostream& out, const EvalReport& report);
void write_ablation_table(std::ostream& out, const AblationReport& report);
void write_ablation_tsv(std::ostream& out, const AblationReport& report);
void write_ablation_jsonl(std::ostream& out, const AblationReport& report);

}  // namespace sigrec::eval
