#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "bellcnn/data.hpp"
#include "bellcnn/model.hpp"
#include "bellcnn/optim.hpp"

namespace bellcnn {

struct TrainConfig {
  std::uint64_t epochs = 100;
  std::uint64_t batches_per_epoch = 7;
  std::uint64_t batch_size = 1;
  std::uint64_t snapshot_interval = 100;  // P
  std::uint64_t seed = 0;
  AdamHyper adam;
  /// When false, wallclock_ms is written as 0 so summary files are reproducible.
  bool record_wallclock = true;
  /// Stop after this global step when nonzero.
  std::uint64_t step_limit = 0;

  void validate() const;
  std::uint64_t total_steps() const {
    const std::uint64_t planned = epochs * batches_per_epoch;
    return step_limit != 0 && step_limit < planned ? step_limit : planned;
  }
};

struct TrainingSummaryRow {
  std::uint64_t step = 0;   // (epoch - 1) * batches_per_epoch + batch_index, 1-based
  std::uint64_t epoch = 0;  // 1-based
  double loss = 0.0;        // batch mean, measured before the update
  double accuracy = 0.0;    // batch accuracy, measured before the update
  std::int64_t wallclock_ms = 0;
};

/// Receivers for rows emitted every P steps and at the final step, and for the
/// matching snapshots. Either may be empty.
struct SummarySink {
  std::function<void(const TrainingSummaryRow&)> on_row;
  std::function<void(std::uint64_t step, const ModelGraph&)> on_snapshot;
};

/// Each epoch draws a seeded permutation of the training set; batch b takes
/// permuted positions [b*B, (b+1)*B) modulo the set size.
ModelGraph fit_model(ModelGraph g, const DatasetSplit& split, const TrainConfig& cfg, const SummarySink& sink = {});

/// Append-only CSV writer: header `step,epoch,loss,accuracy,wallclock_ms`, LF endings,
/// flushed per row.
class SummaryCsvWriter {
 public:
  explicit SummaryCsvWriter(const std::filesystem::path& path);
  void write(const TrainingSummaryRow& row);

 private:
  std::ofstream out_;
};

std::string format_summary_row(const TrainingSummaryRow& row);
std::vector<TrainingSummaryRow> parse_summary_csv(std::istream& in);

/// Writes snap_<step>.bcnn files into a directory.
SummarySink snapshot_sink(const std::filesystem::path& directory);

struct EvaluationRow {
  std::string subject_id;
  std::size_t predicted = 0;
  std::size_t truth = 0;
};

struct EvaluationReport {
  double accuracy = 0.0;
  std::vector<EvaluationRow> rows;
};

EvaluationReport evaluate(const ModelGraph& g, const std::vector<LabeledExample>& examples);

/// `accuracy <value>` then one `id P=<C|A> T=<0|1>` line per example.
std::string format_evaluation(const EvaluationReport& report);

/// s_0 = x_0, s_t = factor * s_{t-1} + (1 - factor) * x_t.
std::vector<double> smooth_series(const std::vector<double>& raw, double factor = 0.9);

/// Writes loss.csv and accuracy.csv (`step,smoothed,raw`) into out_dir.
void write_smoothed_series(const std::vector<TrainingSummaryRow>& rows, const std::filesystem::path& out_dir,
                           double factor = 0.9);

}  // namespace bellcnn
