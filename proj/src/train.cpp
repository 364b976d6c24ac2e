#include "bellcnn/train.hpp"

#include <charconv>
#include <chrono>
#include <sstream>

#include "bellcnn/error.hpp"
#include "bellcnn/freeze.hpp"
#include "bellcnn/random.hpp"

namespace bellcnn {
namespace {

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <typename T>
T parse_field(const std::string& s, std::size_t line_no) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw Error(ErrorKind::BadValue, "summary line " + std::to_string(line_no) + ": bad field '" + s + "'");
  return v;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs == 0 || batches_per_epoch == 0 || batch_size == 0 || snapshot_interval == 0)
    throw Error(ErrorKind::BadConfig, "epochs, batches, batch size and snapshot interval must be >= 1");
  adam.validate();
}

ModelGraph fit_model(ModelGraph g, const DatasetSplit& split, const TrainConfig& cfg, const SummarySink& sink) {
  cfg.validate();
  if (split.train.empty()) throw Error(ErrorKind::EmptyTrainSet, "training split is empty");
  for (const auto& e : split.train)
    if (!(e.image.shape() == g.input_shape()))
      throw Error(ErrorKind::ShapeMismatch, "example " + e.subject_id + " has shape " + e.image.shape().str() +
                                                ", model expects " + g.input_shape().str());
  g.set_mode(Mode::Train);

  std::vector<AdamState> states;
  for (const Tensor* p : g.parameters()) states.push_back(AdamState::fresh(p->shape()));

  Rng rng(cfg.seed);
  const auto start = std::chrono::steady_clock::now();
  const std::uint64_t total = cfg.total_steps();
  const std::size_t n = split.train.size();
  const double inv_batch = 1.0 / static_cast<double>(cfg.batch_size);
  std::vector<std::size_t> order(n);

  for (std::uint64_t epoch = 1; epoch <= cfg.epochs && (epoch - 1) * cfg.batches_per_epoch < total; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    shuffle_in_place(order, rng);

    for (std::uint64_t batch = 1; batch <= cfg.batches_per_epoch; ++batch) {
      const std::uint64_t step = (epoch - 1) * cfg.batches_per_epoch + batch;
      if (step > total) break;
      std::vector<Tensor> grads;
      double loss = 0.0;
      std::size_t correct = 0;
      for (std::uint64_t j = 0; j < cfg.batch_size; ++j) {
        const LabeledExample& ex = split.train[order[((batch - 1) * cfg.batch_size + j) % n]];
        const ForwardPass pass = forward(g, ex.image, rng);
        GradientSet gs = backward(g, pass, ex.one_hot);
        loss += gs.loss;
        if (argmax(pass.logits) == ex.label) ++correct;
        if (grads.empty()) {
          grads = std::move(gs.grads);
        } else {
          for (std::size_t k = 0; k < grads.size(); ++k) {
            auto dst = grads[k].data();
            auto src = gs.grads[k].data();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
          }
        }
      }
      for (Tensor& t : grads)
        for (double& v : t.data()) v *= inv_batch;

      auto params = g.mutable_parameters();
      for (std::size_t k = 0; k < params.size(); ++k) adam_update(*params[k], grads[k], states[k], cfg.adam);

      if (step % cfg.snapshot_interval == 0 || step == total) {
        const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);
        const TrainingSummaryRow row{step, epoch, loss * inv_batch,
                                     static_cast<double>(correct) * inv_batch,
                                     cfg.record_wallclock ? static_cast<std::int64_t>(elapsed.count()) : 0};
        if (sink.on_row) sink.on_row(row);
        if (sink.on_snapshot) sink.on_snapshot(step, g);
      }
    }
  }
  return g;
}

std::string format_summary_row(const TrainingSummaryRow& row) {
  return std::to_string(row.step) + ',' + std::to_string(row.epoch) + ',' + format_double(row.loss) + ',' +
         format_double(row.accuracy) + ',' + std::to_string(row.wallclock_ms) + '\n';
}

SummaryCsvWriter::SummaryCsvWriter(const std::filesystem::path& path) : out_(path, std::ios::binary | std::ios::trunc) {
  if (!out_) throw Error(ErrorKind::IoFailure, "cannot write " + path.string());
  out_ << "step,epoch,loss,accuracy,wallclock_ms\n" << std::flush;
}

void SummaryCsvWriter::write(const TrainingSummaryRow& row) {
  out_ << format_summary_row(row) << std::flush;
  if (!out_) throw Error(ErrorKind::IoFailure, "summary write failed");
}

std::vector<TrainingSummaryRow> parse_summary_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "step,epoch,loss,accuracy,wallclock_ms")
    throw Error(ErrorKind::MissingColumn, "summary CSV header must be step,epoch,loss,accuracy,wallclock_ms");
  std::vector<TrainingSummaryRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream fields(line);
    std::string part;
    while (std::getline(fields, part, ',')) f.push_back(part);
    if (f.size() != 5) throw Error(ErrorKind::BadValue, "summary line " + std::to_string(line_no) + " needs 5 fields");
    rows.push_back({parse_field<std::uint64_t>(f[0], line_no), parse_field<std::uint64_t>(f[1], line_no),
                    parse_field<double>(f[2], line_no), parse_field<double>(f[3], line_no),
                    parse_field<std::int64_t>(f[4], line_no)});
  }
  return rows;
}

SummarySink snapshot_sink(const std::filesystem::path& directory) {
  std::filesystem::create_directories(directory);
  SummarySink sink;
  sink.on_snapshot = [directory](std::uint64_t step, const ModelGraph& g) {
    freeze(g, directory / ("snap_" + std::to_string(step) + ".bcnn"));
  };
  return sink;
}

EvaluationReport evaluate(const ModelGraph& g, const std::vector<LabeledExample>& examples) {
  if (examples.empty()) throw Error(ErrorKind::Empty, "nothing to evaluate");
  EvaluationReport report;
  std::size_t correct = 0;
  for (const auto& e : examples) {
    const Prediction p = predict(g, e.image);
    if (p.class_index == e.label) ++correct;
    report.rows.push_back({e.subject_id, p.class_index, e.label});
  }
  report.accuracy = static_cast<double>(correct) / static_cast<double>(examples.size());
  return report;
}

std::string format_evaluation(const EvaluationReport& report) {
  std::ostringstream out;
  out << "accuracy " << report.accuracy << '\n';
  for (const auto& row : report.rows)
    out << row.subject_id << " P=" << (row.predicted == kAlzheimer ? 'A' : 'C') << " T=" << row.truth << '\n';
  return out.str();
}

std::vector<double> smooth_series(const std::vector<double>& raw, double factor) {
  std::vector<double> out;
  out.reserve(raw.size());
  for (double x : raw) out.push_back(out.empty() ? x : factor * out.back() + (1.0 - factor) * x);
  return out;
}

void write_smoothed_series(const std::vector<TrainingSummaryRow>& rows, const std::filesystem::path& out_dir,
                           double factor) {
  std::filesystem::create_directories(out_dir);
  auto emit = [&](const std::string& name, auto metric) {
    std::vector<double> raw;
    for (const auto& r : rows) raw.push_back(metric(r));
    const auto smoothed = smooth_series(raw, factor);
    std::ofstream out(out_dir / name, std::ios::binary | std::ios::trunc);
    out << "step,smoothed,raw\n";
    for (std::size_t i = 0; i < rows.size(); ++i)
      out << rows[i].step << ',' << format_double(smoothed[i]) << ',' << format_double(raw[i]) << '\n';
    if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + (out_dir / name).string());
  };
  emit("loss.csv", [](const TrainingSummaryRow& r) { return r.loss; });
  emit("accuracy.csv", [](const TrainingSummaryRow& r) { return r.accuracy; });
}

}  // namespace bellcnn
