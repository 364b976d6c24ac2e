#include "doctest.h"

#include <cmath>
#include <sstream>

#include "bellcnn/error.hpp"
#include "bellcnn/synthetic.hpp"
#include "bellcnn/train.hpp"
#include "support/scratch.hpp"

using namespace bellcnn;

namespace {

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error raised");
  return ErrorKind::BadValue;
}

BellConfig tiny_config(std::uint64_t seed = 1) {
  BellConfig cfg;
  cfg.input_w = cfg.input_h = 32;
  cfg.conv_filters = {2, 2, 2, 2, 2};
  cfg.kernel_extent = 3;
  cfg.fc_units = 8;
  cfg.seed = seed;
  return cfg;
}

DatasetSplit synthetic_split(std::size_t n, std::size_t extent = 32) {
  Rng rng(99);
  DatasetSplit split;
  for (std::size_t i = 0; i < n; ++i)
    split.train.push_back(make_example(synthetic_slice(i % 2, extent, extent, rng), i % 2, "S" + std::to_string(i)));
  return split;
}

/// Model whose output is always class `label`, whatever the input.
ModelGraph constant_model(std::size_t label) {
  ModelGraph g = build_bellcnn(tiny_config());
  auto params = g.mutable_parameters();
  *params[params.size() - 2] = Tensor(params[params.size() - 2]->shape());
  *params.back() = label == 0 ? Tensor(Shape{2}, {1.0, 0.0}) : Tensor(Shape{2}, {0.0, 1.0});
  return g;
}

std::string run_summary(const TrainConfig& cfg, const DatasetSplit& split) {
  std::ostringstream out;
  SummarySink sink;
  sink.on_row = [&](const TrainingSummaryRow& row) { out << format_summary_row(row); };
  fit_model(build_bellcnn(tiny_config(cfg.seed)), split, cfg, sink);
  return out.str();
}

}  // namespace

TEST_CASE("exponential smoothing") {
  const auto s = smooth_series({0, 1, 1, 1});
  REQUIRE(s.size() == 4);
  CHECK(s[0] == 0.0);
  CHECK(s[1] == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(s[2] == doctest::Approx(0.19).epsilon(1e-15));
  CHECK(s[3] == doctest::Approx(0.271).epsilon(1e-15));
  CHECK(smooth_series({}).empty());
  CHECK(smooth_series({5.0}) == std::vector<double>{5.0});
}

TEST_CASE("smoothed series files") {
  scratch::Dir dir("summarize");
  std::vector<TrainingSummaryRow> rows;
  for (std::uint64_t i = 0; i < 4; ++i) rows.push_back({i + 1, 1, i == 0 ? 0.0 : 1.0, 0.5, 0});
  write_smoothed_series(rows, dir.path());
  std::istringstream loss(scratch::slurp(dir / "loss.csv"));
  std::string line;
  std::getline(loss, line);
  CHECK(line == "step,smoothed,raw");
  const double expected[] = {0.0, 0.1, 0.19, 0.271};
  for (std::size_t i = 0; i < 4; ++i) {
    REQUIRE(std::getline(loss, line));
    const auto first = line.find(','), second = line.rfind(',');
    CHECK(line.substr(0, first) == std::to_string(i + 1));
    CHECK(std::stod(line.substr(first + 1, second - first - 1)) == doctest::Approx(expected[i]).epsilon(1e-15));
    CHECK(line.substr(second + 1) == (i == 0 ? "0" : "1"));
  }
  CHECK(scratch::slurp(dir / "accuracy.csv") == "step,smoothed,raw\n1,0.5,0.5\n2,0.5,0.5\n3,0.5,0.5\n4,0.5,0.5\n");
}

TEST_CASE("summary rows follow the global step formula") {
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batches_per_epoch = 4;
  cfg.batch_size = 2;
  cfg.snapshot_interval = 1;
  cfg.record_wallclock = false;
  std::vector<TrainingSummaryRow> rows;
  SummarySink sink;
  sink.on_row = [&](const TrainingSummaryRow& r) { rows.push_back(r); };
  fit_model(build_bellcnn(tiny_config()), synthetic_split(5), cfg, sink);
  REQUIRE(rows.size() == 12);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::uint64_t batch = i % 4 + 1;
    CHECK(rows[i].step == (rows[i].epoch - 1) * cfg.batches_per_epoch + batch);
    CHECK(rows[i].step == i + 1);
    CHECK(rows[i].accuracy >= 0.0);
    CHECK(rows[i].accuracy <= 1.0);
    CHECK(rows[i].wallclock_ms == 0);
  }
}

TEST_CASE("rows and snapshots every P steps and at the final step") {
  scratch::Dir dir("snapshots");
  const auto split = synthetic_split(3);
  const std::pair<std::uint64_t, std::uint64_t> cases[] = {{7, 3}, {6, 3}, {5, 1}, {4, 10}};
  for (const auto& [steps, every] : cases) {
    const auto sub = dir.path() / (std::to_string(steps) + "_" + std::to_string(every));
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batches_per_epoch = steps;
    cfg.snapshot_interval = every;
    SummarySink sink = snapshot_sink(sub);
    std::vector<std::uint64_t> emitted;
    sink.on_row = [&](const TrainingSummaryRow& r) { emitted.push_back(r.step); };
    fit_model(build_bellcnn(tiny_config()), split, cfg, sink);
    const std::size_t expected = (steps + every - 1) / every;
    CHECK(emitted.size() == expected);
    CHECK(emitted.back() == steps);
    std::size_t files = 0;
    for (const auto& entry : std::filesystem::directory_iterator(sub)) {
      ++files;
      CHECK(entry.path().filename().string().rfind("snap_", 0) == 0);
    }
    CHECK(files == expected);
    CHECK(std::filesystem::exists(sub / ("snap_" + std::to_string(steps) + ".bcnn")));
  }
}

TEST_CASE("step limit stops mid-epoch") {
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batches_per_epoch = 7;
  cfg.step_limit = 9;
  cfg.snapshot_interval = 4;
  std::vector<std::uint64_t> steps;
  SummarySink sink;
  sink.on_row = [&](const TrainingSummaryRow& r) { steps.push_back(r.step); };
  fit_model(build_bellcnn(tiny_config()), synthetic_split(4), cfg, sink);
  CHECK(steps == std::vector<std::uint64_t>{4, 8, 9});
}

TEST_CASE("a single small step reduces the example's loss") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto split = synthetic_split(1, 64);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batches_per_epoch = 1;
    cfg.seed = seed;
    cfg.adam.alpha = 1e-4;
    double emitted = 0.0;
    SummarySink sink;
    sink.on_row = [&](const TrainingSummaryRow& r) { emitted = r.loss; };
    BellConfig bc;
    bc.seed = seed;
    const ModelGraph trained = fit_model(build_bellcnn(bc), split, cfg, sink);
    // A one-element shuffle draws nothing, so a fresh rng replays the step's dropout mask.
    Rng replay(seed);
    const auto after = forward(trained, split.train[0].image, replay);
    CHECK(emitted > softmax_cross_entropy(after.logits, split.train[0].one_hot).loss);
  }
}

TEST_CASE("same seed gives byte-identical summaries; different seeds differ") {
  const auto split = synthetic_split(6);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batches_per_epoch = 3;
  cfg.batch_size = 2;
  cfg.snapshot_interval = 1;
  cfg.seed = 5;
  cfg.record_wallclock = false;
  const std::string first = run_summary(cfg, split);
  CHECK(first == run_summary(cfg, split));
  cfg.seed = 6;
  CHECK(first != run_summary(cfg, split));
}

TEST_CASE("training preconditions") {
  TrainConfig cfg;
  CHECK(kind_of([&] { fit_model(build_bellcnn(tiny_config()), DatasetSplit{}, cfg); }) == ErrorKind::EmptyTrainSet);
  CHECK(kind_of([&] { fit_model(build_bellcnn({}), synthetic_split(2), cfg); }) == ErrorKind::ShapeMismatch);
  cfg.batch_size = 0;
  CHECK(kind_of([&] { fit_model(build_bellcnn(tiny_config()), synthetic_split(2), cfg); }) == ErrorKind::BadConfig);
}

TEST_CASE("summary CSV writer is append-only and parseable after every row") {
  scratch::Dir dir("csv");
  const auto path = dir / "summary.csv";
  SummaryCsvWriter writer(path);
  std::vector<TrainingSummaryRow> rows;
  for (std::uint64_t i = 1; i <= 5; ++i) {
    const TrainingSummaryRow row{i * 10, i, 1.0 / static_cast<double>(i), 0.5, static_cast<std::int64_t>(i * 3)};
    writer.write(row);
    rows.push_back(row);
    std::istringstream in(scratch::slurp(path));
    const auto parsed = parse_summary_csv(in);
    REQUIRE(parsed.size() == i);
    CHECK(parsed.back().step == row.step);
    CHECK(parsed.back().loss == row.loss);
    CHECK(parsed.back().wallclock_ms == row.wallclock_ms);
  }
  CHECK(scratch::slurp(path).rfind("step,epoch,loss,accuracy,wallclock_ms\n10,1,1,0.5,3\n", 0) == 0);
  std::istringstream bad("step,loss\n");
  CHECK(kind_of([&] { parse_summary_csv(bad); }) == ErrorKind::MissingColumn);
}

TEST_CASE("evaluation accuracy and report") {
  auto split = synthetic_split(4);
  for (auto& e : split.train) e = make_example(e.image, 0, e.subject_id);
  const ModelGraph always_control = constant_model(0);
  CHECK(evaluate(always_control, split.train).accuracy == 1.0);
  split.train[1] = make_example(split.train[1].image, 1, split.train[1].subject_id);
  split.train[3] = make_example(split.train[3].image, 1, split.train[3].subject_id);
  const auto report = evaluate(always_control, split.train);
  CHECK(report.accuracy == 0.5);
  CHECK(format_evaluation(report) == "accuracy 0.5\nS0 P=C T=0\nS1 P=C T=1\nS2 P=C T=0\nS3 P=C T=1\n");
  CHECK(format_evaluation(evaluate(constant_model(1), split.train)).find("S1 P=A T=1\n") != std::string::npos);
  CHECK(kind_of([&] { evaluate(always_control, {}); }) == ErrorKind::Empty);

  const ModelGraph g = build_bellcnn(tiny_config(3));
  const auto a = evaluate(g, split.train), b = evaluate(g, split.train);
  CHECK(a.accuracy == b.accuracy);
  CHECK(format_evaluation(a) == format_evaluation(b));
}
