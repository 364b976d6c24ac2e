#include <CLI11.hpp>

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <fstream>
#include <optional>
#include <string>

#include "bellcnn/data.hpp"
#include "bellcnn/error.hpp"
#include "bellcnn/freeze.hpp"
#include "bellcnn/synthetic.hpp"
#include "bellcnn/train.hpp"
#include "bellcnn/transfer.hpp"

namespace fs = std::filesystem;
using namespace bellcnn;

namespace {

struct WrangleArgs {
  fs::path csv, images, out;
  std::uint64_t seed = 0;
  double test_frac = 0.2;
};

struct TrainArgs {
  fs::path manifest, out, summary;
  std::optional<fs::path> snapshot_dir;
  std::uint64_t epochs = 100, batches = 7, batch_size = 0, seed = 0, snapshot_every = 100, max_steps = 0;
  double alpha = AdamHyper{}.alpha;
  std::size_t width = 64, height = 64;
  std::string fc_activation = "softmax";
  bool no_wallclock = false;
};

struct HeadArgs {
  fs::path manifest, trunk, cache, out;
  std::uint64_t steps = 500;
  double alpha = AdamHyper{}.alpha;
};

struct InferArgs {
  fs::path model, image;
};

struct EvalArgs {
  fs::path model, manifest;
  std::string split = "test";
};

struct SummarizeArgs {
  fs::path summary, out;
  double factor = 0.9;
};

struct SynthArgs {
  fs::path out;
  std::size_t subjects = 14, slices = 1, width = 64, height = 64;
  std::uint64_t seed = 0;
};

int run_wrangle(const WrangleArgs& a) {
  const auto records = parse_metadata_csv(a.csv);
  const auto entries = build_manifest(records, a.images, a.seed, a.test_frac);
  write_manifest(a.out, entries);
  std::size_t test = 0;
  for (const auto& e : entries) test += e.test;
  std::cout << "wrote " << entries.size() << " entries (" << entries.size() - test << " train, " << test
            << " test) to " << a.out.string() << '\n';
  return 0;
}

int run_train(const TrainArgs& a) {
  const auto entries = read_manifest(a.manifest);
  DatasetSplit split;
  split.train = load_examples(entries, false, a.width, a.height);

  BellConfig bc;
  bc.input_w = a.width;
  bc.input_h = a.height;
  bc.fc_activation = parse_activation(a.fc_activation);
  bc.seed = a.seed;

  TrainConfig tc;
  tc.epochs = a.epochs;
  tc.batches_per_epoch = a.batches;
  tc.batch_size = a.batch_size;
  tc.snapshot_interval = a.snapshot_every;
  tc.seed = a.seed;
  tc.adam.alpha = a.alpha;
  tc.record_wallclock = !a.no_wallclock;
  tc.step_limit = a.max_steps;

  const fs::path snapshots = a.snapshot_dir ? *a.snapshot_dir : a.out.parent_path() / "snapshots";
  SummarySink sink = snapshot_sink(snapshots);
  std::optional<SummaryCsvWriter> writer;
  if (!a.summary.empty()) writer.emplace(a.summary);
  sink.on_row = [&](const TrainingSummaryRow& row) {
    if (writer) writer->write(row);
    std::cout << "step " << row.step << " epoch " << row.epoch << " loss " << row.loss << " accuracy " << row.accuracy
              << '\n';
  };

  const ModelGraph trained = fit_model(build_bellcnn(bc), split, tc, sink);
  const std::uint32_t crc = freeze(trained, a.out);
  char crc_text[9];
  std::snprintf(crc_text, sizeof crc_text, "%08x", crc);
  std::cout << "froze " << trained.parameter_count() << " parameters to " << a.out.string() << " crc32 " << crc_text
            << '\n';
  return 0;
}

int run_retrain_head(const HeadArgs& a) {
  const ModelGraph trunk_graph = thaw(a.trunk);
  const Trunk base = make_flatten_trunk(trunk_graph);
  auto evaluations = std::make_shared<std::atomic<std::size_t>>(0);
  const Trunk trunk{base.id, [base, evaluations](const Tensor& x) {
                      ++*evaluations;
                      return base.extract(x);
                    }};

  const auto entries = read_manifest(a.manifest);
  const Shape input = trunk_graph.input_shape();
  std::vector<BottleneckInput> inputs;
  std::vector<std::size_t> labels;
  for (const auto& e : entries) {
    if (e.test) continue;
    const auto bytes = read_file_bytes(e.image_path);
    inputs.push_back({content_key(bytes), decode_pgm(bytes, input[1], input[0])});
    labels.push_back(e.label);
  }

  BottleneckCache cache(a.cache);
  const auto vectors = cache_bottlenecks(inputs, trunk, cache);
  std::vector<LabeledFeatures> set;
  for (std::size_t i = 0; i < vectors.size(); ++i) set.push_back({vectors[i].features, labels[i]});

  const HeadModel head = train_head(set, AdamHyper{a.alpha}, a.steps);
  std::size_t correct = 0;
  for (const auto& s : set) correct += head_predict(head, s.features) == s.label;
  freeze(attach_head(trunk_graph, head), a.out);
  std::cout << "trunk " << trunk.id << ": " << *evaluations << " bottlenecks computed, "
            << vectors.size() - *evaluations << " cached\n"
            << "head trained " << head.trained_steps << " steps, train accuracy "
            << static_cast<double>(correct) / static_cast<double>(set.size()) << '\n'
            << "wrote " << a.out.string() << '\n';
  return 0;
}

int run_infer(const InferArgs& a) {
  const ModelGraph g = thaw(a.model);
  const Shape input = g.input_shape();
  const Prediction p = predict(g, load_image(a.image, input[1], input[0]));
  std::cout << format_scores(labeled_scores(p.scores));
  return 0;
}

int run_eval(const EvalArgs& a) {
  const ModelGraph g = thaw(a.model);
  const Shape input = g.input_shape();
  const auto examples = load_examples(read_manifest(a.manifest), a.split == "test", input[1], input[0]);
  std::cout << format_evaluation(evaluate(g, examples));
  return 0;
}

int run_summarize(const SummarizeArgs& a) {
  std::ifstream in(a.summary);
  if (!in) throw Error(ErrorKind::IoFailure, "cannot open " + a.summary.string());
  const auto rows = parse_summary_csv(in);
  write_smoothed_series(rows, a.out, a.factor);
  std::cout << "wrote " << (a.out / "loss.csv").string() << " and " << (a.out / "accuracy.csv").string() << " ("
            << rows.size() << " rows)\n";
  return 0;
}

int run_synth(const SynthArgs& a) {
  fs::create_directories(a.out / "images");
  Rng rng(a.seed);
  std::vector<SubjectRecord> records;
  for (std::size_t s = 0; s < a.subjects; ++s) {
    const std::size_t label = s % 2;
    char id[32];
    std::snprintf(id, sizeof id, "SYN_%04zu", s + 1);
    SubjectRecord rec;
    rec.id = id;
    rec.age = static_cast<int>(60 + uniform_below(rng, 37));
    rec.cdr = label == kAlzheimer ? 1.0 : 0.0;
    records.push_back(rec);
    for (std::size_t k = 0; k < a.slices; ++k) {
      const auto pixels = synthetic_slice_pixels(label, a.width, a.height, rng);
      write_pgm(a.out / "images" / (rec.id + "_" + std::to_string(k + 1) + ".pgm"), a.width, a.height, pixels);
    }
  }
  std::ofstream csv(a.out / "metadata.csv", std::ios::binary);
  write_metadata_csv(csv, records);
  if (!csv) throw Error(ErrorKind::IoFailure, "cannot write metadata.csv");
  std::cout << "wrote " << a.subjects * a.slices << " slices for " << a.subjects << " subjects to "
            << a.out.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BellCNN: train, freeze and run a five-stage CNN for control vs. Alzheimer's MRI slices"};
  app.require_subcommand(1);

  WrangleArgs wrangle;
  auto* w = app.add_subcommand("wrangle", "Build a subject-level train/test manifest");
  w->add_option("--csv", wrangle.csv, "Metadata CSV with ID, Age, CDR columns")->required();
  w->add_option("--images", wrangle.images, "Directory of P5 PGM slices named <ID>_*.pgm")->required();
  w->add_option("--out", wrangle.out, "Manifest to write")->required();
  w->add_option("--seed", wrangle.seed, "Shuffle seed");
  w->add_option("--test-frac", wrangle.test_frac, "Fraction of subjects held out")->check(CLI::Range(0.0, 1.0));

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train BellCNN on the manifest's train split and freeze it");
  t->add_option("--manifest", train.manifest)->required();
  t->add_option("--out", train.out, "Frozen model path")->required();
  t->add_option("--epochs", train.epochs)->check(CLI::PositiveNumber);
  t->add_option("--batches", train.batches, "Batches per epoch")->check(CLI::PositiveNumber);
  t->add_option("--batch-size", train.batch_size)->required()->check(CLI::PositiveNumber);
  t->add_option("--seed", train.seed);
  t->add_option("--summary", train.summary, "Summary CSV path");
  t->add_option("--snapshot-every", train.snapshot_every, "Steps between summaries and snapshots")
      ->check(CLI::PositiveNumber);
  t->add_option("--snapshot-dir", train.snapshot_dir, "Defaults to <dir of --out>/snapshots");
  t->add_option("--max-steps", train.max_steps, "Stop after this global step (0 = run all epochs)");
  t->add_option("--alpha", train.alpha, "Adam learning rate")->check(CLI::PositiveNumber);
  t->add_option("--width", train.width)->check(CLI::PositiveNumber);
  t->add_option("--height", train.height)->check(CLI::PositiveNumber);
  t->add_option("--fc-activation", train.fc_activation)->check(CLI::IsMember({"softmax", "relu"}));
  t->add_flag("--no-wallclock", train.no_wallclock, "Write wallclock_ms as 0 for reproducible summaries");

  HeadArgs head;
  auto* h = app.add_subcommand("retrain-head", "Retrain only the output layer on cached trunk bottlenecks");
  h->add_option("--manifest", head.manifest)->required();
  h->add_option("--trunk", head.trunk, "Frozen model whose layers up to flatten form the trunk")->required();
  h->add_option("--cache", head.cache, "Bottleneck cache directory")->required();
  h->add_option("--out", head.out, "Frozen trunk+head model path")->required();
  h->add_option("--steps", head.steps);
  h->add_option("--alpha", head.alpha)->check(CLI::PositiveNumber);

  InferArgs infer;
  auto* i = app.add_subcommand("infer", "Print labeled confidence scores for one image");
  i->add_option("--model", infer.model)->required();
  i->add_option("--image", infer.image)->required();

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Accuracy and per-image P/T table");
  e->add_option("--model", eval.model)->required();
  e->add_option("--manifest", eval.manifest)->required();
  e->add_option("--split", eval.split)->check(CLI::IsMember({"train", "test"}));

  SummarizeArgs summarize;
  auto* s = app.add_subcommand("summarize", "Write smoothed loss and accuracy series");
  s->add_option("--summary", summarize.summary)->required();
  s->add_option("--out", summarize.out)->required();
  s->add_option("--factor", summarize.factor)->check(CLI::Range(0.0, 1.0));

  SynthArgs synth;
  auto* y = app.add_subcommand("synth", "Write a synthetic slice set and metadata CSV");
  y->add_option("--out", synth.out)->required();
  y->add_option("--subjects", synth.subjects)->check(CLI::PositiveNumber);
  y->add_option("--slices", synth.slices, "Slices per subject")->check(CLI::PositiveNumber);
  y->add_option("--width", synth.width)->check(CLI::PositiveNumber);
  y->add_option("--height", synth.height)->check(CLI::PositiveNumber);
  y->add_option("--seed", synth.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& done) {
    return app.exit(done);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return 2;
  }

  try {
    if (*w) return run_wrangle(wrangle);
    if (*t) return run_train(train);
    if (*h) return run_retrain_head(head);
    if (*i) return run_infer(infer);
    if (*e) return run_eval(eval);
    if (*s) return run_summarize(summarize);
    if (*y) return run_synth(synth);
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return 2;
}
