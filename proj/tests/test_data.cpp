#include "doctest.h"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "bellcnn/data.hpp"
#include "bellcnn/error.hpp"
#include "bellcnn/random.hpp"
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

std::vector<SubjectRecord> parse_text(const std::string& text) {
  std::istringstream in(text);
  return parse_metadata_csv(in);
}

std::vector<LabeledExample> examples_for(std::size_t subjects, std::size_t per_subject) {
  std::vector<LabeledExample> out;
  for (std::size_t s = 0; s < subjects; ++s)
    for (std::size_t k = 0; k < per_subject; ++k)
      out.push_back(make_example(Tensor(Shape{2, 2, 1}, 0.5), s % 2, "S" + std::to_string(s),
                                 "S" + std::to_string(s) + "_" + std::to_string(k) + ".pgm"));
  return out;
}

std::multiset<std::string> subject_multiset(const std::vector<LabeledExample>& examples) {
  std::multiset<std::string> ids;
  for (const auto& e : examples) ids.insert(e.subject_id);
  return ids;
}

}  // namespace

TEST_CASE("demographics fixture reproduces the demented cohort") {
  const auto records = parse_metadata_csv(std::filesystem::path(BELLCNN_FIXTURE_DIR) / "oasis_demographics.csv");
  CHECK(records.size() == 416);
  std::size_t demented = 0, half = 0, one = 0, two = 0, absent = 0;
  for (const auto& r : records) {
    if (!r.cdr) ++absent;
    if (r.cdr && *r.cdr > 0) {
      ++demented;
      half += *r.cdr == 0.5;
      one += *r.cdr == 1.0;
      two += *r.cdr == 2.0;
    }
  }
  CHECK(demented == 100);
  CHECK(half == 70);
  CHECK(one == 28);
  CHECK(two == 2);
  CHECK(absent == 218);

  const auto rows = demented_demographics(records);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].total == 15);
  CHECK(rows[1].total == 48);
  CHECK(rows[2].total == 32);
  CHECK(rows[3].total == 5);
  CHECK(rows[1].cdr_half == 32);
  CHECK(rows[1].cdr_one == 15);
  CHECK(rows[1].cdr_two == 1);
}

TEST_CASE("metadata parsing: absent values, extra columns, errors") {
  const auto records = parse_text("Hand,ID,Age,CDR,MMSE\nR,A1,25,,\nL,A2,71,0.5,27\n");
  REQUIRE(records.size() == 2);
  CHECK(records[0].id == "A1");
  CHECK(!records[0].cdr.has_value());
  CHECK(!records[0].mmse.has_value());
  CHECK(records[0].extra == std::vector<std::pair<std::string, std::string>>{{"Hand", "R"}});
  CHECK(*records[1].cdr == 0.5);
  CHECK(*records[1].mmse == 27);

  CHECK(kind_of([] { parse_text("ID,Age,CDR\nA,70,0.7\n"); }) == ErrorKind::BadValue);
  CHECK(kind_of([] { parse_text("ID,Age\nA,70\n"); }) == ErrorKind::MissingColumn);
  CHECK(kind_of([] { parse_text("ID,Age,CDR\nA,-3,0\n"); }) == ErrorKind::BadValue);
  CHECK(kind_of([] { parse_text("id,Age,CDR\nA,3,0\n"); }) == ErrorKind::MissingColumn);
  try {
    parse_text("ID,Age,CDR\nA,70,0\nB,71,1.5\n");
    FAIL("expected BadValue");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    CHECK(std::string(e.what()).find("CDR") != std::string::npos);
  }
}

TEST_CASE("metadata round trip preserves rows and required columns") {
  const auto records = parse_metadata_csv(std::filesystem::path(BELLCNN_FIXTURE_DIR) / "oasis_demographics.csv");
  std::ostringstream out;
  write_metadata_csv(out, records);
  const auto again = parse_text(out.str());
  REQUIRE(again.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(again[i].id == records[i].id);
    CHECK(again[i].age == records[i].age);
    CHECK(again[i].cdr == records[i].cdr);
    CHECK(again[i].mmse == records[i].mmse);
    CHECK(again[i].extra == records[i].extra);
  }
}

TEST_CASE("labeling rule") {
  SubjectRecord r;
  r.cdr = 0.0;
  CHECK(label_from_cdr(r) == kControl);
  for (double cdr : {0.5, 1.0, 2.0, 3.0}) {
    r.cdr = cdr;
    CHECK(label_from_cdr(r) == kAlzheimer);
  }
  r.cdr.reset();
  r.age = 25;
  CHECK(label_from_cdr(r) == kControl);
}

TEST_CASE("one-hot encoding") {
  CHECK(one_hot(0, 2).values() == std::vector<double>{1, 0});
  CHECK(one_hot(1, 2).values() == std::vector<double>{0, 1});
  CHECK(kind_of([] { one_hot(2, 2); }) == ErrorKind::OutOfRange);
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t k = 1 + uniform_below(rng, 9), label = uniform_below(rng, k);
    const Tensor t = one_hot(label, k);
    CHECK(std::count(t.values().begin(), t.values().end(), 1.0) == 1);
    CHECK(std::count(t.values().begin(), t.values().end(), 0.0) == static_cast<long>(k - 1));
    CHECK(t[label] == 1.0);
  }
}

TEST_CASE("PGM decoding examples") {
  const std::vector<std::uint8_t> pixels{0, 255, 128, 64};
  const Tensor t = decode_pgm(encode_pgm(2, 2, pixels), 2, 2);
  CHECK(t.shape() == Shape{2, 2, 1});
  CHECK(t.values() == std::vector<double>{0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0});
  CHECK(t[2] == doctest::Approx(0.50196).epsilon(1e-5));

  const std::vector<std::uint8_t> zeros(9, 0);
  const Tensor blank = decode_pgm(encode_pgm(3, 3, zeros), 3, 3);
  for (double v : blank.values()) CHECK(v == 0.0);

  // Header comments and arbitrary whitespace are accepted.
  const std::string commented = "P5\n# scanner slice\n2 1\n255\n";
  std::vector<std::uint8_t> bytes(commented.begin(), commented.end());
  bytes.push_back(51);
  bytes.push_back(102);
  CHECK(decode_pgm(bytes, 2, 1).values() == std::vector<double>{0.2, 0.4});
}

TEST_CASE("PGM decoding errors") {
  const std::string p2 = "P2\n1 1\n255\n0\n";
  CHECK(kind_of([&] { decode_pgm(std::vector<std::uint8_t>(p2.begin(), p2.end()), 1, 1); }) == ErrorKind::BadMagic);
  auto bytes = encode_pgm(2, 2, std::vector<std::uint8_t>{1, 2, 3, 4});
  bytes.pop_back();
  CHECK(kind_of([&] { decode_pgm(bytes, 2, 2); }) == ErrorKind::TruncatedFile);
  const std::string header_only = "P5\n2 2";
  CHECK(kind_of([&] { decode_pgm(std::vector<std::uint8_t>(header_only.begin(), header_only.end()), 2, 2); }) ==
        ErrorKind::TruncatedFile);
  const std::string zero_width = "P5\n0 2\n255\n";
  CHECK(kind_of([&] { decode_pgm(std::vector<std::uint8_t>(zero_width.begin(), zero_width.end()), 2, 2); }) ==
        ErrorKind::BadDimensions);
  const std::string deep = "P5\n1 1\n65535\n\x01\x02";
  CHECK(kind_of([&] { decode_pgm(std::vector<std::uint8_t>(deep.begin(), deep.end()), 1, 1); }) == ErrorKind::BadMagic);
}

TEST_CASE("center crop follows index arithmetic on a coordinate-valued image") {
  // pixel(r, c) encodes (r + c) mod 256 so every output pixel identifies its source.
  constexpr std::size_t source = 100, target = 64;
  std::vector<std::uint8_t> pixels(source * source);
  for (std::size_t r = 0; r < source; ++r)
    for (std::size_t c = 0; c < source; ++c) pixels[r * source + c] = static_cast<std::uint8_t>((r * 7 + c) % 256);
  const Tensor t = decode_pgm(encode_pgm(source, source, pixels), target, target);
  CHECK(t.shape() == Shape{64, 64, 1});
  const std::size_t offset = (source - target) / 2;
  auto expect = [&](std::size_t r, std::size_t c) {
    return static_cast<double>((((r + offset) * 7) + (c + offset)) % 256) / 255.0;
  };
  CHECK(t.at(0, 0, 0) == expect(0, 0));
  CHECK(t.at(0, 63, 0) == expect(0, 63));
  CHECK(t.at(63, 0, 0) == expect(63, 0));
  CHECK(t.at(63, 63, 0) == expect(63, 63));
  for (std::size_t r = 0; r < target; ++r)
    for (std::size_t c = 0; c < target; ++c) REQUIRE(t.at(r, c, 0) == expect(r, c));
}

TEST_CASE("smaller images are zero padded around the centre") {
  const std::vector<std::uint8_t> pixels{255, 255, 255, 255};
  const Tensor t = decode_pgm(encode_pgm(2, 2, pixels), 5, 4);
  CHECK(t.shape() == Shape{4, 5, 1});
  double total = 0.0;
  for (double v : t.values()) total += v;
  CHECK(total == 4.0);
  CHECK(t.at(1, 1, 0) == 1.0);
  CHECK(t.at(2, 2, 0) == 1.0);
  CHECK(t.at(0, 0, 0) == 0.0);
  CHECK(t.at(1, 3, 0) == 0.0);
}

TEST_CASE("load_image reads PGM files") {
  scratch::Dir dir("data");
  write_pgm(dir / "a.pgm", 2, 2, std::vector<std::uint8_t>{0, 255, 128, 64});
  CHECK(load_image(dir / "a.pgm", 2, 2).values() == std::vector<double>{0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0});
  CHECK(kind_of([&] { load_image(dir / "missing.pgm", 2, 2); }) == ErrorKind::IoFailure);
}

TEST_CASE("examples carry a consistent one-hot and bounded pixels") {
  const auto e = make_example(Tensor(Shape{2, 2, 1}, 0.25), 1, "S");
  CHECK(e.one_hot.values() == std::vector<double>{0, 1});
  CHECK(kind_of([] { make_example(Tensor(Shape{1, 1, 1}, 1.5), 0, "S"); }) == ErrorKind::BadValue);
  CHECK(kind_of([] { make_example(Tensor(Shape{1, 1, 1}, 0.5), 2, "S"); }) == ErrorKind::OutOfRange);
}

TEST_CASE("shuffle_split examples") {
  const auto examples = examples_for(10, 1);
  const auto split = shuffle_split(examples, 42, 0.2);
  CHECK(split.test.size() == 2);
  CHECK(split.train.size() == 8);
  std::set<std::string> train_ids, test_ids;
  for (const auto& e : split.train) train_ids.insert(e.subject_id);
  for (const auto& e : split.test) test_ids.insert(e.subject_id);
  for (const auto& id : test_ids) CHECK(train_ids.count(id) == 0);

  const auto again = shuffle_split(examples, 42, 0.2);
  CHECK(format_manifest(manifest_of(split)) == format_manifest(manifest_of(again)));

  const auto hundred = examples_for(100, 1);
  CHECK(format_manifest(manifest_of(shuffle_split(hundred, 7, 0.2))) !=
        format_manifest(manifest_of(shuffle_split(hundred, 8, 0.2))));

  CHECK(kind_of([] { shuffle_split({}, 1, 0.2); }) == ErrorKind::Empty);
  CHECK(kind_of([&] { shuffle_split(examples, 1, 1.0); }) == ErrorKind::BadConfig);
}

TEST_CASE("split is a subject-level partition for many slices per subject") {
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t subjects = 1 + uniform_below(rng, 30), per = 1 + uniform_below(rng, 4);
    const auto examples = examples_for(subjects, per);
    const double fraction = 0.05 + 0.9 * uniform01(rng);
    const auto split = shuffle_split(examples, trial, fraction);
    CHECK(split.test.size() >= 1);
    std::multiset<std::string> joined = subject_multiset(split.train);
    for (const auto& id : subject_multiset(split.test)) joined.insert(id);
    CHECK(joined == subject_multiset(examples));
    std::set<std::string> train_ids;
    for (const auto& e : split.train) train_ids.insert(e.subject_id);
    for (const auto& e : split.test) CHECK(train_ids.count(e.subject_id) == 0);
  }
}

TEST_CASE("manifest format and round trip") {
  std::vector<ManifestEntry> entries{{"B", "img/b.pgm", 1, true}, {"A", "img/a.pgm", 0, false}};
  const std::string text = format_manifest(entries);
  CHECK(text == "A\timg/a.pgm\t0\ttrain\nB\timg/b.pgm\t1\ttest\n");
  std::istringstream in(text);
  const auto parsed = parse_manifest(in);
  REQUIRE(parsed.size() == 2);
  CHECK(parsed[0] == entries[1]);
  CHECK(parsed[1] == entries[0]);
  std::istringstream bad("A\timg\t2\ttrain\n");
  CHECK(kind_of([&] { parse_manifest(bad); }) == ErrorKind::BadValue);
}

TEST_CASE("build_manifest pairs subjects with their image files") {
  scratch::Dir dir("manifest");
  const std::vector<std::uint8_t> px(4, 10);
  for (const char* name : {"S1_a.pgm", "S1_b.pgm", "S2.pgm", "S10_a.pgm", "S3_a.pgm", "notes.txt"})
    write_pgm(dir / name, 2, 2, px);
  const auto records = parse_text("ID,Age,CDR\nS1,70,0.5\nS2,30,\nS10,80,0\nS4,60,1\n");
  const auto entries = build_manifest(records, dir.path(), 5, 0.3);
  REQUIRE(entries.size() == 4);
  std::map<std::string, std::size_t> per_subject;
  for (const auto& e : entries) {
    ++per_subject[e.subject_id];
    CHECK(e.label == (e.subject_id == "S1" ? kAlzheimer : kControl));
  }
  CHECK(per_subject == std::map<std::string, std::size_t>{{"S1", 2}, {"S10", 1}, {"S2", 1}});
  CHECK(format_manifest(entries) == format_manifest(build_manifest(records, dir.path(), 5, 0.3)));

  const auto train = load_examples(entries, false, 2, 2);
  const auto test = load_examples(entries, true, 2, 2);
  CHECK(train.size() + test.size() == 4);
  CHECK(!test.empty());
}
