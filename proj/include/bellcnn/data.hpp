#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bellcnn/tensor.hpp"

namespace bellcnn {

inline constexpr std::size_t kControl = 0;
inline constexpr std::size_t kAlzheimer = 1;

/// One row of the study metadata CSV.
struct SubjectRecord {
  std::string id;
  int age = 0;
  std::optional<double> cdr;  // one of 0, 0.5, 1, 2, 3
  std::optional<int> mmse;
  std::vector<std::pair<std::string, std::string>> extra;  // remaining columns, file order
};

/// Requires columns ID, Age, CDR (case-sensitive). Empty CDR/MMSE cells parse as absent.
std::vector<SubjectRecord> parse_metadata_csv(const std::filesystem::path& path);
std::vector<SubjectRecord> parse_metadata_csv(std::istream& in);

void write_metadata_csv(std::ostream& out, const std::vector<SubjectRecord>& records);

/// CDR 0 or absent -> Control (0); CDR > 0 -> AD (1).
std::size_t label_from_cdr(const SubjectRecord& record);

Tensor one_hot(std::size_t label, std::size_t num_classes);

/// Demented subjects tallied by age band (60-69, 70-79, 80-89, 90-96) and CDR 0.5/1/2.
struct DemographicsRow {
  std::string band;
  std::size_t total = 0;
  std::size_t cdr_half = 0;
  std::size_t cdr_one = 0;
  std::size_t cdr_two = 0;
};
std::vector<DemographicsRow> demented_demographics(const std::vector<SubjectRecord>& records);

/// Binary PGM (P5, maxval 255) -> [target_h, target_w, 1] in [0, 1]. Larger sources
/// are center-cropped, smaller ones zero-padded (offset = difference / 2, floored).
Tensor decode_pgm(std::span<const std::uint8_t> bytes, std::size_t target_w, std::size_t target_h);
Tensor load_image(const std::filesystem::path& path, std::size_t target_w, std::size_t target_h);

std::vector<std::uint8_t> encode_pgm(std::size_t width, std::size_t height, std::span<const std::uint8_t> pixels);
void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               std::span<const std::uint8_t> pixels);

struct LabeledExample {
  Tensor image;
  std::size_t label = kControl;
  Tensor one_hot;
  std::string subject_id;
  std::string image_path;
};

LabeledExample make_example(Tensor image, std::size_t label, std::string subject_id, std::string image_path = {});

struct DatasetSplit {
  std::vector<LabeledExample> train;
  std::vector<LabeledExample> test;
  std::uint64_t seed = 0;
  double test_fraction = 0.2;
};

/// Subject-level partition. Subjects are permuted with the seed; the first
/// round(test_fraction * n) (at least 1, at most n - 1 when n > 1) go to test.
struct SubjectPartition {
  std::vector<std::string> train_subjects;  // permuted order
  std::vector<std::string> test_subjects;
};
SubjectPartition partition_subjects(const std::vector<std::string>& subject_ids, std::uint64_t seed,
                                    double test_fraction);

DatasetSplit shuffle_split(const std::vector<LabeledExample>& examples, std::uint64_t seed, double test_fraction);

struct ManifestEntry {
  std::string subject_id;
  std::string image_path;
  std::size_t label = kControl;
  bool test = false;
  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

/// `subject_id<TAB>image_path<TAB>label<TAB>{train|test}` per line; train lines first.
std::string format_manifest(const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> parse_manifest(std::istream& in);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> manifest_of(const DatasetSplit& split);

/// Pairs every metadata record with the PGM files in image_dir whose name starts with
/// the subject ID (followed by a non-alphanumeric character), then splits by subject.
std::vector<ManifestEntry> build_manifest(const std::vector<SubjectRecord>& records,
                                          const std::filesystem::path& image_dir, std::uint64_t seed,
                                          double test_fraction);

/// Loads the images for the entries flagged test == want_test.
std::vector<LabeledExample> load_examples(const std::vector<ManifestEntry>& entries, bool want_test,
                                          std::size_t target_w, std::size_t target_h);

}  // namespace bellcnn
