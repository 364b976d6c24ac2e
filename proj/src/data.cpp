#include "bellcnn/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>

#include "bellcnn/error.hpp"
#include "bellcnn/random.hpp"

namespace bellcnn {
namespace {

std::vector<std::string> split_fields(const std::string& line, char sep) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) fields.push_back(field);
  if (!line.empty() && line.back() == sep) fields.emplace_back();
  return fields;
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
std::optional<T> parse_number(const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return value;
}

std::string format_number(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

bool is_table_cdr(double v) { return v == 0.0 || v == 0.5 || v == 1.0 || v == 2.0 || v == 3.0; }

Error bad_value(std::size_t line, const std::string& column, const std::string& text) {
  return Error(ErrorKind::BadValue,
               "line " + std::to_string(line) + " column " + column + ": bad value '" + text + "'");
}

}  // namespace

std::vector<SubjectRecord> parse_metadata_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::MissingColumn, "metadata CSV has no header row");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  std::vector<std::string> header = split_fields(line, ',');
  for (auto& h : header) h = trim(h);

  auto column = [&](const std::string& name) -> std::optional<std::size_t> {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto id_col = column("ID"), age_col = column("Age"), cdr_col = column("CDR");
  const auto mmse_col = column("MMSE");
  for (const auto& [name, col] : {std::pair{"ID", id_col}, {"Age", age_col}, {"CDR", cdr_col}})
    if (!col) throw Error(ErrorKind::MissingColumn, std::string("required column '") + name + "' not found");

  std::vector<SubjectRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::vector<std::string> fields = split_fields(line, ',');
    for (auto& f : fields) f = trim(f);
    if (fields.size() != header.size())
      throw Error(ErrorKind::BadValue, "line " + std::to_string(line_no) + ": expected " +
                                           std::to_string(header.size()) + " fields, found " +
                                           std::to_string(fields.size()));

    SubjectRecord rec;
    rec.id = fields[*id_col];
    if (rec.id.empty()) throw bad_value(line_no, "ID", rec.id);

    const auto age = parse_number<int>(fields[*age_col]);
    if (!age || *age < 0) throw bad_value(line_no, "Age", fields[*age_col]);
    rec.age = *age;

    if (!fields[*cdr_col].empty()) {
      const auto cdr = parse_number<double>(fields[*cdr_col]);
      if (!cdr || !is_table_cdr(*cdr)) throw bad_value(line_no, "CDR", fields[*cdr_col]);
      rec.cdr = *cdr;
    }
    if (mmse_col && !fields[*mmse_col].empty()) {
      const auto mmse = parse_number<int>(fields[*mmse_col]);
      if (!mmse) throw bad_value(line_no, "MMSE", fields[*mmse_col]);
      rec.mmse = *mmse;
    }
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (c == *id_col || c == *age_col || c == *cdr_col || (mmse_col && c == *mmse_col)) continue;
      rec.extra.emplace_back(header[c], fields[c]);
    }
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<SubjectRecord> parse_metadata_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoFailure, "cannot open " + path.string());
  return parse_metadata_csv(in);
}

void write_metadata_csv(std::ostream& out, const std::vector<SubjectRecord>& records) {
  out << "ID,Age,CDR,MMSE";
  if (!records.empty())
    for (const auto& [key, value] : records.front().extra) out << ',' << key;
  out << '\n';
  for (const auto& r : records) {
    out << r.id << ',' << r.age << ',' << (r.cdr ? format_number(*r.cdr) : "") << ','
        << (r.mmse ? std::to_string(*r.mmse) : "");
    for (const auto& [key, value] : r.extra) out << ',' << value;
    out << '\n';
  }
}

std::size_t label_from_cdr(const SubjectRecord& record) {
  return record.cdr && *record.cdr > 0.0 ? kAlzheimer : kControl;
}

Tensor one_hot(std::size_t label, std::size_t num_classes) {
  if (label >= num_classes)
    throw Error(ErrorKind::OutOfRange, "label " + std::to_string(label) + " outside " + std::to_string(num_classes) +
                                           " classes");
  Tensor t(Shape{num_classes});
  t[label] = 1.0;
  return t;
}

std::vector<DemographicsRow> demented_demographics(const std::vector<SubjectRecord>& records) {
  std::vector<DemographicsRow> rows{{"60-69"}, {"70-79"}, {"80-89"}, {"90-96"}};
  for (const auto& r : records) {
    if (!r.cdr || *r.cdr <= 0.0) continue;
    if (r.age < 60) continue;
    DemographicsRow& row = rows[std::min<std::size_t>(static_cast<std::size_t>((r.age - 60) / 10), 3)];
    ++row.total;
    if (*r.cdr == 0.5) ++row.cdr_half;
    if (*r.cdr == 1.0) ++row.cdr_one;
    if (*r.cdr == 2.0) ++row.cdr_two;
  }
  return rows;
}

Tensor decode_pgm(std::span<const std::uint8_t> bytes, std::size_t target_w, std::size_t target_h) {
  if (target_w == 0 || target_h == 0) throw Error(ErrorKind::BadDimensions, "target extents must be >= 1");
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
    throw Error(ErrorKind::BadMagic, "not a binary PGM (P5) file");

  std::size_t pos = 2;
  auto next_token = [&]() -> std::string {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string token;
    while (pos < bytes.size() && !std::isspace(bytes[pos]) && bytes[pos] != '#') token += static_cast<char>(bytes[pos++]);
    if (token.empty()) throw Error(ErrorKind::TruncatedFile, "PGM header ends early");
    return token;
  };
  const std::string w_text = next_token(), h_text = next_token(), max_text = next_token();
  const auto width = parse_number<std::size_t>(w_text), height = parse_number<std::size_t>(h_text);
  if (!width || !height || *width == 0 || *height == 0)
    throw Error(ErrorKind::BadDimensions, "bad PGM extents '" + w_text + " " + h_text + "'");
  if (max_text != "255") throw Error(ErrorKind::BadMagic, "only 8-bit PGM (maxval 255) is supported");
  if (pos >= bytes.size()) throw Error(ErrorKind::TruncatedFile, "PGM header ends early");
  ++pos;  // single whitespace before the raster

  const std::size_t src_w = *width, src_h = *height;
  if (bytes.size() - pos < src_w * src_h)
    throw Error(ErrorKind::TruncatedFile, "PGM raster has " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                                              std::to_string(src_w * src_h));
  const std::uint8_t* raster = bytes.data() + pos;

  // out(y) = src(y + crop - pad) along each axis.
  const std::ptrdiff_t shift_y = src_h >= target_h ? static_cast<std::ptrdiff_t>((src_h - target_h) / 2)
                                                   : -static_cast<std::ptrdiff_t>((target_h - src_h) / 2);
  const std::ptrdiff_t shift_x = src_w >= target_w ? static_cast<std::ptrdiff_t>((src_w - target_w) / 2)
                                                   : -static_cast<std::ptrdiff_t>((target_w - src_w) / 2);
  Tensor image(Shape{target_h, target_w, 1});
  for (std::size_t y = 0; y < target_h; ++y) {
    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + shift_y;
    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(src_h)) continue;
    for (std::size_t x = 0; x < target_w; ++x) {
      const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x) + shift_x;
      if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(src_w)) continue;
      image[y * target_w + x] = raster[sy * src_w + sx] / 255.0;
    }
  }
  return image;
}

Tensor load_image(const std::filesystem::path& path, std::size_t target_w, std::size_t target_h) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoFailure, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_pgm(bytes, target_w, target_h);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_pgm(std::size_t width, std::size_t height, std::span<const std::uint8_t> pixels) {
  if (width == 0 || height == 0 || pixels.size() != width * height)
    throw Error(ErrorKind::BadDimensions, "pixel count does not match extents");
  const std::string header = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), pixels.begin(), pixels.end());
  return out;
}

void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               std::span<const std::uint8_t> pixels) {
  const auto bytes = encode_pgm(width, height, pixels);
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + path.string());
}

LabeledExample make_example(Tensor image, std::size_t label, std::string subject_id, std::string image_path) {
  for (double v : image.data())
    if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorKind::BadValue, "pixel values must lie in [0, 1]");
  Tensor encoded = one_hot(label, 2);
  return {std::move(image), label, std::move(encoded), std::move(subject_id), std::move(image_path)};
}

SubjectPartition partition_subjects(const std::vector<std::string>& subject_ids, std::uint64_t seed,
                                    double test_fraction) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw Error(ErrorKind::BadConfig, "test fraction must lie in (0, 1)");
  std::vector<std::string> unique;
  std::set<std::string> seen;
  for (const auto& id : subject_ids)
    if (seen.insert(id).second) unique.push_back(id);
  if (unique.empty()) throw Error(ErrorKind::Empty, "no subjects to split");

  Rng rng(seed);
  shuffle_in_place(unique, rng);
  const std::size_t n = unique.size();
  const std::size_t upper = n > 1 ? n - 1 : 1;
  const auto wanted = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  const std::size_t n_test = std::clamp<std::size_t>(wanted, 1, upper);

  SubjectPartition out;
  out.test_subjects.assign(unique.begin(), unique.begin() + static_cast<std::ptrdiff_t>(n_test));
  out.train_subjects.assign(unique.begin() + static_cast<std::ptrdiff_t>(n_test), unique.end());
  return out;
}

namespace {

/// Items grouped by subject, subjects in the given order, items keeping input order.
template <typename T, typename GetId>
std::vector<T> gather(const std::vector<T>& items, const std::vector<std::string>& subjects, GetId id_of) {
  std::map<std::string, std::vector<const T*>> by_subject;
  for (const auto& item : items) by_subject[id_of(item)].push_back(&item);
  std::vector<T> out;
  for (const auto& s : subjects)
    for (const T* item : by_subject[s]) out.push_back(*item);
  return out;
}

}  // namespace

DatasetSplit shuffle_split(const std::vector<LabeledExample>& examples, std::uint64_t seed, double test_fraction) {
  if (examples.empty()) throw Error(ErrorKind::Empty, "no examples to split");
  std::vector<std::string> ids;
  for (const auto& e : examples) ids.push_back(e.subject_id);
  const SubjectPartition part = partition_subjects(ids, seed, test_fraction);
  auto id_of = [](const LabeledExample& e) { return e.subject_id; };
  return {gather(examples, part.train_subjects, id_of), gather(examples, part.test_subjects, id_of), seed,
          test_fraction};
}

std::string format_manifest(const std::vector<ManifestEntry>& entries) {
  std::string out;
  for (bool test : {false, true})
    for (const auto& e : entries)
      if (e.test == test)
        out += e.subject_id + '\t' + e.image_path + '\t' + std::to_string(e.label) + '\t' + (test ? "test" : "train") + '\n';
  return out;
}

std::vector<ManifestEntry> parse_manifest(std::istream& in) {
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_fields(line, '\t');
    if (fields.size() != 4 || (fields[2] != "0" && fields[2] != "1") || (fields[3] != "train" && fields[3] != "test"))
      throw Error(ErrorKind::BadValue, "manifest line " + std::to_string(line_no) + " is malformed");
    entries.push_back({fields[0], fields[1], fields[2] == "1" ? kAlzheimer : kControl, fields[3] == "test"});
  }
  return entries;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoFailure, "cannot open " + path.string());
  return parse_manifest(in);
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  const std::string text = format_manifest(entries);
  std::ofstream out(path, std::ios::binary);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + path.string());
}

std::vector<ManifestEntry> manifest_of(const DatasetSplit& split) {
  std::vector<ManifestEntry> out;
  for (const auto& e : split.train) out.push_back({e.subject_id, e.image_path, e.label, false});
  for (const auto& e : split.test) out.push_back({e.subject_id, e.image_path, e.label, true});
  return out;
}

std::vector<ManifestEntry> build_manifest(const std::vector<SubjectRecord>& records,
                                          const std::filesystem::path& image_dir, std::uint64_t seed,
                                          double test_fraction) {
  std::vector<std::string> files;
  std::error_code ec;
  for (const auto& entry : std::filesystem::directory_iterator(image_dir, ec))
    if (entry.is_regular_file() && entry.path().extension() == ".pgm") files.push_back(entry.path().filename().string());
  if (ec) throw Error(ErrorKind::IoFailure, "cannot list " + image_dir.string() + ": " + ec.message());
  std::sort(files.begin(), files.end());

  std::vector<ManifestEntry> all;
  std::vector<std::string> ids;
  for (const auto& rec : records) {
    for (const auto& name : files) {
      if (name.compare(0, rec.id.size(), rec.id) != 0) continue;
      if (name.size() > rec.id.size() && std::isalnum(static_cast<unsigned char>(name[rec.id.size()]))) continue;
      all.push_back({rec.id, (image_dir / name).generic_string(), label_from_cdr(rec), false});
      ids.push_back(rec.id);
    }
  }
  if (all.empty()) throw Error(ErrorKind::Empty, "no images in " + image_dir.string() + " match any subject");

  const SubjectPartition part = partition_subjects(ids, seed, test_fraction);
  auto id_of = [](const ManifestEntry& e) { return e.subject_id; };
  std::vector<ManifestEntry> out = gather(all, part.train_subjects, id_of);
  for (auto& e : gather(all, part.test_subjects, id_of)) {
    e.test = true;
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<LabeledExample> load_examples(const std::vector<ManifestEntry>& entries, bool want_test,
                                          std::size_t target_w, std::size_t target_h) {
  std::vector<LabeledExample> out;
  for (const auto& e : entries)
    if (e.test == want_test)
      out.push_back(make_example(load_image(e.image_path, target_w, target_h), e.label, e.subject_id, e.image_path));
  return out;
}

}  // namespace bellcnn
