#include "bellcnn/freeze.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "bellcnn/digest.hpp"
#include "bellcnn/error.hpp"

namespace bellcnn {
namespace {

constexpr std::uint8_t kMagic[4] = {'B', 'C', 'N', 'N'};
constexpr std::size_t kHeaderBytes = 12;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[at + i]) << (8 * i);
  return v;
}

void put_tensor(std::vector<std::uint8_t>& out, const Tensor& t) {
  for (double v : t.data()) {
    const float f = static_cast<float>(v);
    if (!std::isfinite(f)) throw Error(ErrorKind::NonFiniteParameter, "parameter is not finite at binary32");
    put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

struct LayerRecord {
  std::string kind;
  std::map<std::string, std::string> fields;
};

Error mismatch(const std::string& what) { return Error(ErrorKind::DescriptorBlobMismatch, what); }

std::size_t field_uint(const LayerRecord& rec, const std::string& key) {
  auto it = rec.fields.find(key);
  if (it == rec.fields.end()) throw mismatch("descriptor line '" + rec.kind + "' lacks " + key + "=");
  std::size_t v = 0;
  const std::string& s = it->second;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw mismatch("bad value for " + key + "= '" + s + "'");
  return v;
}

Shape field_shape(const LayerRecord& rec, const std::string& key) {
  auto it = rec.fields.find(key);
  if (it == rec.fields.end()) throw mismatch("descriptor line '" + rec.kind + "' lacks " + key + "=");
  try {
    return Shape::parse(it->second);
  } catch (const Error& e) {
    throw mismatch(e.what());
  }
}

std::vector<LayerRecord> parse_descriptor(const std::string& text) {
  std::vector<LayerRecord> records;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    std::istringstream tokens(line);
    LayerRecord rec;
    tokens >> rec.kind;
    std::string token;
    while (tokens >> token) {
      const auto eq = token.find('=');
      if (eq == std::string::npos) throw mismatch("malformed descriptor token '" + token + "'");
      rec.fields[token.substr(0, eq)] = token.substr(eq + 1);
    }
    records.push_back(std::move(rec));
  }
  if (records.empty()) throw mismatch("descriptor lists no layers");
  return records;
}

Tensor take_tensor(const Shape& shape, std::span<const std::uint8_t> bytes, std::size_t& at) {
  Tensor t(shape);
  for (double& v : t.data()) {
    v = static_cast<double>(std::bit_cast<float>(get_u32(bytes, at)));
    at += 4;
  }
  return t;
}

}  // namespace

std::string graph_descriptor(const ModelGraph& g) {
  std::string out;
  for (const GraphLayer& layer : g.layers()) {
    std::size_t k = 0, f = 0, s = 0, p = 0;
    std::string extra;
    if (auto* c = std::get_if<ConvLayer>(&layer.op)) {
      k = c->geom.filters, f = c->geom.extent, s = c->geom.stride, p = c->geom.padding;
    } else if (auto* pool = std::get_if<PoolLayer>(&layer.op)) {
      f = pool->window, s = pool->stride;
    } else if (auto* d = std::get_if<DenseLayer>(&layer.op)) {
      k = d->out_units;
    } else if (auto* drop = std::get_if<DropoutLayer>(&layer.op)) {
      extra = " keep=" + format_double(drop->keep_prob);
    }
    out += std::string(layer.kind_name()) + " k=" + std::to_string(k) + " f=" + std::to_string(f) +
           " s=" + std::to_string(s) + " p=" + std::to_string(p) + " in=" + layer.in_shape.str() +
           " out=" + layer.out_shape.str() + " act=" + std::string(to_string(layer.act)) + extra + "\n";
  }
  return out;
}

std::vector<std::uint8_t> serialize(const ModelGraph& g) {
  const std::string descriptor = graph_descriptor(g);
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kFrozenFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(descriptor.size()));
  out.insert(out.end(), descriptor.begin(), descriptor.end());
  out.reserve(out.size() + 4 * g.parameter_count() + 4);
  for (const Tensor* t : g.parameters()) put_tensor(out, *t);
  put_u32(out, crc32(out));
  return out;
}

ModelGraph deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= 4 && !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin()))
    throw Error(ErrorKind::BadMagic, "container does not start with BCNN");
  if (bytes.size() < kHeaderBytes + 4) throw Error(ErrorKind::TruncatedFile, "container shorter than its header");
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kFrozenFormatVersion)
    throw Error(ErrorKind::UnsupportedVersion, "container version " + std::to_string(version) + " is not supported");
  const std::size_t descriptor_len = get_u32(bytes, 8);
  if (kHeaderBytes + descriptor_len + 4 > bytes.size())
    throw Error(ErrorKind::TruncatedFile, "descriptor runs past end of container");

  const std::size_t body = bytes.size() - 4;
  if (crc32(bytes.first(body)) != get_u32(bytes, body))
    throw Error(ErrorKind::ChecksumMismatch, "CRC-32 does not match container contents");

  const std::string descriptor(reinterpret_cast<const char*>(bytes.data() + kHeaderBytes), descriptor_len);
  std::vector<GraphLayer> layers;
  std::size_t blob_bytes = 0;
  for (const LayerRecord& rec : parse_descriptor(descriptor)) {
    GraphLayer layer;
    layer.in_shape = field_shape(rec, "in");
    layer.out_shape = field_shape(rec, "out");
    auto act = rec.fields.find("act");
    if (act == rec.fields.end()) throw mismatch("descriptor line '" + rec.kind + "' lacks act=");
    try {
      layer.act = parse_activation(act->second);
    } catch (const Error& e) {
      throw mismatch(e.what());
    }

    if (rec.kind == "conv") {
      if (layer.in_shape.rank() != 3) throw mismatch("conv input must be rank 3");
      const ConvGeometry geom{field_uint(rec, "k"), field_uint(rec, "f"), field_uint(rec, "s"), field_uint(rec, "p")};
      if (geom.filters == 0 || geom.extent == 0 || geom.stride == 0) throw mismatch("degenerate conv geometry");
      ConvLayer conv;
      conv.geom = geom;
      conv.in_depth = layer.in_shape[2];
      blob_bytes += 4 * (geom.extent * geom.extent * conv.in_depth * geom.filters + geom.filters);
      layer.op = std::move(conv);
    } else if (rec.kind == "pool") {
      layer.op = PoolLayer{field_uint(rec, "f"), field_uint(rec, "s")};
    } else if (rec.kind == "flatten") {
      layer.op = FlattenLayer{};
    } else if (rec.kind == "dense") {
      DenseLayer dense;
      dense.in_units = layer.in_shape.count();
      dense.out_units = field_uint(rec, "k");
      if (dense.out_units == 0) throw mismatch("dense layer with zero units");
      blob_bytes += 4 * (dense.in_units * dense.out_units + dense.out_units);
      layer.op = std::move(dense);
    } else if (rec.kind == "dropout") {
      auto keep = rec.fields.find("keep");
      if (keep == rec.fields.end()) throw mismatch("dropout line lacks keep=");
      double keep_prob = 0.0;
      const std::string& s = keep->second;
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), keep_prob);
      if (ec != std::errc() || ptr != s.data() + s.size()) throw mismatch("bad keep= value '" + s + "'");
      layer.op = DropoutLayer{keep_prob, Mode::Infer};
    } else {
      throw mismatch("unknown layer kind '" + rec.kind + "'");
    }
    layers.push_back(std::move(layer));
  }

  const std::size_t blob_start = kHeaderBytes + descriptor_len;
  if (body - blob_start != blob_bytes)
    throw mismatch("descriptor implies " + std::to_string(blob_bytes) + " blob bytes, container holds " +
                   std::to_string(body - blob_start));

  std::size_t at = blob_start;
  for (GraphLayer& layer : layers) {
    if (auto* c = std::get_if<ConvLayer>(&layer.op)) {
      c->weights = take_tensor(Shape{c->geom.extent, c->geom.extent, c->in_depth, c->geom.filters}, bytes, at);
      c->bias = take_tensor(Shape{c->geom.filters}, bytes, at);
    } else if (auto* d = std::get_if<DenseLayer>(&layer.op)) {
      d->weights = take_tensor(Shape{d->in_units, d->out_units}, bytes, at);
      d->bias = take_tensor(Shape{d->out_units}, bytes, at);
    }
  }

  ModelGraph g;
  try {
    g = ModelGraph(std::move(layers), 0);
  } catch (const Error& e) {
    throw mismatch(e.what());
  }
  g.mark_thawed();
  return g;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoFailure, "cannot open " + path.string());
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + path.string());
}

std::uint32_t freeze(const ModelGraph& g, const std::filesystem::path& path) {
  const auto bytes = serialize(g);
  write_file_bytes(path, bytes);
  return get_u32(bytes, bytes.size() - 4);
}

ModelGraph thaw(const std::filesystem::path& path) { return deserialize(read_file_bytes(path)); }

}  // namespace bellcnn
