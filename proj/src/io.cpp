#include "nmsparse/io.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace nmsparse {

const char* to_string(FormatErrorCode code) {
  switch (code) {
    case FormatErrorCode::WrongMagic: return "wrong magic";
    case FormatErrorCode::Truncated: return "truncated payload";
    case FormatErrorCode::TrailingData: return "trailing data";
    case FormatErrorCode::CountMismatch: return "count mismatch";
    case FormatErrorCode::VersionMismatch: return "version mismatch";
    case FormatErrorCode::CorruptIndex: return "corrupt index";
    case FormatErrorCode::ChecksumMismatch: return "checksum mismatch";
    case FormatErrorCode::BadLayout: return "bad layout";
    case FormatErrorCode::Io: return "io error";
  }
  return "unknown";
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrorCode::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw FormatError(FormatErrorCode::Io, "read failed: " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatErrorCode::Io, "cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(FormatErrorCode::Io, "write failed: " + path.string());
}

namespace {

class Writer {
 public:
  template <std::unsigned_integral T>
  void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  template <std::unsigned_integral T>
  void be(T v) {
    for (std::size_t i = sizeof(T); i-- > 0;) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void raw(std::span<const std::uint8_t> b) { bytes_.insert(bytes_.end(), b.begin(), b.end()); }
  void raw(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

  std::size_t size() const { return bytes_.size(); }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(FormatErrorCode::Truncated,
                        std::string(what) + " needs " + std::to_string(n) + " bytes at offset " +
                            std::to_string(pos_) + ", " +
                            std::to_string(bytes_.size() - pos_) + " left");
    }
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  template <std::unsigned_integral T>
  T le(const char* what) {
    auto s = take(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(s[i]) << (8 * i));
    return v;
  }
  template <std::unsigned_integral T>
  T be(const char* what) {
    auto s = take(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v = static_cast<T>((v << 8) | s[i]);
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(le<std::uint64_t>(what)); }
  std::string str(std::size_t n, const char* what) {
    auto s = take(n, what);
    return {s.begin(), s.end()};
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  void expect_end(const char* what) const {
    if (remaining() != 0) {
      throw FormatError(FormatErrorCode::TrailingData,
                        std::to_string(remaining()) + " unexpected bytes after " + what);
    }
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void expect_magic(Reader& r, std::string_view magic, const char* what) {
  const auto got = r.take(magic.size(), what);
  if (!std::equal(got.begin(), got.end(), magic.begin(),
                  [](std::uint8_t a, char b) { return a == static_cast<std::uint8_t>(b); })) {
    throw FormatError(FormatErrorCode::WrongMagic, std::string(what) + ": expected " + std::string(magic));
  }
}

std::uint32_t to_u32(std::size_t v, const char* what) {
  if (v > std::numeric_limits<std::uint32_t>::max()) {
    throw std::invalid_argument(std::string(what) + " does not fit in 32 bits");
  }
  return static_cast<std::uint32_t>(v);
}

std::uint32_t crc(std::span<const std::uint8_t> bytes) {
  uLong c = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - off, 1u << 30);
    c = crc32(c, bytes.data() + off, static_cast<uInt>(n));
    off += n;
  }
  return static_cast<std::uint32_t>(c);
}

}  // namespace

// ---------------------------------------------------------------- IDX

IdxImages parse_idx_images(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.be<std::uint32_t>("image magic");
  if (magic != kIdxImageMagic) {
    throw FormatError(FormatErrorCode::WrongMagic, "image file magic " + std::to_string(magic));
  }
  IdxImages img;
  img.count = r.be<std::uint32_t>("image count");
  img.rows = r.be<std::uint32_t>("image rows");
  img.cols = r.be<std::uint32_t>("image cols");
  const auto payload = r.take(img.count * img.rows * img.cols, "image payload");
  img.pixels.assign(payload.begin(), payload.end());
  r.expect_end("image payload");
  return img;
}

std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.be<std::uint32_t>("label magic");
  if (magic != kIdxLabelMagic) {
    throw FormatError(FormatErrorCode::WrongMagic, "label file magic " + std::to_string(magic));
  }
  const std::size_t count = r.be<std::uint32_t>("label count");
  const auto payload = r.take(count, "label payload");
  r.expect_end("label payload");
  return {payload.begin(), payload.end()};
}

std::vector<std::uint8_t> encode_idx_images(const IdxDataset& data) {
  if (data.images.size() != data.count * data.rows * data.cols) {
    throw std::invalid_argument("encode_idx_images: pixel count does not match shape");
  }
  Writer w;
  w.be(kIdxImageMagic);
  w.be(to_u32(data.count, "count"));
  w.be(to_u32(data.rows, "rows"));
  w.be(to_u32(data.cols, "cols"));
  w.raw(data.images);
  return std::move(w.bytes());
}

std::vector<std::uint8_t> encode_idx_labels(const IdxDataset& data) {
  if (data.labels.size() != data.count) {
    throw std::invalid_argument("encode_idx_labels: label count does not match");
  }
  Writer w;
  w.be(kIdxLabelMagic);
  w.be(to_u32(data.count, "count"));
  w.raw(data.labels);
  return std::move(w.bytes());
}

IdxDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  IdxImages img = parse_idx_images(read_file(images));
  std::vector<std::uint8_t> lab = parse_idx_labels(read_file(labels));
  if (lab.size() != img.count) {
    throw FormatError(FormatErrorCode::CountMismatch,
                      std::to_string(img.count) + " images but " + std::to_string(lab.size()) +
                          " labels");
  }
  return {img.count, img.rows, img.cols, std::move(img.pixels), std::move(lab)};
}

void save_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
              const IdxDataset& data) {
  write_file(images, encode_idx_images(data));
  write_file(labels, encode_idx_labels(data));
}

Dataset to_dataset(const IdxDataset& idx, double mean, double stddev, std::size_t num_classes) {
  if (!(stddev > 0)) throw std::invalid_argument("to_dataset: stddev must be positive");
  Dataset d;
  d.channels = 1;
  d.height = idx.rows;
  d.width = idx.cols;
  d.num_classes = num_classes;
  d.inputs.resize(idx.images.size());
  for (std::size_t i = 0; i < idx.images.size(); ++i) {
    d.inputs[i] = (static_cast<double>(idx.images[i]) / 255.0 - mean) / stddev;
  }
  for (std::uint8_t l : idx.labels) {
    if (l >= num_classes) {
      throw std::invalid_argument("to_dataset: label " + std::to_string(l) + " >= " +
                                  std::to_string(num_classes) + " classes");
    }
  }
  d.labels = idx.labels;
  return d;
}

// ---------------------------------------------------------------- NMSK

std::vector<std::uint8_t> encode_masks(const MaskSet& set) {
  const std::size_t n = pattern_count(set.config);
  Writer w;
  w.raw(std::string("NMSK"));
  w.le(kMaskFileVersion);
  w.le(static_cast<std::uint8_t>(set.config.block_len()));
  w.le(static_cast<std::uint8_t>(set.config.kept()));
  w.le(to_u32(set.layers.size(), "layer count"));
  for (const MaskRecord& rec : set.layers) {
    if (rec.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw std::invalid_argument("encode_masks: layer name too long");
    }
    if (std::size_t{rec.rows} * rec.cols !=
        rec.choices.size() * static_cast<std::size_t>(set.config.block_len())) {
      throw std::invalid_argument("encode_masks: layer " + rec.name + " block count mismatch");
    }
    for (std::uint8_t c : rec.choices) {
      if (c >= n) throw std::invalid_argument("encode_masks: pattern index out of range");
    }
    w.le(static_cast<std::uint16_t>(rec.name.size()));
    w.raw(rec.name);
    w.le(rec.rows);
    w.le(rec.cols);
    w.le(static_cast<std::uint64_t>(rec.choices.size()));
    w.raw(rec.choices);
    w.le(static_cast<std::uint8_t>(rec.mode));
    w.le(rec.seed);
  }
  return std::move(w.bytes());
}

MaskSet decode_masks(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  expect_magic(r, "NMSK", "mask file");
  const auto version = r.le<std::uint16_t>("version");
  if (version != kMaskFileVersion) {
    throw FormatError(FormatErrorCode::VersionMismatch,
                      "mask file version " + std::to_string(version) + ", expected " +
                          std::to_string(kMaskFileVersion));
  }
  const int m = r.le<std::uint8_t>("block length");
  const int k = r.le<std::uint8_t>("kept count");
  MaskSet set;
  try {
    set.config = NmConfig(m, k);
  } catch (const std::invalid_argument& e) {
    throw FormatError(FormatErrorCode::BadLayout, e.what());
  }
  const std::size_t n = pattern_count(set.config);
  const std::uint32_t layers = r.le<std::uint32_t>("layer count");
  for (std::uint32_t i = 0; i < layers; ++i) {
    MaskRecord rec;
    rec.name = r.str(r.le<std::uint16_t>("name length"), "layer name");
    rec.rows = r.le<std::uint32_t>("rows");
    rec.cols = r.le<std::uint32_t>("cols");
    const auto blocks = r.le<std::uint64_t>("block count");
    if (rec.cols % static_cast<std::uint32_t>(m) != 0 ||
        blocks != std::uint64_t{rec.rows} * (rec.cols / static_cast<std::uint32_t>(m))) {
      throw FormatError(FormatErrorCode::CountMismatch,
                        "layer " + rec.name + ": " + std::to_string(blocks) + " blocks for " +
                            std::to_string(rec.rows) + "x" + std::to_string(rec.cols));
    }
    const auto choices = r.take(blocks, "choice indices");
    for (std::size_t b = 0; b < choices.size(); ++b) {
      if (choices[b] >= n) {
        throw FormatError(FormatErrorCode::CorruptIndex,
                          "layer " + rec.name + " block " + std::to_string(b) + ": index " +
                              std::to_string(choices[b]) + " >= " + std::to_string(n));
      }
    }
    rec.choices.assign(choices.begin(), choices.end());
    const auto mode = r.le<std::uint8_t>("freeze mode");
    if (mode > 1) throw FormatError(FormatErrorCode::BadLayout, "freeze mode " + std::to_string(mode));
    rec.mode = static_cast<FreezeMode>(mode);
    rec.seed = r.le<std::uint64_t>("freeze seed");
    set.layers.push_back(std::move(rec));
  }
  r.expect_end("mask file");
  return set;
}

void save_masks(const std::filesystem::path& path, const MaskSet& set) {
  write_file(path, encode_masks(set));
}

MaskSet load_masks(const std::filesystem::path& path) { return decode_masks(read_file(path)); }

MaskRecord mask_record(const std::string& name, const BitMask& mask, FreezeMode mode,
                       std::uint64_t seed) {
  require_valid_mask(mask);
  const HardChoice hard = choices_from_mask(mask, PatternMatrix(mask.config));
  MaskRecord rec;
  rec.name = name;
  rec.rows = to_u32(mask.rows, "rows");
  rec.cols = to_u32(mask.cols, "cols");
  rec.choices.assign(hard.index.begin(), hard.index.end());
  rec.mode = mode;
  rec.seed = seed;
  return rec;
}

BitMask record_to_mask(const MaskRecord& record, const NmConfig& config) {
  HardChoice hard;
  hard.patterns = pattern_count(config);
  hard.index.assign(record.choices.begin(), record.choices.end());
  BitMask mask = assemble_hard_mask(hard, PatternMatrix(config), record.rows, record.cols);
  require_valid_mask(mask);
  return mask;
}

MaskSet masks_from_model(const CompositionalClassifier& model) {
  MaskSet set{model.config, {}};
  for (const Layer& l : model.layers) {
    if (!l.frozen) continue;
    set.layers.push_back(mask_record(l.name, l.frozen->mask, l.frozen->mode, l.frozen->seed));
  }
  return set;
}

void apply_masks(CompositionalClassifier& model, const MaskSet& set) {
  if (!(set.config == model.config)) {
    throw std::invalid_argument("apply_masks: mask file N:M config differs from the model");
  }
  const PatternMatrix patterns(set.config);
  for (const MaskRecord& rec : set.layers) {
    auto it = std::find_if(model.layers.begin(), model.layers.end(),
                           [&](const Layer& l) { return l.name == rec.name; });
    if (it == model.layers.end()) throw std::invalid_argument("apply_masks: no layer named " + rec.name);
    if (!it->maskable || it->weights.values.rows() != rec.rows || it->weights.values.cols() != rec.cols) {
      throw std::invalid_argument("apply_masks: layer " + rec.name + " is not maskable at " +
                                  std::to_string(rec.rows) + "x" + std::to_string(rec.cols));
    }
    FrozenMask fm;
    fm.mask = record_to_mask(rec, set.config);
    fm.choices = choices_from_mask(fm.mask, patterns);
    fm.mode = rec.mode;
    fm.seed = rec.seed;
    it->frozen = std::move(fm);
  }
}

// ---------------------------------------------------------------- NMCL

namespace {

void write_payload(Writer& w, const CompositionalClassifier& model) {
  for (const Layer& l : model.layers) {
    for (double v : l.weights.values.data()) w.f64(v);
    for (double v : l.bias) w.f64(v);
  }
}

}  // namespace

std::vector<std::uint8_t> encode_model(const CompositionalClassifier& model) {
  model.validate();
  Writer w;
  w.raw(std::string("NMCL"));
  w.le(kModelFileVersion);
  const std::size_t body_start = w.size();
  w.le(static_cast<std::uint8_t>(model.config.block_len()));
  w.le(static_cast<std::uint8_t>(model.config.kept()));
  w.le(to_u32(model.layers.size(), "layer count"));
  for (const Layer& l : model.layers) {
    if (l.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw std::invalid_argument("encode_model: layer name too long");
    }
    w.le(static_cast<std::uint16_t>(l.name.size()));
    w.raw(l.name);
    w.le(static_cast<std::uint8_t>(l.kind));
    w.le(static_cast<std::uint8_t>(l.activation));
    w.le(static_cast<std::uint8_t>(l.maskable ? 1 : 0));
    for (std::size_t v : {l.in_channels, l.height, l.width, l.kh, l.kw, l.weights.values.rows(),
                          l.weights.values.cols(), l.weights.real_cols}) {
      w.le(to_u32(v, "layer dimension"));
    }
  }
  write_payload(w, model);
  w.le(crc(std::span(w.bytes()).subspan(body_start)));
  return std::move(w.bytes());
}

CompositionalClassifier decode_model(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  expect_magic(r, "NMCL", "model file");
  const auto version = r.le<std::uint16_t>("version");
  if (version != kModelFileVersion) {
    throw FormatError(FormatErrorCode::VersionMismatch,
                      "model file version " + std::to_string(version) + ", expected " +
                          std::to_string(kModelFileVersion));
  }
  if (bytes.size() < r.pos() + 4) throw FormatError(FormatErrorCode::Truncated, "model file too short");
  const auto body = bytes.subspan(r.pos(), bytes.size() - r.pos() - 4);
  Reader tail(bytes.subspan(bytes.size() - 4));
  const std::uint32_t stored = tail.le<std::uint32_t>("checksum");
  if (crc(body) != stored) {
    throw FormatError(FormatErrorCode::ChecksumMismatch, "model payload crc32 does not match");
  }

  Reader b(body);
  CompositionalClassifier model;
  try {
    const int m = b.le<std::uint8_t>("block length");
    const int k = b.le<std::uint8_t>("kept count");
    model.config = NmConfig(m, k);
  } catch (const std::invalid_argument& e) {
    throw FormatError(FormatErrorCode::BadLayout, e.what());
  }
  const std::uint32_t count = b.le<std::uint32_t>("layer count");
  for (std::uint32_t i = 0; i < count; ++i) {
    Layer l;
    l.name = b.str(b.le<std::uint16_t>("name length"), "layer name");
    const auto kind = b.le<std::uint8_t>("kind");
    const auto act = b.le<std::uint8_t>("activation");
    const auto maskable = b.le<std::uint8_t>("maskable");
    if (kind > 1 || act > 1 || maskable > 1) {
      throw FormatError(FormatErrorCode::BadLayout, "layer " + l.name + " has an unknown tag");
    }
    l.kind = static_cast<LayerKind>(kind);
    l.activation = static_cast<Activation>(act);
    l.maskable = maskable == 1;
    l.in_channels = b.le<std::uint32_t>("in_channels");
    l.height = b.le<std::uint32_t>("height");
    l.width = b.le<std::uint32_t>("width");
    l.kh = b.le<std::uint32_t>("kh");
    l.kw = b.le<std::uint32_t>("kw");
    const std::size_t rows = b.le<std::uint32_t>("rows");
    const std::size_t cols = b.le<std::uint32_t>("cols");
    l.weights.real_cols = b.le<std::uint32_t>("real cols");
    if (l.weights.real_cols > cols) {
      throw FormatError(FormatErrorCode::BadLayout, "layer " + l.name + " real cols exceed cols");
    }
    l.weights.values = Matrix(rows, cols);
    l.bias.assign(rows, 0.0);
    model.layers.push_back(std::move(l));
  }
  for (Layer& l : model.layers) {
    for (double& v : l.weights.values.data()) v = b.f64("weights");
    for (double& v : l.bias) v = b.f64("bias");
  }
  b.expect_end("model payload");
  try {
    model.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(FormatErrorCode::BadLayout, e.what());
  }
  return model;
}

void save_model(const std::filesystem::path& path, const CompositionalClassifier& model) {
  write_file(path, encode_model(model));
}

CompositionalClassifier load_model(const std::filesystem::path& path) {
  return decode_model(read_file(path));
}

std::uint32_t weights_checksum(const CompositionalClassifier& model) {
  Writer w;
  write_payload(w, model);
  return crc(w.bytes());
}

}  // namespace nmsparse
