#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nmsparse/mask_sampler.hpp"
#include "nmsparse/model.hpp"
#include "nmsparse/nm_patterns.hpp"

namespace nmsparse {

enum class FormatErrorCode {
  WrongMagic,
  Truncated,
  TrailingData,
  CountMismatch,
  VersionMismatch,
  CorruptIndex,
  ChecksumMismatch,
  BadLayout,
  Io,
};

const char* to_string(FormatErrorCode code);

class FormatError : public std::runtime_error {
 public:
  FormatError(FormatErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  FormatErrorCode code() const { return code_; }

 private:
  FormatErrorCode code_;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// IDX (big-endian): images magic 0x00000803 + count, rows, cols; labels
// magic 0x00000801 + count. Payloads are raw unsigned bytes.

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

struct IdxDataset {
  std::size_t count = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> images;  // count * rows * cols
  std::vector<std::uint8_t> labels;  // count

  friend bool operator==(const IdxDataset&, const IdxDataset&) = default;
};

struct IdxImages {
  std::size_t count = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> pixels;
};

IdxImages parse_idx_images(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_idx_images(const IdxDataset& data);
std::vector<std::uint8_t> encode_idx_labels(const IdxDataset& data);

IdxDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
void save_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
              const IdxDataset& data);

/// Grayscale normalization constants of the digit corpus.
inline constexpr double kDigitMean = 0.1307;
inline constexpr double kDigitStd = 0.3081;

/// x = (pixel / 255 - mean) / std, one channel. Rejects labels >= classes.
Dataset to_dataset(const IdxDataset& idx, double mean = kDigitMean, double stddev = kDigitStd,
                   std::size_t num_classes = 10);

// NMSK mask files (little-endian): "NMSK", u16 version, u8 M, u8 K,
// u32 layer count; per layer u16 name length + name, u32 rows, u32 cols,
// u64 block count, one u8 pattern index per block, u8 freeze mode,
// u64 freeze seed.

inline constexpr std::uint16_t kMaskFileVersion = 1;

struct MaskRecord {
  std::string name;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::uint8_t> choices;
  FreezeMode mode = FreezeMode::Deterministic;
  std::uint64_t seed = 0;

  friend bool operator==(const MaskRecord&, const MaskRecord&) = default;
};

struct MaskSet {
  NmConfig config;
  std::vector<MaskRecord> layers;

  friend bool operator==(const MaskSet&, const MaskSet&) = default;
};

std::vector<std::uint8_t> encode_masks(const MaskSet& set);
MaskSet decode_masks(std::span<const std::uint8_t> bytes);
void save_masks(const std::filesystem::path& path, const MaskSet& set);
MaskSet load_masks(const std::filesystem::path& path);

MaskRecord mask_record(const std::string& name, const BitMask& mask, FreezeMode mode,
                       std::uint64_t seed);
BitMask record_to_mask(const MaskRecord& record, const NmConfig& config);

/// Frozen masks of every maskable layer.
MaskSet masks_from_model(const CompositionalClassifier& model);

/// Installs masks by layer name; every record must match a maskable layer
/// of the same shape.
void apply_masks(CompositionalClassifier& model, const MaskSet& set);

// NMCL model files (little-endian): "NMCL", u16 version, u8 M, u8 K,
// u32 layer count; per layer u16 name length + name, u8 kind,
// u8 activation, u8 maskable, u32 in_channels, height, width, kh, kw,
// rows, cols, real cols; then f64 weights (row-major) and f64 biases of
// every layer in order; finally the crc32 of everything after the version.

inline constexpr std::uint16_t kModelFileVersion = 1;

std::vector<std::uint8_t> encode_model(const CompositionalClassifier& model);
CompositionalClassifier decode_model(std::span<const std::uint8_t> bytes);
void save_model(const std::filesystem::path& path, const CompositionalClassifier& model);
CompositionalClassifier load_model(const std::filesystem::path& path);

/// crc32 of the little-endian weight and bias payload only.
std::uint32_t weights_checksum(const CompositionalClassifier& model);

}  // namespace nmsparse
