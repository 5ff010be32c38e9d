#pragma once

// Binary volume files, checkpoints and dataset manifests. All writers go
// through a temporary file renamed into place.

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "rfp/config.hpp"
#include "rfp/volume.hpp"

namespace rfp::io {

/// Malformed or truncated file, or a failed read/write.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Writes `bytes` to `path` via `path.tmp` and rename.
void write_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

// "RFPV", u32 version, u8 dtype (0 f32, 1 u8), u8 ndim, u32 dims[ndim],
// f32 spacing[3], little-endian row-major payload.
enum class DType : std::uint8_t { f32 = 0, u8 = 1 };

struct VolumeFile {
  DType dtype = DType::f32;
  std::vector<std::uint32_t> dims;
  std::array<float, 3> spacing{1, 1, 1};
  std::vector<float> f32;
  std::vector<std::uint8_t> u8;

  bool operator==(const VolumeFile&) const = default;
};

std::string encode_volume(const VolumeFile& v);
VolumeFile decode_volume(const std::string& bytes);

void write_image(const std::filesystem::path& path, const Tensor& image, const Spacing& spacing);
void write_labels(const std::filesystem::path& path, const LabelVolume& labels, const Spacing& spacing);
/// Returns a [H, W, D] tensor; spacing written to `spacing` when non-null.
Tensor read_image(const std::filesystem::path& path, Spacing* spacing = nullptr);
LabelVolume read_labels(const std::filesystem::path& path, Spacing* spacing = nullptr);

// "RFPC", u32 version, 32-byte config digest, u32 config length + canonical
// config text, u32 tensor count, then per tensor: u16 name length, name,
// u8 ndim, u32 dims[ndim], f32 payload.
struct Checkpoint {
  config::Digest digest{};
  std::string config_text;
  std::map<std::string, Tensor> tensors;

  bool operator==(const Checkpoint&) const = default;
};

std::string encode_checkpoint(const Checkpoint& c);
Checkpoint decode_checkpoint(const std::string& bytes);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint read_checkpoint(const std::filesystem::path& path);

struct ManifestEntry {
  std::string id;
  std::string image_path;  // relative to the manifest's directory unless absolute
  std::string label_path;
  std::uint64_t seed = 0;

  bool operator==(const ManifestEntry&) const = default;
};

/// One line per sample: "id image_path label_path seed".
std::string format_manifest(const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> parse_manifest(const std::string& text);

}  // namespace rfp::io
