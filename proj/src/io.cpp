#include "rfp/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace rfp::io {

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

namespace {

constexpr std::uint32_t kVolumeVersion = 1;
constexpr std::uint32_t kCheckpointVersion = 1;

class Writer {
 public:
  template <typename T>
  void put(T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    out_.append(b, sizeof(T));
  }
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(const std::string& s, const char* what) : s_(s), what_(what) {}
  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, need(sizeof(T)), sizeof(T));
    return v;
  }
  const char* need(std::size_t n) {
    if (s_.size() - pos_ < n) {
      throw FormatError(std::string(what_) + " truncated at byte " + std::to_string(pos_) + " (needed " +
                        std::to_string(n) + " more)");
    }
    const char* p = s_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == s_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  const std::string& s_;
  const char* what_;
  std::size_t pos_ = 0;
};

std::size_t product(const std::vector<std::uint32_t>& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

}  // namespace

void write_atomic(const std::filesystem::path& path, const std::string& bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw FormatError("write to " + tmp.string() + " failed");
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string encode_volume(const VolumeFile& v) {
  const std::size_t n = product(v.dims);
  const std::size_t have = v.dtype == DType::f32 ? v.f32.size() : v.u8.size();
  if (have != n) {
    throw FormatError("volume payload has " + std::to_string(have) + " elements, dims need " + std::to_string(n));
  }
  if (v.dims.size() > 255) throw FormatError("too many dimensions");
  Writer w;
  w.bytes("RFPV", 4);
  w.put(kVolumeVersion);
  w.put(static_cast<std::uint8_t>(v.dtype));
  w.put(static_cast<std::uint8_t>(v.dims.size()));
  for (auto d : v.dims) w.put(d);
  for (float s : v.spacing) w.put(s);
  if (v.dtype == DType::f32) w.bytes(v.f32.data(), n * sizeof(float));
  else w.bytes(v.u8.data(), n);
  return w.take();
}

VolumeFile decode_volume(const std::string& bytes) {
  Reader r(bytes, "volume file");
  if (std::memcmp(r.need(4), "RFPV", 4) != 0) throw FormatError("volume file: bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kVolumeVersion) throw FormatError("volume file: unsupported version " + std::to_string(version));
  VolumeFile v;
  const auto dtype = r.get<std::uint8_t>();
  if (dtype > 1) throw FormatError("volume file: unknown dtype code " + std::to_string(dtype));
  v.dtype = static_cast<DType>(dtype);
  const auto ndim = r.get<std::uint8_t>();
  for (std::uint8_t i = 0; i < ndim; ++i) v.dims.push_back(r.get<std::uint32_t>());
  for (float& s : v.spacing) s = r.get<float>();
  const std::size_t n = product(v.dims);
  if (v.dtype == DType::f32) {
    v.f32.resize(n);
    std::memcpy(v.f32.data(), r.need(n * sizeof(float)), n * sizeof(float));
  } else {
    v.u8.resize(n);
    std::memcpy(v.u8.data(), r.need(n), n);
  }
  if (!r.done()) throw FormatError("volume file: " + std::to_string(bytes.size() - r.pos()) + " trailing bytes");
  return v;
}

namespace {

std::array<float, 3> to_f32(const Spacing& s) { return {float(s[0]), float(s[1]), float(s[2])}; }

Triple dims3(const VolumeFile& v, const std::filesystem::path& path) {
  if (v.dims.size() != 3) {
    throw FormatError(path.string() + ": expected a 3-D volume, got " + std::to_string(v.dims.size()) + " dims");
  }
  return {v.dims[0], v.dims[1], v.dims[2]};
}

}  // namespace

void write_image(const std::filesystem::path& path, const Tensor& image, const Spacing& spacing) {
  if (image.rank() != 3) throw ShapeError("image volume must be [H, W, D], got " + shape_string(image.shape()));
  VolumeFile v;
  v.dtype = DType::f32;
  for (auto d : image.shape()) v.dims.push_back(static_cast<std::uint32_t>(d));
  v.spacing = to_f32(spacing);
  v.f32.assign(image.data().begin(), image.data().end());
  write_atomic(path, encode_volume(v));
}

void write_labels(const std::filesystem::path& path, const LabelVolume& labels, const Spacing& spacing) {
  VolumeFile v;
  v.dtype = DType::u8;
  for (auto d : labels.extent) v.dims.push_back(static_cast<std::uint32_t>(d));
  v.spacing = to_f32(spacing);
  v.u8 = labels.data;
  write_atomic(path, encode_volume(v));
}

Tensor read_image(const std::filesystem::path& path, Spacing* spacing) {
  VolumeFile v = decode_volume(read_file(path));
  if (v.dtype != DType::f32) throw FormatError(path.string() + ": expected f32 image data");
  const Triple e = dims3(v, path);
  if (spacing) *spacing = {v.spacing[0], v.spacing[1], v.spacing[2]};
  return Tensor({e[0], e[1], e[2]}, std::move(v.f32));
}

LabelVolume read_labels(const std::filesystem::path& path, Spacing* spacing) {
  VolumeFile v = decode_volume(read_file(path));
  if (v.dtype != DType::u8) throw FormatError(path.string() + ": expected u8 label data");
  LabelVolume out(dims3(v, path));
  out.data = std::move(v.u8);
  if (spacing) *spacing = {v.spacing[0], v.spacing[1], v.spacing[2]};
  return out;
}

std::string encode_checkpoint(const Checkpoint& c) {
  Writer w;
  w.bytes("RFPC", 4);
  w.put(kCheckpointVersion);
  w.bytes(c.digest.data(), c.digest.size());
  w.put(static_cast<std::uint32_t>(c.config_text.size()));
  w.bytes(c.config_text.data(), c.config_text.size());
  w.put(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& [name, t] : c.tensors) {
    if (name.size() > 0xffff) throw FormatError("tensor name too long: " + name.substr(0, 32) + "...");
    if (t.rank() > 255) throw FormatError("tensor '" + name + "' has too many dimensions");
    w.put(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.put(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) w.put(static_cast<std::uint32_t>(d));
    w.bytes(t.ptr(), t.size() * sizeof(float));
  }
  return w.take();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader r(bytes, "checkpoint");
  if (std::memcmp(r.need(4), "RFPC", 4) != 0) throw FormatError("checkpoint: bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint c;
  std::memcpy(c.digest.data(), r.need(c.digest.size()), c.digest.size());
  const auto cfg_len = r.get<std::uint32_t>();
  c.config_text.assign(r.need(cfg_len), cfg_len);
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint16_t>();
    std::string name(r.need(len), len);
    const auto ndim = r.get<std::uint8_t>();
    Shape shape;
    for (std::uint8_t k = 0; k < ndim; ++k) shape.push_back(r.get<std::uint32_t>());
    const std::size_t n = shape_size(shape);
    std::vector<float> data(n);
    std::memcpy(data.data(), r.need(n * sizeof(float)), n * sizeof(float));
    if (!c.tensors.emplace(name, Tensor(shape, std::move(data))).second) {
      throw FormatError("checkpoint: duplicate tensor '" + name + "'");
    }
  }
  if (!r.done()) throw FormatError("checkpoint: " + std::to_string(bytes.size() - r.pos()) + " trailing bytes");
  return c;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  write_atomic(path, encode_checkpoint(c));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string format_manifest(const std::vector<ManifestEntry>& entries) {
  std::string out;
  for (const auto& e : entries) {
    for (const std::string* f : {&e.id, &e.image_path, &e.label_path}) {
      if (f->empty() || f->find_first_of(" \t\n") != std::string::npos) {
        throw FormatError("manifest field '" + *f + "' is empty or contains whitespace");
      }
    }
    out += e.id + " " + e.image_path + " " + e.label_path + " " + std::to_string(e.seed) + "\n";
  }
  return out;
}

std::vector<ManifestEntry> parse_manifest(const std::string& text) {
  std::vector<ManifestEntry> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    ManifestEntry e;
    std::string extra;
    if (!(fields >> e.id >> e.image_path >> e.label_path >> e.seed) || (fields >> extra)) {
      throw FormatError("manifest line " + std::to_string(lineno) + ": expected 'id image label seed'");
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace rfp::io
