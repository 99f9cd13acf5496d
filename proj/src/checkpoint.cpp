#include "ssam/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace ssam::pipeline {

namespace {

constexpr char kMagic[] = "SSAM1";
constexpr std::size_t kMagicLen = 5;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  float f32() {
    need(4, "value");
    const std::uint32_t bits = u32("value");
    return std::bit_cast<float>(bits);
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("checkpoint truncated reading ") + what + " at byte " + std::to_string(pos_));
    }
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

bool Checkpoint::has(const std::string& name) const {
  for (const auto& b : blocks)
    if (b.name == name) return true;
  return false;
}

const CheckpointBlock& Checkpoint::at(const std::string& name) const {
  for (const auto& b : blocks)
    if (b.name == name) return b;
  throw FormatError("checkpoint has no block '" + name + "'");
}

void Checkpoint::put(const std::string& name, Shape shape, std::vector<float> values) {
  if (shape_numel(shape) != values.size()) throw DimensionError("checkpoint block " + name + ": shape/value mismatch");
  for (auto& b : blocks)
    if (b.name == name) {
      b.shape = std::move(shape);
      b.values = std::move(values);
      return;
    }
  blocks.push_back({name, std::move(shape), std::move(values)});
}

void Checkpoint::put(const std::string& name, const Tensor<float>& t) {
  put(name, t.shape(), std::vector<float>(t.data().begin(), t.data().end()));
}

void Checkpoint::put_u64(const std::string& name, const std::vector<std::uint64_t>& values) {
  std::vector<float> limbs;
  limbs.reserve(values.size() * 4);
  for (std::uint64_t v : values)
    for (int i = 0; i < 4; ++i) limbs.push_back(float((v >> (16 * i)) & 0xffff));
  put(name, {values.size(), 4}, std::move(limbs));
}

std::vector<std::uint64_t> Checkpoint::get_u64(const std::string& name) const {
  const auto& b = at(name);
  if (b.shape.size() != 2 || b.shape[1] != 4) throw FormatError("block " + name + " is not an integer block");
  std::vector<std::uint64_t> out(b.shape[0]);
  for (std::size_t k = 0; k < out.size(); ++k)
    for (int i = 0; i < 4; ++i) {
      const float limb = b.values[k * 4 + std::size_t(i)];
      if (!(limb >= 0 && limb <= 65535) || limb != float(std::uint32_t(limb))) {
        throw FormatError("block " + name + " holds a non-integer limb");
      }
      out[k] |= std::uint64_t(limb) << (16 * i);
    }
  return out;
}

void Checkpoint::put_params(const ParamList<float>& params) {
  for (const auto& p : params) put(p.name, p.tensor);
}

void Checkpoint::load_params(const ParamList<float>& params) const {
  for (const auto& p : params) {
    const auto& b = at(p.name);
    if (b.shape != p.tensor.shape()) {
      throw FormatError("block " + p.name + " has shape " + shape_string(b.shape) + ", expected " +
                        shape_string(p.tensor.shape()));
    }
    Tensor<float> t = p.tensor;
    std::copy(b.values.begin(), b.values.end(), t.mutable_data().begin());
  }
}

std::string serialize(const Checkpoint& c) {
  std::string out(kMagic, kMagicLen);
  put_u32(out, std::uint32_t(c.blocks.size()));
  for (const auto& b : c.blocks) {
    put_u32(out, std::uint32_t(b.name.size()));
    out += b.name;
    put_u32(out, std::uint32_t(b.shape.size()));
    for (auto d : b.shape) put_u32(out, std::uint32_t(d));
    put_u32(out, std::uint32_t(b.values.size()));
    for (float v : b.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Checkpoint deserialize(const std::string& bytes) {
  if (bytes.size() < kMagicLen || bytes.compare(0, kMagicLen, kMagic) != 0) {
    throw FormatError("checkpoint: bad magic at byte 0");
  }
  Reader r(bytes);
  r.str(kMagicLen, "magic");
  const std::uint32_t count = r.u32("block count");
  Checkpoint c;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointBlock b;
    const std::uint32_t len = r.u32("name length");
    b.name = r.str(len, "name");
    const std::uint32_t rank = r.u32("rank");
    if (rank > 8) throw FormatError("checkpoint: implausible rank at byte " + std::to_string(r.pos()));
    for (std::uint32_t k = 0; k < rank; ++k) b.shape.push_back(r.u32("dim"));
    const std::uint32_t n = r.u32("value count");
    if (n != shape_numel(b.shape)) {
      throw FormatError("checkpoint: block " + b.name + " count disagrees with shape at byte " + std::to_string(r.pos()));
    }
    b.values.resize(n);
    for (auto& v : b.values) v = r.f32();
    if (c.has(b.name)) throw FormatError("checkpoint: duplicate block " + b.name);
    c.blocks.push_back(std::move(b));
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes at " + std::to_string(r.pos()));
  return c;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const std::string bytes = serialize(c);
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace ssam::pipeline
