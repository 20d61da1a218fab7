#include "bino/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "bino/errors.hpp"

namespace bino {

namespace {

constexpr char kMagic[8] = {'B', 'I', 'N', 'O', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  void raw(char* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw DataError("checkpoint is truncated");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const std::string* Checkpoint::find_meta(const std::string& key) const {
  for (const auto& [k, v] : meta)
    if (k == key) return &v;
  return nullptr;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes.insert(w.bytes.end(), std::begin(kMagic), std::end(kMagic));
  w.u32(kCheckpointVersion);
  w.str(ckpt.config_echo);
  w.u32(static_cast<std::uint32_t>(ckpt.meta.size()));
  for (const auto& [k, v] : ckpt.meta) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
    const Tensor& t = ckpt.tensors.tensor(i);
    w.str(ckpt.tensors.name(i));
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) w.u32(static_cast<std::uint32_t>(e));
    for (float f : t.data()) w.f32(f);
  }
  return std::move(w.bytes);
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  char magic[8];
  r.raw(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0) throw DataError("not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.config_echo = r.str();
  const std::uint32_t nmeta = r.u32();
  for (std::uint32_t i = 0; i < nmeta; ++i) {
    std::string k = r.str();
    std::string v = r.str();
    ckpt.meta.emplace_back(std::move(k), std::move(v));
  }
  const std::uint32_t ntensors = r.u32();
  for (std::uint32_t i = 0; i < ntensors; ++i) {
    std::string name = r.str();
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto& e : shape) e = r.u32();
    Tensor t(shape);
    for (float& f : t.data()) f = r.f32();
    ckpt.tensors.add(std::move(name), std::move(t));
  }
  if (!r.done()) throw DataError("trailing bytes after checkpoint payload");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

ParamSet extract_prefixed(const ParamSet& all, const std::string& prefix) {
  ParamSet out;
  for (std::size_t i = 0; i < all.size(); ++i)
    if (all.name(i).starts_with(prefix)) out.add(all.name(i).substr(prefix.size()), all.tensor(i));
  return out;
}

void insert_prefixed(ParamSet& all, const ParamSet& part, const std::string& prefix) {
  for (std::size_t i = 0; i < part.size(); ++i) all.add(prefix + part.name(i), part.tensor(i));
}

}  // namespace bino
