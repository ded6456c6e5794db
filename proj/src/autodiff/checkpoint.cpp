#include "ptseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ptseg/error.hpp"

namespace ptseg::ad {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'P', 'T', 'S', 'E', 'G', 'C', 'K', 'P'};

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  void put_doubles(std::span<const double> v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
    bytes.insert(bytes.end(), p, p + v.size() * sizeof(double));
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void get_doubles(std::span<double> out) {
    need(out.size() * sizeof(double));
    std::memcpy(out.data(), bytes_.data() + pos_, out.size() * sizeof(double));
    pos_ += out.size() * sizeof(double);
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw Error(ErrorCode::Checkpoint, "truncated checkpoint");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes.insert(w.bytes.end(), std::begin(kMagic), std::end(kMagic));
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint32_t>(ckpt.meta.size()));
  for (const auto& [k, v] : ckpt.meta) {
    w.put_string(k);
    w.put_string(v);
  }
  w.put(static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& p : ckpt.params) {
    w.put_string(p.name);
    w.put(static_cast<std::uint32_t>(p.tensor.rank()));
    for (int d : p.tensor.shape()) w.put(static_cast<std::uint32_t>(d));
    w.put_doubles(p.tensor.values());
  }
  const auto& a = ckpt.adam;
  w.put(static_cast<std::uint64_t>(a.step));
  for (double v : {a.options.learning_rate, a.options.beta1, a.options.beta2, a.options.epsilon,
                   a.options.weight_decay}) {
    w.put(v);
  }
  const bool has_moments = !a.first_moment.empty();
  if (has_moments && (a.first_moment.size() != ckpt.params.size() ||
                      a.second_moment.size() != ckpt.params.size())) {
    throw Error(ErrorCode::Checkpoint, "optimizer moments do not match parameter list");
  }
  w.put(static_cast<std::uint8_t>(has_moments ? 1 : 0));
  if (has_moments) {
    for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
      if (a.first_moment[i].size() != ckpt.params[i].tensor.numel()) {
        throw Error(ErrorCode::Checkpoint, "moment size mismatch for " + ckpt.params[i].name);
      }
      w.put_doubles(a.first_moment[i]);
      w.put_doubles(a.second_moment[i]);
    }
  }
  return std::move(w.bytes);
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorCode::Checkpoint, "bad checkpoint magic");
  }
  std::vector<std::uint8_t> body(bytes.begin() + sizeof(kMagic), bytes.end());
  Reader r(body);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::Checkpoint, "unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto n_meta = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.get_string();
    ckpt.meta[k] = r.get_string();
  }
  const auto n_params = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_params; ++i) {
    NamedTensor p;
    p.name = r.get_string();
    const auto rank = r.get<std::uint32_t>();
    if (rank == 0 || rank > 8) throw Error(ErrorCode::Checkpoint, "implausible tensor rank");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<int>(r.get<std::uint32_t>()));
    p.tensor = Tensor(shape, true);
    r.get_doubles(p.tensor.values());
    ckpt.params.push_back(std::move(p));
  }
  auto& a = ckpt.adam;
  a.step = r.get<std::uint64_t>();
  a.options.learning_rate = r.get<double>();
  a.options.beta1 = r.get<double>();
  a.options.beta2 = r.get<double>();
  a.options.epsilon = r.get<double>();
  a.options.weight_decay = r.get<double>();
  if (r.get<std::uint8_t>() != 0) {
    for (const auto& p : ckpt.params) {
      a.first_moment.emplace_back(p.tensor.numel());
      a.second_moment.emplace_back(p.tensor.numel());
      r.get_doubles(a.first_moment.back());
      r.get_doubles(a.second_moment.back());
    }
  }
  if (!r.done()) throw Error(ErrorCode::Checkpoint, "trailing bytes after checkpoint");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace ptseg::ad
