#include "avsync/diffnum/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace avsync::diff {

namespace {

template <class T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double d) { put_le(out, std::bit_cast<std::uint64_t>(d)); }

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}
  template <class T>
  T get() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(b_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }
  double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw CheckpointError("checkpoint: truncated data");
  }
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ParameterStore& store) {
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  out.push_back(kCheckpointVersion);
  put_le(out, static_cast<std::uint32_t>(store.count()));
  for (const auto& [path, t] : store.entries()) {
    put_le(out, static_cast<std::uint32_t>(path.size()));
    out.insert(out.end(), path.begin(), path.end());
    put_le(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put_le(out, static_cast<std::uint64_t>(d));
    for (double v : t.data()) put_f64(out, v);
  }
  return out;
}

std::vector<CheckpointEntry> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.str(4) != std::string(kCheckpointMagic, 4)) throw CheckpointError("checkpoint: bad magic");
  const auto version = r.get<std::uint8_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>();
  std::vector<CheckpointEntry> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.path = r.str(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    for (std::uint32_t k = 0; k < rank; ++k) e.shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
    e.values.resize(numel(e.shape));
    for (auto& v : e.values) v = r.f64();
    entries.push_back(std::move(e));
  }
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes");
  return entries;
}

void save_checkpoint(const ParameterStore& store, const std::string& file) {
  const auto bytes = encode_checkpoint(store);
  std::ofstream os(file, std::ios::binary);
  if (!os) throw CheckpointError("checkpoint: cannot open " + file + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw CheckpointError("checkpoint: write failed for " + file);
}

std::vector<CheckpointEntry> read_checkpoint(const std::string& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw CheckpointError("checkpoint: cannot open " + file);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

void load_checkpoint(ParameterStore& store, const std::string& file) {
  const auto entries = read_checkpoint(file);
  if (entries.size() != store.count()) {
    throw CheckpointError("checkpoint: " + file + " has " + std::to_string(entries.size()) +
                          " entries, model expects " + std::to_string(store.count()));
  }
  for (const auto& e : entries) {
    if (!store.contains(e.path)) throw CheckpointError("checkpoint: unknown parameter " + e.path);
    Tensor t = store.get(e.path);
    if (t.shape() != e.shape) {
      throw CheckpointError("checkpoint: shape mismatch for " + e.path + ": file " +
                            to_string(e.shape) + ", model " + to_string(t.shape()));
    }
    auto d = t.mutable_data();
    std::copy(e.values.begin(), e.values.end(), d.begin());
  }
}

}  // namespace avsync::diff
