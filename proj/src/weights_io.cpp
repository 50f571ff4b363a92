// HDSW weight container:
//   "HDSW" | u32 version | u64 arch fingerprint | u32 record count
//   per record: u32 name length | name | u8 dtype (1 = f32, 2 = f64)
//               | u32 ndim | u64 extents[ndim] | little-endian values
#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "hds/model.hpp"
#include "hds/util.hpp"

namespace hds {

namespace {

constexpr char kMagic[4] = {'H', 'D', 'S', 'W'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::string& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

class Reader {
 public:
  Reader(std::string bytes, std::string source) : bytes_(std::move(bytes)), source_(std::move(source)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, raw, sizeof(T));
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw FormatError(source_ + ": truncated weight file");
  }

  std::string bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open weight file " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::uint64_t read_header(Reader& r, const std::string& source) {
  if (r.str(4) != std::string(kMagic, 4)) throw FormatError(source + ": not an HDSW weight file");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) {
    throw FormatError(source + ": unsupported HDSW version " + std::to_string(version));
  }
  return r.get<std::uint64_t>();
}

}  // namespace

template <typename Scalar>
void save_weights(const UResNet<Scalar>& model, const std::filesystem::path& path) {
  const auto params = model.parameters();
  std::string out;
  out.append(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, fingerprint(model.config));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    put<std::uint8_t>(out, sizeof(Scalar) == 4 ? 1 : 2);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.tensor.ndim()));
    for (Index d : p.tensor.shape()) put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    for (Index i = 0; i < p.tensor.size(); ++i) put<Scalar>(out, p.tensor.values()[i]);
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw FormatError("cannot write weight file " + path.string());
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw FormatError("failed writing " + path.string());
}

template <typename Scalar>
void load_weights(UResNet<Scalar>& model, const std::filesystem::path& path) {
  const std::string source = path.string();
  Reader r(slurp(path), source);
  const std::uint64_t stored = read_header(r, source);
  const std::uint64_t expected = fingerprint(model.config);
  if (stored != expected) {
    throw FormatError(source + ": architecture fingerprint " + hex64(stored) +
                      " does not match model fingerprint " + hex64(expected));
  }
  auto params = model.parameters();
  const auto count = r.get<std::uint32_t>();
  if (count != params.size()) {
    throw FormatError(source + ": " + std::to_string(count) + " records, model has " +
                      std::to_string(params.size()) + " parameters");
  }
  // Stage everything first so a bad record leaves the model untouched.
  std::vector<Vec<Scalar>> staged;
  staged.reserve(params.size());
  for (const auto& p : params) {
    const std::string name = r.str(r.get<std::uint32_t>());
    if (name != p.name) throw FormatError(source + ": expected record '" + p.name + "', found '" + name + "'");
    const auto dtype = r.get<std::uint8_t>();
    if (dtype != 1 && dtype != 2) throw FormatError(source + ": bad dtype tag for " + name);
    Shape shape(r.get<std::uint32_t>());
    for (auto& d : shape) d = static_cast<Index>(r.get<std::uint64_t>());
    if (shape != p.tensor.shape()) {
      throw FormatError(source + ": " + name + " has shape " + to_string(shape) + ", model expects " +
                        to_string(p.tensor.shape()));
    }
    Vec<Scalar> v(numel(shape));
    for (Index i = 0; i < v.size(); ++i) {
      v[i] = dtype == 1 ? static_cast<Scalar>(r.get<float>()) : static_cast<Scalar>(r.get<double>());
    }
    staged.push_back(std::move(v));
  }
  if (!r.done()) throw FormatError(source + ": trailing bytes after last record");
  for (std::size_t i = 0; i < params.size(); ++i) params[i].tensor.values() = staged[i];
}

std::uint64_t read_weight_fingerprint(const std::filesystem::path& path) {
  Reader r(slurp(path), path.string());
  return read_header(r, path.string());
}

template void save_weights<float>(const UResNet<float>&, const std::filesystem::path&);
template void save_weights<double>(const UResNet<double>&, const std::filesystem::path&);
template void load_weights<float>(UResNet<float>&, const std::filesystem::path&);
template void load_weights<double>(UResNet<double>&, const std::filesystem::path&);

}  // namespace hds
