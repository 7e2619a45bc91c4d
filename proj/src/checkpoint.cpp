#include "laflow/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "laflow/rng.hpp"

namespace laflow {

namespace {

constexpr char kMagic[8] = {'L', 'A', 'F', 'L', 'O', 'W', 'C', 'K'};

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

void write_str(std::ostream& os, const std::string& s) {
  write_pod<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_str(std::istream& is) {
  const auto n = read_pod<std::uint64_t>(is);
  if (n > (1ULL << 32)) throw std::runtime_error("checkpoint: implausible string length");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return s;
}

}  // namespace

DenseArray DenseArray::from_matrix(const Matrix& m) {
  DenseArray a;
  a.shape = {static_cast<std::int64_t>(m.rows()), static_cast<std::int64_t>(m.cols())};
  a.values.resize(static_cast<std::size_t>(m.size()));
  std::size_t k = 0;
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) a.values[k++] = m(i, j);
  return a;
}

DenseArray DenseArray::scalar(double v) {
  DenseArray a;
  a.values = {v};
  return a;
}

std::size_t DenseArray::element_count() const {
  std::size_t n = 1;
  for (auto e : shape) n *= static_cast<std::size_t>(e);
  return n;
}

Matrix DenseArray::to_matrix() const {
  if (element_count() != values.size()) throw std::runtime_error("DenseArray: extents do not match value count");
  Index rows = 1, cols = 1;
  if (shape.size() == 1) {
    rows = 1;
    cols = shape[0];
  } else if (shape.size() == 2) {
    rows = shape[0];
    cols = shape[1];
  } else if (shape.size() > 2) {
    throw std::runtime_error("DenseArray: only rank <= 2 converts to a matrix");
  }
  Matrix m(rows, cols);
  std::size_t k = 0;
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = values[k++];
  return m;
}

Matrix Checkpoint::get(const std::string& name) const {
  auto it = arrays.find(name);
  if (it == arrays.end()) throw std::runtime_error("checkpoint: missing array " + name);
  return it->second.to_matrix();
}

double Checkpoint::get_scalar(const std::string& name) const {
  auto it = arrays.find(name);
  if (it == arrays.end() || it->second.values.size() != 1)
    throw std::runtime_error("checkpoint: missing scalar " + name);
  return it->second.values[0];
}

void Checkpoint::put_params(const std::string& prefix, const ParamList& params) {
  for (const Parameter* p : params) put(prefix + p->name, p->value);
}

void Checkpoint::get_params(const std::string& prefix, const ParamList& params) const {
  for (Parameter* p : params) {
    Matrix m = get(prefix + p->name);
    if (m.rows() != p->value.rows() || m.cols() != p->value.cols())
      throw std::runtime_error("checkpoint: shape mismatch for " + prefix + p->name);
    p->value = std::move(m);
    p->zero_grad();
  }
}

std::string config_hash(const std::string& canonical_config) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(canonical_config);
  return os.str();
}

std::uint64_t parameter_hash(const ParamList& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Parameter* p : params) {
    h = fnv1a64(p->name, h);
    const auto* bytes = reinterpret_cast<const char*>(p->value.data());
    h = fnv1a64(std::string_view(bytes, static_cast<std::size_t>(p->value.size()) * sizeof(double)), h);
  }
  return h;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path.string());
  os.write(kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(os, Checkpoint::kVersion);
  write_str(os, ckpt.config_json);
  write_str(os, ckpt.config_hash);
  write_pod<std::uint64_t>(os, ckpt.arrays.size());
  for (const auto& [name, arr] : ckpt.arrays) {
    if (arr.element_count() != arr.values.size())
      throw std::invalid_argument("checkpoint: array " + name + " extents do not match value count");
    write_str(os, name);
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(arr.shape.size()));
    for (auto e : arr.shape) write_pod<std::int64_t>(os, e);
    os.write(reinterpret_cast<const char*>(arr.values.data()),
             static_cast<std::streamsize>(arr.values.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<std::string>& expected_hash) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  const auto version = read_pod<std::uint32_t>(is);
  if (version != Checkpoint::kVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.config_json = read_str(is);
  ckpt.config_hash = read_str(is);
  if (config_hash(ckpt.config_json) != ckpt.config_hash)
    throw std::runtime_error("checkpoint: stored config hash does not match stored config");
  if (expected_hash && *expected_hash != ckpt.config_hash)
    throw std::runtime_error("checkpoint: config hash " + ckpt.config_hash + " differs from expected " +
                             *expected_hash);
  const auto count = read_pod<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = read_str(is);
    DenseArray arr;
    const auto ndim = read_pod<std::uint32_t>(is);
    if (ndim > 8) throw std::runtime_error("checkpoint: implausible rank for " + name);
    for (std::uint32_t d = 0; d < ndim; ++d) arr.shape.push_back(read_pod<std::int64_t>(is));
    arr.values.resize(arr.element_count());
    is.read(reinterpret_cast<char*>(arr.values.data()),
            static_cast<std::streamsize>(arr.values.size() * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint: truncated array " + name);
    ckpt.arrays.emplace(std::move(name), std::move(arr));
  }
  return ckpt;
}

}  // namespace laflow
