#pragma once
// Versioned binary container of named arrays plus the run configuration.
//
// Layout (little-endian):
//   magic "LAFLOWCK" | u32 version | str config_json | str config_hash
//   | u64 array_count | { str name | u32 ndim | i64 extent[ndim] | f64 value[prod] }*
// where str is u64 length followed by bytes. Values are row-major.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "laflow/tape.hpp"

namespace laflow {

struct DenseArray {
  std::vector<std::int64_t> shape;
  std::vector<double> values;

  static DenseArray from_matrix(const Matrix& m);
  static DenseArray scalar(double v);
  Matrix to_matrix() const;
  std::size_t element_count() const;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string config_json;
  std::string config_hash;
  std::map<std::string, DenseArray> arrays;

  void put(const std::string& name, const Matrix& m) { arrays[name] = DenseArray::from_matrix(m); }
  void put_scalar(const std::string& name, double v) { arrays[name] = DenseArray::scalar(v); }
  Matrix get(const std::string& name) const;
  double get_scalar(const std::string& name) const;
  bool has(const std::string& name) const { return arrays.count(name) != 0; }

  void put_params(const std::string& prefix, const ParamList& params);
  // Copies stored values into params; shapes must match exactly.
  void get_params(const std::string& prefix, const ParamList& params) const;
};

// 16 hex digits of FNV-1a over the canonical config text.
std::string config_hash(const std::string& canonical_config);

// Hash of parameter bytes, used to prove frozen weights never move.
std::uint64_t parameter_hash(const ParamList& params);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

// Throws if the stored hash does not match its own config text, or differs
// from `expected_hash` when one is given.
Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<std::string>& expected_hash = {});

}  // namespace laflow
