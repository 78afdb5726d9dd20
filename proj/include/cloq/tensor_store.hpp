#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "cloq/version.hpp"

namespace cloq {

enum class Dtype : std::uint8_t { F32 = 0, F16 = 1, U8 = 2 };

std::size_t dtype_size(Dtype dtype);
std::string_view dtype_name(Dtype dtype);
std::optional<Dtype> dtype_from_name(std::string_view name);

/// One named dense tensor: row-major payload bytes plus dtype and shape.
struct TensorEntry {
  Dtype dtype = Dtype::F32;
  std::vector<std::int64_t> shape;
  std::vector<std::uint8_t> data;

  std::int64_t element_count() const;
  bool operator==(const TensorEntry&) const = default;
};

/// Names are nonempty, at most 127 bytes, drawn from [A-Za-z0-9._/-].
bool valid_tensor_name(std::string_view name);

/// Throws DataError if the entry violates the container invariants
/// (name charset, <=4 dims, all dims >= 1, byte length == product*dtype size).
void validate_entry(const std::string& name, const TensorEntry& entry);

/// An in-memory bundle of named tensors. Entries are kept sorted by name,
/// which makes serialization a pure function of the contents.
struct TensorBundle {
  static constexpr std::uint32_t kFormatVersion = 1;

  std::map<std::string, TensorEntry> entries;
  std::string creator = std::string(kCreator);

  void add(const std::string& name, TensorEntry entry);
  const TensorEntry& at(const std::string& name) const;
  bool contains(const std::string& name) const { return entries.count(name) != 0; }

  bool operator==(const TensorBundle&) const = default;
};

/// Serializes the bundle; returns the number of bytes written.
/// Layout: 64-byte header (magic "CLQB", u32 version, u32 entry count,
/// creator[48]), fixed-width entry table, then payloads each aligned to 64
/// bytes. All integers and floats little-endian.
std::uint64_t write_bundle(const TensorBundle& bundle, std::ostream& sink);

/// Parses a bundle; inverse of write_bundle for every valid bundle.
TensorBundle read_bundle(std::istream& source);

/// Whole-file write through a temp file + rename, so readers never observe
/// a partially written bundle.
std::uint64_t save_bundle(const TensorBundle& bundle, const std::filesystem::path& path);
TensorBundle load_bundle(const std::filesystem::path& path);

// --- Eigen bridges (compute is f64 in memory; storage dtypes are converted
// at the bundle boundary) ---

TensorEntry make_f32_entry(const Eigen::MatrixXd& m);
TensorEntry make_f16_entry(const Eigen::MatrixXd& m);
TensorEntry make_u8_entry(const Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>& m);

/// Converts an f32 or f16 entry with 1 or 2 dims to a dense f64 matrix
/// (1-dim entries become column vectors). Throws DataError otherwise.
Eigen::MatrixXd entry_to_matrix(const TensorEntry& entry);

/// Pipeline-level description of one linear layer inside a bundle.
struct LayerRecord {
  std::string layer_id;
  std::string weight_name;
  std::optional<std::string> gram_name;
  std::optional<std::string> activation_name;
  std::int64_t input_dim = 0;   // m
  std::int64_t output_dim = 0;  // n
};

}  // namespace cloq
