#include "cloq/tensor_store.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "cloq/errors.hpp"
#include "cloq/f16.hpp"

namespace cloq {

namespace {

constexpr std::array<char, 4> kMagic = {'C', 'L', 'Q', 'B'};
constexpr std::size_t kHeaderSize = 64;
constexpr std::size_t kCreatorField = 48;
constexpr std::size_t kNameField = 128;
constexpr std::size_t kRecordSize = 184;  // name[128] dtype ndim pad[6] dims[4] offset length
constexpr std::size_t kAlign = 64;
constexpr std::size_t kMaxDims = 4;

std::uint64_t align_up(std::uint64_t v) { return (v + kAlign - 1) / kAlign * kAlign; }

void put_u32(std::uint8_t* p, std::uint32_t v) {
  p[0] = static_cast<std::uint8_t>(v);
  p[1] = static_cast<std::uint8_t>(v >> 8);
  p[2] = static_cast<std::uint8_t>(v >> 16);
  p[3] = static_cast<std::uint8_t>(v >> 24);
}

void put_u64(std::uint8_t* p, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * i));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

std::size_t dtype_size(Dtype dtype) {
  switch (dtype) {
    case Dtype::F32: return 4;
    case Dtype::F16: return 2;
    case Dtype::U8: return 1;
  }
  throw DataError("unknown dtype code");
}

std::string_view dtype_name(Dtype dtype) {
  switch (dtype) {
    case Dtype::F32: return "f32";
    case Dtype::F16: return "f16";
    case Dtype::U8: return "u8";
  }
  throw DataError("unknown dtype code");
}

std::optional<Dtype> dtype_from_name(std::string_view name) {
  if (name == "f32") return Dtype::F32;
  if (name == "f16") return Dtype::F16;
  if (name == "u8") return Dtype::U8;
  return std::nullopt;
}

std::int64_t TensorEntry::element_count() const {
  std::int64_t count = 1;
  for (std::int64_t d : shape) count *= d;
  return count;
}

bool valid_tensor_name(std::string_view name) {
  if (name.empty() || name.size() >= kNameField) return false;
  for (char c : name) {
    const bool ok = (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') ||
                    c == '.' || c == '_' || c == '/' || c == '-';
    if (!ok) return false;
  }
  return true;
}

void validate_entry(const std::string& name, const TensorEntry& entry) {
  if (!valid_tensor_name(name))
    throw DataError("invalid tensor name '" + name + "' (must match [A-Za-z0-9._/-]+, <128 bytes)");
  if (entry.shape.empty() || entry.shape.size() > kMaxDims)
    throw DataError("entry '" + name + "': shape must have 1..4 dims");
  for (std::int64_t d : entry.shape)
    if (d < 1) throw DataError("entry '" + name + "': all dims must be >= 1");
  const std::uint64_t expected =
      static_cast<std::uint64_t>(entry.element_count()) * dtype_size(entry.dtype);
  if (entry.data.size() != expected)
    throw DataError("entry '" + name + "': payload is " + std::to_string(entry.data.size()) +
                    " bytes, expected " + std::to_string(expected));
}

void TensorBundle::add(const std::string& name, TensorEntry entry) {
  validate_entry(name, entry);
  if (entries.count(name)) throw DataError("duplicate tensor name '" + name + "'");
  entries.emplace(name, std::move(entry));
}

const TensorEntry& TensorBundle::at(const std::string& name) const {
  auto it = entries.find(name);
  if (it == entries.end()) throw DataError("missing tensor '" + name + "'");
  return it->second;
}

std::uint64_t write_bundle(const TensorBundle& bundle, std::ostream& sink) {
  if (bundle.entries.size() > 0xFFFFFFFFull) throw DataError("too many entries");
  for (const auto& [name, entry] : bundle.entries) validate_entry(name, entry);

  const std::uint32_t count = static_cast<std::uint32_t>(bundle.entries.size());
  const std::uint64_t table_end = kHeaderSize + kRecordSize * static_cast<std::uint64_t>(count);

  std::vector<std::uint8_t> header(kHeaderSize, 0);
  std::memcpy(header.data(), kMagic.data(), kMagic.size());
  put_u32(header.data() + 4, TensorBundle::kFormatVersion);
  put_u32(header.data() + 8, count);
  const std::size_t creator_len = std::min(bundle.creator.size(), kCreatorField - 1);
  std::memcpy(header.data() + 12, bundle.creator.data(), creator_len);

  std::vector<std::uint8_t> table(kRecordSize * count, 0);
  std::uint64_t offset = align_up(table_end);
  std::size_t rec = 0;
  for (const auto& [name, entry] : bundle.entries) {
    std::uint8_t* p = table.data() + rec * kRecordSize;
    std::memcpy(p, name.data(), name.size());
    p[kNameField] = static_cast<std::uint8_t>(entry.dtype);
    p[kNameField + 1] = static_cast<std::uint8_t>(entry.shape.size());
    for (std::size_t d = 0; d < entry.shape.size(); ++d)
      put_u64(p + kNameField + 8 + 8 * d, static_cast<std::uint64_t>(entry.shape[d]));
    put_u64(p + kNameField + 40, offset);
    put_u64(p + kNameField + 48, entry.data.size());
    offset = align_up(offset + entry.data.size());
    ++rec;
  }

  sink.write(reinterpret_cast<const char*>(header.data()), header.size());
  sink.write(reinterpret_cast<const char*>(table.data()), table.size());
  std::uint64_t written = table_end;
  const std::array<char, kAlign> zeros{};
  for (const auto& [name, entry] : bundle.entries) {
    const std::uint64_t pad = align_up(written) - written;
    if (pad) sink.write(zeros.data(), static_cast<std::streamsize>(pad));
    sink.write(reinterpret_cast<const char*>(entry.data.data()),
               static_cast<std::streamsize>(entry.data.size()));
    written = align_up(written) + entry.data.size();
  }
  if (!sink) throw DataError("bundle sink write failed");
  return written;
}

TensorBundle read_bundle(std::istream& source) {
  source.seekg(0, std::ios::end);
  const std::uint64_t file_size = static_cast<std::uint64_t>(source.tellg());
  source.seekg(0, std::ios::beg);

  std::vector<std::uint8_t> header(kHeaderSize);
  source.read(reinterpret_cast<char*>(header.data()), kHeaderSize);
  if (!source || static_cast<std::size_t>(source.gcount()) != kHeaderSize)
    throw DataError("bundle too short for header");
  if (std::memcmp(header.data(), kMagic.data(), kMagic.size()) != 0)
    throw DataError("bad magic: not a tensor bundle");
  const std::uint32_t version = get_u32(header.data() + 4);
  if (version > TensorBundle::kFormatVersion)
    throw DataError("bundle format version " + std::to_string(version) +
                    " is ahead of this reader (max " +
                    std::to_string(TensorBundle::kFormatVersion) + ")");
  const std::uint32_t count = get_u32(header.data() + 8);

  TensorBundle bundle;
  const char* creator_begin = reinterpret_cast<const char*>(header.data() + 12);
  bundle.creator.assign(creator_begin, strnlen(creator_begin, kCreatorField));

  const std::uint64_t table_end = kHeaderSize + kRecordSize * static_cast<std::uint64_t>(count);
  if (table_end > file_size) throw DataError("bundle too short for entry table");

  std::vector<std::uint8_t> table(kRecordSize * count);
  source.read(reinterpret_cast<char*>(table.data()), static_cast<std::streamsize>(table.size()));
  if (!source) throw DataError("bundle too short for entry table");

  std::uint64_t prev_end = table_end;
  for (std::uint32_t rec = 0; rec < count; ++rec) {
    const std::uint8_t* p = table.data() + static_cast<std::size_t>(rec) * kRecordSize;
    const char* name_begin = reinterpret_cast<const char*>(p);
    std::string name(name_begin, strnlen(name_begin, kNameField));

    TensorEntry entry;
    const std::uint8_t dtype_code = p[kNameField];
    if (dtype_code > 2) throw DataError("entry '" + name + "': unknown dtype code " +
                                        std::to_string(dtype_code));
    entry.dtype = static_cast<Dtype>(dtype_code);
    const std::uint8_t ndim = p[kNameField + 1];
    if (ndim < 1 || ndim > kMaxDims)
      throw DataError("entry '" + name + "': invalid dim count " + std::to_string(ndim));
    for (std::uint8_t d = 0; d < ndim; ++d)
      entry.shape.push_back(static_cast<std::int64_t>(get_u64(p + kNameField + 8 + 8 * d)));

    const std::uint64_t offset = get_u64(p + kNameField + 40);
    const std::uint64_t length = get_u64(p + kNameField + 48);
    if (offset % kAlign != 0 || offset < prev_end)
      throw DataError("entry '" + name + "': bad payload offset");
    if (offset + length > file_size)
      throw DataError("truncated payload for entry '" + name + "'");
    prev_end = offset + length;

    entry.data.resize(length);
    source.seekg(static_cast<std::streamoff>(offset));
    source.read(reinterpret_cast<char*>(entry.data.data()), static_cast<std::streamsize>(length));
    if (!source || static_cast<std::uint64_t>(source.gcount()) != length)
      throw DataError("truncated payload for entry '" + name + "'");

    validate_entry(name, entry);
    if (bundle.entries.count(name)) throw DataError("duplicate tensor name '" + name + "'");
    bundle.entries.emplace(std::move(name), std::move(entry));
  }
  return bundle;
}

std::uint64_t save_bundle(const TensorBundle& bundle, const std::filesystem::path& path) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  std::uint64_t written = 0;
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open '" + tmp.string() + "' for writing");
    written = write_bundle(bundle, out);
    out.flush();
    if (!out) throw DataError("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
  return written;
}

TensorBundle load_bundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open bundle '" + path.string() + "'");
  return read_bundle(in);
}

TensorEntry make_f32_entry(const Eigen::MatrixXd& m) {
  TensorEntry entry;
  entry.dtype = Dtype::F32;
  entry.shape = {m.rows(), m.cols()};
  entry.data.resize(static_cast<std::size_t>(m.size()) * 4);
  std::uint8_t* out = entry.data.data();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const float v = static_cast<float>(m(i, j));
      std::memcpy(out, &v, 4);
      out += 4;
    }
  return entry;
}

TensorEntry make_f16_entry(const Eigen::MatrixXd& m) {
  TensorEntry entry;
  entry.dtype = Dtype::F16;
  entry.shape = {m.rows(), m.cols()};
  entry.data.resize(static_cast<std::size_t>(m.size()) * 2);
  std::uint8_t* out = entry.data.data();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const std::uint16_t h = f32_to_f16(static_cast<float>(m(i, j)));
      out[0] = static_cast<std::uint8_t>(h);
      out[1] = static_cast<std::uint8_t>(h >> 8);
      out += 2;
    }
  return entry;
}

TensorEntry make_u8_entry(const Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>& m) {
  TensorEntry entry;
  entry.dtype = Dtype::U8;
  entry.shape = {m.rows(), m.cols()};
  entry.data.resize(static_cast<std::size_t>(m.size()));
  std::uint8_t* out = entry.data.data();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) *out++ = m(i, j);
  return entry;
}

Eigen::MatrixXd entry_to_matrix(const TensorEntry& entry) {
  if (entry.shape.size() > 2) throw DataError("tensor has more than 2 dims");
  const Eigen::Index rows = entry.shape[0];
  const Eigen::Index cols = entry.shape.size() == 2 ? entry.shape[1] : 1;
  Eigen::MatrixXd m(rows, cols);
  const std::uint8_t* in = entry.data.data();
  if (entry.dtype == Dtype::F32) {
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) {
        float v;
        std::memcpy(&v, in, 4);
        in += 4;
        m(i, j) = static_cast<double>(v);
      }
  } else if (entry.dtype == Dtype::F16) {
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) {
        const std::uint16_t h = static_cast<std::uint16_t>(in[0] | (in[1] << 8));
        in += 2;
        m(i, j) = static_cast<double>(f16_to_f32(h));
      }
  } else {
    throw DataError("u8 tensor cannot be converted to a float matrix");
  }
  return m;
}

}  // namespace cloq
