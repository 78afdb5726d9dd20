#include "doctest.h"

#include <cstring>
#include <sstream>

#include "cloq/errors.hpp"
#include "cloq/tensor_store.hpp"

#include "support.hpp"

using namespace cloq;
using cloq::testing::Rng;
using cloq::testing::fnv1a;

namespace {

std::string serialize(const TensorBundle& bundle) {
  std::ostringstream out(std::ios::binary);
  write_bundle(bundle, out);
  return out.str();
}

TensorBundle parse(const std::string& bytes) {
  std::istringstream in(bytes, std::ios::binary);
  return read_bundle(in);
}

TensorEntry random_entry(Rng& rng) {
  TensorEntry entry;
  const int kind = static_cast<int>(rng.uniform_int(0, 2));
  entry.dtype = kind == 0 ? Dtype::F32 : kind == 1 ? Dtype::F16 : Dtype::U8;
  const int ndim = static_cast<int>(rng.uniform_int(1, 4));
  for (int d = 0; d < ndim; ++d) entry.shape.push_back(rng.uniform_int(1, 5));
  entry.data.resize(static_cast<std::size_t>(entry.element_count()) * dtype_size(entry.dtype));
  for (std::uint8_t& byte : entry.data) byte = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  return entry;
}

}  // namespace

TEST_CASE("empty bundle round-trips to a header-only file") {
  TensorBundle bundle;
  const std::string bytes = serialize(bundle);
  CHECK(bytes.size() == 64);  // header only
  const TensorBundle back = parse(bytes);
  CHECK(back.entries.empty());
  CHECK(back.creator == bundle.creator);
}

TEST_CASE("single f32 matrix round-trips bit-exactly") {
  TensorBundle bundle;
  Eigen::MatrixXd w(2, 2);
  w << 1, 2, 3, 4;
  bundle.add("W", make_f32_entry(w));

  const TensorBundle back = parse(serialize(bundle));
  REQUIRE(back.entries.size() == 1);
  const TensorEntry& entry = back.at("W");
  CHECK(entry.dtype == Dtype::F32);
  CHECK(entry.shape == std::vector<std::int64_t>{2, 2});
  CHECK(entry.data == bundle.at("W").data);
  CHECK(entry_to_matrix(entry) == w);
}

TEST_CASE("serialization is deterministic") {
  Rng rng(7);
  TensorBundle bundle;
  for (int i = 0; i < 5; ++i) bundle.add("t/" + std::to_string(i), random_entry(rng));
  const std::string first = serialize(bundle);
  const std::string second = serialize(bundle);
  CHECK(fnv1a(first) == fnv1a(second));
  CHECK(first == second);
}

TEST_CASE("f16 payload bytes pass through without conversion") {
  TensorEntry entry;
  entry.dtype = Dtype::F16;
  entry.shape = {3};
  entry.data = {0x00, 0x3C, 0x01, 0x7C, 0xFF, 0x03};  // includes inf-adjacent and subnormal bits
  TensorBundle bundle;
  bundle.add("adapter/A", entry);
  const TensorBundle back = parse(serialize(bundle));
  CHECK(back.at("adapter/A").data == entry.data);
}

TEST_CASE("truncated payload names the entry") {
  TensorBundle bundle;
  bundle.add("layer0/W", make_f32_entry(Eigen::MatrixXd::Ones(4, 4)));
  std::string bytes = serialize(bundle);
  bytes.resize(bytes.size() - 8);
  CHECK_THROWS_WITH_AS(parse(bytes), doctest::Contains("layer0/W"), DataError);
}

TEST_CASE("bad magic is rejected") {
  std::string bytes = serialize(TensorBundle{});
  bytes[0] = 'X';
  CHECK_THROWS_WITH_AS(parse(bytes), doctest::Contains("magic"), DataError);
}

TEST_CASE("reader rejects versions ahead of it") {
  std::string bytes = serialize(TensorBundle{});
  bytes[4] = 99;
  CHECK_THROWS_WITH_AS(parse(bytes), doctest::Contains("version"), DataError);
}

TEST_CASE("unknown dtype code is rejected") {
  TensorBundle bundle;
  bundle.add("W", make_f32_entry(Eigen::MatrixXd::Zero(1, 1)));
  std::string bytes = serialize(bundle);
  bytes[64 + 128] = 9;  // dtype byte of the first table record
  CHECK_THROWS_WITH_AS(parse(bytes), doctest::Contains("dtype"), DataError);
}

TEST_CASE("entry validation") {
  TensorBundle bundle;
  TensorEntry entry;
  entry.dtype = Dtype::F32;
  entry.shape = {2};
  entry.data.resize(8);

  SUBCASE("bad names") {
    CHECK_THROWS_AS(bundle.add("", entry), DataError);
    CHECK_THROWS_AS(bundle.add("has space", entry), DataError);
    CHECK_THROWS_AS(bundle.add("ünïcode", entry), DataError);
    CHECK(valid_tensor_name("layers.0/att/W-q_v"));
  }
  SUBCASE("name collision") {
    bundle.add("W", entry);
    CHECK_THROWS_WITH_AS(bundle.add("W", entry), doctest::Contains("duplicate"), DataError);
  }
  SUBCASE("length mismatch") {
    entry.data.resize(7);
    CHECK_THROWS_AS(bundle.add("W", entry), DataError);
  }
  SUBCASE("too many dims") {
    entry.shape = {1, 1, 1, 1, 2};
    CHECK_THROWS_AS(bundle.add("W", entry), DataError);
  }
  SUBCASE("zero dim") {
    entry.shape = {0};
    entry.data.clear();
    CHECK_THROWS_AS(bundle.add("W", entry), DataError);
  }
}

TEST_CASE("payload offsets are 64-byte aligned and strictly increasing") {
  Rng rng(11);
  TensorBundle bundle;
  for (int i = 0; i < 8; ++i) bundle.add("n" + std::to_string(i), random_entry(rng));
  const std::string bytes = serialize(bundle);

  std::uint64_t prev_end = 0;
  std::size_t rec_base = 64;
  for (std::size_t rec = 0; rec < bundle.entries.size(); ++rec, rec_base += 184) {
    std::uint64_t offset = 0, length = 0;
    std::memcpy(&offset, bytes.data() + rec_base + 168, 8);
    std::memcpy(&length, bytes.data() + rec_base + 176, 8);
    CHECK(offset % 64 == 0);
    CHECK(offset >= prev_end);
    CHECK(offset + length <= bytes.size());
    prev_end = offset + length;
  }
}

TEST_CASE("random bundles round-trip (names, dtypes, shapes, payloads)") {
  Rng rng(1234);
  for (int trial = 0; trial < 50; ++trial) {
    TensorBundle bundle;
    const int entries = static_cast<int>(rng.uniform_int(0, 6));
    for (int i = 0; i < entries; ++i)
      bundle.add("g" + std::to_string(rng.uniform_int(0, 999)) + "/t" + std::to_string(i),
                 random_entry(rng));
    const TensorBundle back = parse(serialize(bundle));
    CHECK(back == bundle);
  }
}

TEST_CASE("save_bundle replaces files atomically and load reads them back") {
  const auto dir = std::filesystem::temp_directory_path() / "cloq_store_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "bundle.clqb";

  TensorBundle bundle;
  bundle.add("W", make_f32_entry(Eigen::MatrixXd::Random(3, 3)));
  save_bundle(bundle, path);
  CHECK(load_bundle(path) == bundle);

  TensorBundle second;
  second.add("W", make_f32_entry(Eigen::MatrixXd::Zero(2, 5)));
  save_bundle(second, path);
  CHECK(load_bundle(path) == second);
  CHECK(!std::filesystem::exists(path.string() + ".tmp"));
  std::filesystem::remove_all(dir);
}
