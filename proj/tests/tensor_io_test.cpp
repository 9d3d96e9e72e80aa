#include "ovrd/tensor_io.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "ovrd/rng.hpp"

namespace ovrd {
namespace {

namespace fs = std::filesystem;

class TensorIoTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("ovrd_tio_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
            "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

TEST_F(TensorIoTest, FileSizeMatchesFormatArithmetic) {
  std::vector<std::uint64_t> shape{2, 2};
  std::vector<float> values{1, 0, 0, 1};
  auto path = dir_ / "id.ovt";
  write_tensor(path, shape, values);
  // 4 magic + 1 version + 1 dtype + 4 ndim + 16 dims + 16 payload
  EXPECT_EQ(fs::file_size(path), 42u);
  TensorData t = read_tensor(path);
  EXPECT_EQ(t.shape, shape);
  EXPECT_EQ(t.values, values);
}

TEST_F(TensorIoTest, EmptyTensor) {
  std::vector<std::uint64_t> shape{0};
  auto path = dir_ / "empty.ovt";
  write_tensor(path, shape, {});
  EXPECT_EQ(fs::file_size(path), 18u);  // header only
  TensorData t = read_tensor(path);
  EXPECT_EQ(t.shape, shape);
  EXPECT_TRUE(t.values.empty());
}

TEST_F(TensorIoTest, RoundTripIsBitIdentical) {
  Rng rng(42);
  for (int it = 0; it < 100; ++it) {
    std::vector<std::uint64_t> shape{3, 5};
    std::vector<float> values(15);
    for (auto& v : values) v = static_cast<float>(rng.gaussian() * 1e3);
    auto path = dir_ / ("rt" + std::to_string(it) + ".ovt");
    write_tensor(path, shape, values);
    TensorData t = read_tensor(path);
    ASSERT_EQ(t.shape, shape);
    // Bitwise comparison.
    ASSERT_EQ(t.values.size(), values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
      std::uint32_t a, b;
      std::memcpy(&a, &values[i], 4);
      std::memcpy(&b, &t.values[i], 4);
      EXPECT_EQ(a, b);
    }
    // And write(read(file)) reproduces the file bytes exactly.
    auto path2 = dir_ / "copy.ovt";
    write_tensor(path2, t.shape, t.values);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), {});
    std::string b2((std::istreambuf_iterator<char>(f2)), {});
    EXPECT_EQ(b1, b2);
  }
}

TEST_F(TensorIoTest, ShapeValueMismatchThrows) {
  EXPECT_THROW(write_tensor(dir_ / "x.ovt", std::vector<std::uint64_t>{3},
                            std::vector<float>{1, 2}),
               std::invalid_argument);
}

TEST_F(TensorIoTest, DistinctErrors) {
  auto write_bytes = [&](const std::string& bytes) {
    auto p = dir_ / "bad.ovt";
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    f.close();
    return p;
  };
  std::string good = encode_tensor(std::vector<std::uint64_t>{2},
                                   std::vector<float>{1, 2});

  std::string bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW((void)read_tensor(write_bytes(bad_magic)), BadMagicError);

  std::string bad_version = good;
  bad_version[4] = 9;
  EXPECT_THROW((void)read_tensor(write_bytes(bad_version)), BadVersionError);

  std::string bad_dtype = good;
  bad_dtype[5] = 7;
  EXPECT_THROW((void)read_tensor(write_bytes(bad_dtype)), BadDtypeError);

  std::string truncated = good.substr(0, good.size() - 3);
  EXPECT_THROW((void)read_tensor(write_bytes(truncated)), TruncatedError);

  std::string oversized = good + "xx";
  EXPECT_THROW((void)read_tensor(write_bytes(oversized)), TruncatedError);

  EXPECT_THROW((void)read_tensor(dir_ / "does_not_exist.ovt"), TensorIoError);
}

TEST(TensorIoWiden, WidenNarrowRoundTrip) {
  std::vector<float> v{1.5f, -2.25f, 3.0f};
  auto d = widen(v);
  auto back = narrow(d);
  EXPECT_EQ(back, v);
}

}  // namespace
}  // namespace ovrd
