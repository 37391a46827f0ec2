#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "soe/random.hpp"
#include "soe/trajectory_io.hpp"

using namespace soe;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() / ("soe_io_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                         "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

// Float-representable values so the f32 payload round-trips exactly.
StateTrajectory random_trajectory(std::uint64_t seed) {
  Rng rng(seed);
  StateTrajectory t;
  const std::size_t rows = 1 + rng.index(40);
  const std::size_t cols = 1 + rng.index(24);
  t.states = Matrix(rows, cols);
  for (double& x : t.states.data()) x = static_cast<double>(static_cast<float>(rng.normal() * 10.0));
  if (rng.uniform() < 0.5)
    for (std::size_t i = 0; i < rows; ++i) t.token_texts.push_back(i % 3 ? "tok" + std::to_string(i) : "é∑ " + std::to_string(i));
  if (rng.uniform() < 0.5) t.correct = rng.uniform() < 0.5;
  if (rng.uniform() < 0.5) t.token_count = rows + rng.index(10000);
  t.layer_tag = static_cast<std::uint32_t>(rng.index(100));
  return t;
}

void put_u32(std::vector<unsigned char>& b, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b[at + i] = static_cast<unsigned char>(v >> (8 * i));
}

ErrorCode decode_error(const std::vector<unsigned char>& bytes) {
  try {
    decode_trajectory(bytes);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "decode succeeded";
  return ErrorCode::InvalidInput;
}

}  // namespace

TEST(TrajectoryFile, TwoByThreeLayoutByteForByte) {
  StateTrajectory t;
  t.states = Matrix{{1.0, -2.0, 0.5}, {3.0, 0.25, -8.0}};
  t.layer_tag = 7;
  const auto bytes = encode_trajectory(t);
  ASSERT_EQ(bytes.size(), kTrajectoryHeaderBytes + 24u);

  std::vector<unsigned char> expected{'S', 'O', 'E', 'T', 1, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0, 7, 0, 0, 0, 0, 0, 0, 0};
  for (float f : {1.0f, -2.0f, 0.5f, 3.0f, 0.25f, -8.0f}) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    for (int i = 0; i < 4; ++i) expected.push_back(static_cast<unsigned char>(u >> (8 * i)));
  }
  EXPECT_EQ(bytes, expected);
  // 1.0f is 0x3F800000 little-endian.
  EXPECT_EQ(bytes[24], 0x00);
  EXPECT_EQ(bytes[27], 0x3F);
}

TEST(TrajectoryFile, OptionalBlocksLayout) {
  StateTrajectory t;
  t.states = Matrix{{1.0}, {2.0}};
  t.token_texts = {"ab", ""};
  t.correct = true;
  t.token_count = 300;
  const auto b = encode_trajectory(t);
  ASSERT_EQ(b.size(), 24u + 8u + (4 + 2) + 4 + 1 + 8);
  EXPECT_EQ(b[20], 0x07);
  EXPECT_EQ(b[32], 2);
  EXPECT_EQ(b[36], 'a');
  EXPECT_EQ(b[38], 0);
  EXPECT_EQ(b[42], 1);
  EXPECT_EQ(b[43], 300 & 0xFF);
  EXPECT_EQ(b[44], 300 >> 8);
  EXPECT_EQ(decode_trajectory(b), t);
}

TEST(TrajectoryFile, EmptyTrajectoryRejected) {
  StateTrajectory t;
  try {
    encode_trajectory(t);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidInput);
  }
  t.states = Matrix(2, 2);
  t.token_texts = {"only one"};
  EXPECT_THROW(encode_trajectory(t), Error);
}

TEST(TrajectoryFile, Seed47RoundTripsThroughDisk) {
  TempDir dir;
  const StateTrajectory t = random_trajectory(47);
  write_trajectory(t, dir / "a.soet");
  EXPECT_EQ(fs::file_size(dir / "a.soet"), encode_trajectory(t).size());
  const StateTrajectory back = read_trajectory(dir / "a.soet");
  EXPECT_EQ(back, t);
  EXPECT_EQ(std::memcmp(back.states.data().data(), t.states.data().data(), 8 * t.states.data().size()), 0);
}

TEST(TrajectoryFile, HundredRandomRoundTrips) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const StateTrajectory t = random_trajectory(seed + 9000);
    const auto bytes = encode_trajectory(t);
    EXPECT_EQ(decode_trajectory(bytes), t) << seed;
    EXPECT_EQ(encode_trajectory(decode_trajectory(bytes)), bytes);
  }
}

TEST(TrajectoryFile, DoublesAreRoundedToFloat) {
  StateTrajectory t;
  t.states = Matrix{{0.1, 1e-50}};
  const StateTrajectory back = decode_trajectory(encode_trajectory(t));
  EXPECT_EQ(back.states(0, 0), static_cast<double>(0.1f));
  EXPECT_EQ(back.states(0, 1), 0.0);
}

TEST(TrajectoryFile, MalformedInputs) {
  StateTrajectory t;
  t.states = Matrix{{1.0, 2.0}, {3.0, 4.0}};
  t.token_texts = {"x", "y"};
  t.correct = false;
  const auto good = encode_trajectory(t);

  auto bad = good;
  bad[0] = 'X';
  EXPECT_EQ(decode_error(bad), ErrorCode::FormatError);

  bad = good;
  put_u32(bad, 4, 2);
  EXPECT_EQ(decode_error(bad), ErrorCode::UnsupportedVersion);

  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{20}, std::size_t{30}, good.size() - 1}) {
    std::vector<unsigned char> trunc(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(cut));
    EXPECT_EQ(decode_error(trunc), ErrorCode::FormatError) << cut;
  }

  bad = good;
  bad.push_back(0);
  EXPECT_EQ(decode_error(bad), ErrorCode::FormatError);

  bad = good;
  put_u32(bad, 20, 0x10);
  EXPECT_EQ(decode_error(bad), ErrorCode::FormatError);

  bad = good;
  put_u32(bad, 8, 0);
  EXPECT_EQ(decode_error(bad), ErrorCode::FormatError);

  bad = good;
  put_u32(bad, 8, 0xFFFFFFFF);
  put_u32(bad, 12, 0xFFFFFFFF);
  EXPECT_EQ(decode_error(bad), ErrorCode::FormatError);

  bad = good;
  bad.back() = 2;
  EXPECT_EQ(decode_error(bad), ErrorCode::FormatError);

  bad = good;
  put_u32(bad, 24, 0x7FC00000);
  EXPECT_EQ(decode_error(bad), ErrorCode::FormatError);

  bad = good;
  put_u32(bad, 40, 1000);
  EXPECT_EQ(decode_error(bad), ErrorCode::FormatError);
}

TEST(TrajectoryFile, MissingFileIsIoError) {
  try {
    read_trajectory("/nonexistent/dir/x.soet");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IoError);
  }
  StateTrajectory t;
  t.states = Matrix{{1.0}};
  EXPECT_THROW(write_trajectory(t, "/nonexistent/dir/x.soet"), Error);
}

TEST(ManifoldFile, RoundTripAndErrors) {
  TempDir dir;
  Rng rng(51);
  BiasManifold m;
  m.mean = rng.normal_vector(6);
  m.basis = random_orthonormal(rng, 6, 2);
  m.eigenvalues = {2.5, 0.75};
  m.energy_fraction = 0.93;
  m.sample_count = 8;
  write_manifold(m, dir / "m.soem");
  const auto bytes = detail::read_file(dir / "m.soem");
  EXPECT_EQ(bytes.size(), 4u + 4 * 4 + 8 + 8 * (6 + 2 + 12));
  const BiasManifold back = read_manifold(dir / "m.soem");
  EXPECT_EQ(back.mean, m.mean);
  EXPECT_EQ(back.basis, m.basis);
  EXPECT_EQ(back.eigenvalues, m.eigenvalues);
  EXPECT_EQ(back.energy_fraction, m.energy_fraction);
  EXPECT_EQ(back.sample_count, m.sample_count);

  auto bad = bytes;
  bad[1] = 'X';
  EXPECT_THROW(decode_manifold(bad), Error);
  bad = bytes;
  put_u32(bad, 4, 9);
  try {
    decode_manifold(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnsupportedVersion);
  }
  bad = bytes;
  bad.pop_back();
  try {
    decode_manifold(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::FormatError);
  }
}
