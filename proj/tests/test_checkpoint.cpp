#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "eened/eened.hpp"

using eened::CheckpointError;
using eened::Shape;

namespace {

eened::EenedModel<float> toy_model() {
  eened::ModelConfig c;
  c.d_model = 8;
  c.n_blocks = 2;
  c.n_heads = 2;
  c.head_dim = 4;
  c.d_pwff = 16;
  c.t_in = 16;
  c.classifier_hidden = 8;
  c.seed = 5;
  auto m = eened::model_init<float>(c);
  m.input_norm = {-4.25, 170.5};
  return m;
}

eened::Tensor<float> fixed_input() {
  std::vector<float> x(16);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(std::sin(0.7 * static_cast<double>(i)));
  return eened::Tensor<float>(Shape{16}, x);
}

CheckpointError::Kind load_error(const std::string& bytes) {
  try {
    eened::deserialize_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected CheckpointError";
  return CheckpointError::Kind::io;
}

}  // namespace

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  const auto bytes = eened::serialize_checkpoint(toy_model());
  EXPECT_EQ(eened::serialize_checkpoint(eened::deserialize_checkpoint(bytes)), bytes);
}

TEST(Checkpoint, FileRoundTripReproducesForwardBitwise) {
  const auto m = toy_model();
  const auto path = std::filesystem::temp_directory_path() / "eened_test_roundtrip.ckpt";
  eened::save_checkpoint(m, path);
  const auto loaded = eened::load_checkpoint(path);
  std::filesystem::remove(path);
  EXPECT_EQ(loaded.config, m.config);
  EXPECT_EQ(loaded.input_norm.mean, m.input_norm.mean);
  EXPECT_EQ(loaded.input_norm.stddev, m.input_norm.stddev);
  const float before = eened::model_forward(m, fixed_input())[0];
  const float after = eened::model_forward(loaded, fixed_input())[0];
  EXPECT_EQ(std::memcmp(&before, &after, sizeof before), 0);
}

TEST(Checkpoint, StartsWithMagicAndConfigText) {
  const auto bytes = eened::serialize_checkpoint(toy_model());
  EXPECT_EQ(bytes.substr(0, 8), "EENEDCK1");
  EXPECT_NE(bytes.find("d_model=8\n"), std::string::npos);
}

TEST(Checkpoint, CorruptMagicIsRejected) {
  auto bytes = eened::serialize_checkpoint(toy_model());
  for (std::size_t i = 0; i < 8; ++i) {
    auto corrupt = bytes;
    corrupt[i] = static_cast<char>(corrupt[i] ^ 0x20);
    EXPECT_EQ(load_error(corrupt), CheckpointError::Kind::bad_magic) << "byte " << i;
  }
}

TEST(Checkpoint, TruncationIsRejectedAtEveryLength) {
  const auto bytes = eened::serialize_checkpoint(toy_model());
  for (std::size_t len = 8; len < bytes.size(); len += 97) {
    const auto kind = load_error(bytes.substr(0, len));
    EXPECT_TRUE(kind == CheckpointError::Kind::truncated || kind == CheckpointError::Kind::bad_config) << len;
  }
  EXPECT_EQ(load_error(bytes.substr(0, bytes.size() - 1)), CheckpointError::Kind::truncated);
}

TEST(Checkpoint, TrailingBytesAreRejected) {
  EXPECT_EQ(load_error(eened::serialize_checkpoint(toy_model()) + "x"), CheckpointError::Kind::trailing_data);
}

TEST(Checkpoint, ShapeTableMustMatchConfig) {
  auto bytes = eened::serialize_checkpoint(toy_model());
  const auto at = bytes.find("d_pwff=16");
  ASSERT_NE(at, std::string::npos);
  bytes[at + 8] = '8';  // d_pwff=18: header still valid, tensor shapes now disagree
  EXPECT_EQ(load_error(bytes), CheckpointError::Kind::shape_mismatch);
}

TEST(Checkpoint, InvalidConfigIsRejected) {
  auto bytes = eened::serialize_checkpoint(toy_model());
  const auto at = bytes.find("n_heads=2");
  bytes[at + 8] = '3';
  EXPECT_EQ(load_error(bytes), CheckpointError::Kind::bad_config);
}

TEST(Checkpoint, MissingFileIsIoError) {
  try {
    eened::load_checkpoint("/nonexistent/dir/model.ckpt");
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), CheckpointError::Kind::io);
  }
}
