#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "disents/checkpoint.hpp"
#include "disents/error.hpp"
#include "test_util.hpp"

namespace disents {
namespace {

namespace fs = std::filesystem;

ModelConfig config(std::size_t experts, BackboneKind kind = BackboneKind::Linear) {
  ModelConfig c;
  c.backbone.kind = kind;
  c.backbone.lookback = 12;
  c.backbone.horizon = 6;
  c.backbone.hidden = 8;
  c.backbone.decomp_kernel = 5;
  c.experts = experts;
  c.d_model = 8;
  c.heads = 2;
  return c;
}

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("disents_ckpt_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

TEST_F(CheckpointTest, RoundTripAllKinds) {
  for (BackboneKind kind : {BackboneKind::Linear, BackboneKind::DecompLinear, BackboneKind::Mlp}) {
    ModelConfig c = config(2, kind);
    c.seed = 1;
    DisenTSModel a(c);
    a.registry().update(0, testing::random_tensor({12, 6}, 3));
    save_checkpoint(a, dir_);

    c.seed = 2;
    DisenTSModel b(c);
    load_checkpoint(b, dir_);
    EXPECT_EQ(b.snapshot().params, a.snapshot().params) << to_string(kind);
    EXPECT_EQ(b.registry().gamma(), a.registry().gamma());
    EXPECT_EQ(b.registry().update_counts(), a.registry().update_counts());

    Tensor x = testing::random_tensor({2, 3, 12}, 4);
    EXPECT_EQ(a.forward(x, false).prediction.value(), b.forward(x, false).prediction.value());
    fs::remove_all(dir_);
  }
}

TEST_F(CheckpointTest, ManifestListsEveryArray) {
  DisenTSModel a(config(3));
  save_checkpoint(a, dir_);
  std::ifstream in(dir_ / "manifest.json");
  std::string text{std::istreambuf_iterator<char>(in), {}};
  EXPECT_NE(text.find("\"expert2.weight\""), std::string::npos);
  EXPECT_NE(text.find("\"ema.gamma2\""), std::string::npos);
  EXPECT_NE(text.find("\"float64\""), std::string::npos);
  EXPECT_EQ(fs::file_size(dir_ / "expert0.weight.bin"), 12u * 6u * sizeof(double));
}

TEST_F(CheckpointTest, ShapeMismatchRejected) {
  DisenTSModel a(config(2));
  save_checkpoint(a, dir_);
  DisenTSModel wrong_k(config(3));
  EXPECT_THROW(load_checkpoint(wrong_k, dir_), ShapeError);
  ModelConfig longer = config(2);
  longer.backbone.lookback = 24;
  DisenTSModel wrong_l(longer);
  EXPECT_THROW(load_checkpoint(wrong_l, dir_), ShapeError);
  DisenTSModel wrong_kind(config(2, BackboneKind::Mlp));
  EXPECT_THROW(load_checkpoint(wrong_kind, dir_), ShapeError);
}

TEST_F(CheckpointTest, MissingFilesRejected) {
  DisenTSModel a(config(2));
  EXPECT_THROW(load_checkpoint(a, dir_), Error);
  save_checkpoint(a, dir_);
  fs::remove(dir_ / "gate.w_out.bin");
  EXPECT_THROW(load_checkpoint(a, dir_), Error);
  std::ofstream(dir_ / "manifest.json") << "{\"experts\": 2}";
  EXPECT_THROW(load_checkpoint(a, dir_), ParseError);
}

}  // namespace
}  // namespace disents
