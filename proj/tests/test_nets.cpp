#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "refineseg/checkpoint.hpp"
#include "refineseg/data.hpp"
#include "refineseg/nets.hpp"

using namespace refineseg;

namespace {

NetConfig config_for(BackboneKind kind, int size = 64) {
  NetConfig c;
  c.backbone_kind = kind;
  c.input_size = size;
  return c;
}

}  // namespace

class ScaleLadder : public ::testing::TestWithParam<BackboneKind> {};

TEST_P(ScaleLadder, SideOutputsAndRefinedShapes) {
  const NetConfig c = config_for(GetParam());
  const RefineNet net(c, init_params(c, 1));
  const Sample s = make_phantom(3, 64);
  const MultiScaleSeg seg = net.backbone_forward(s.image);
  EXPECT_EQ(seg.full.height, 64);
  EXPECT_EQ(seg.full.width, 64);
  EXPECT_EQ(seg.half.height, 32);
  EXPECT_EQ(seg.half.width, 32);
  EXPECT_EQ(seg.quarter.height, 16);
  EXPECT_EQ(seg.quarter.width, 16);
  const ProbMap refined =
      net.refine_forward(seg, render_seeds(SeedSet{{{30, 30}}, {{2, 2}}}, 64, 64, 5.0));
  EXPECT_EQ(refined.height, 64);
  EXPECT_EQ(refined.width, 64);
  for (double v : refined.values) {
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 1.0);
  }
}

TEST_P(ScaleLadder, DeterministicForward) {
  const NetConfig c = config_for(GetParam());
  const ModelParams p = init_params(c, 9);
  const RefineNet a(c, p), b(c, p);
  const Sample s = make_phantom(4, 64);
  EXPECT_EQ(a.backbone_forward(s.image).full, b.backbone_forward(s.image).full);
}

INSTANTIATE_TEST_SUITE_P(Backbones, ScaleLadder,
                         ::testing::Values(BackboneKind::kUnet, BackboneKind::kFcn),
                         [](const auto& info) { return to_string(info.param); });

TEST(NetConfig, Validation) {
  NetConfig c;
  EXPECT_NO_THROW(c.validate());
  c.input_size = 63;
  EXPECT_THROW(c.validate(), Error);
  c.input_size = 4;
  EXPECT_THROW(c.validate(), Error);
  c = NetConfig{};
  c.depth = 2;
  EXPECT_THROW(c.validate(), Error);
  c = NetConfig{};
  c.base_channels = 1;
  EXPECT_THROW(c.validate(), Error);
}

TEST(NetConfig, BackboneNames) {
  EXPECT_EQ(parse_backbone_kind("unet"), BackboneKind::kUnet);
  EXPECT_EQ(parse_backbone_kind("fcn"), BackboneKind::kFcn);
  EXPECT_EQ(to_string(BackboneKind::kFcn), "fcn");
  EXPECT_THROW(parse_backbone_kind("resnet"), Error);
}

TEST(Params, InitIsSeededAndNamed) {
  const NetConfig c;
  const ModelParams a = init_params(c, 5), b = init_params(c, 5), d = init_params(c, 6);
  EXPECT_EQ(a, b);
  EXPECT_FALSE(a == d);
  EXPECT_TRUE(a.contains("backbone.enc1.conv1.weight"));
  EXPECT_TRUE(a.contains("backbone.side_quarter.bias"));
  EXPECT_TRUE(a.contains("refine.up_full.weight"));
  EXPECT_TRUE(a.contains("refine.out.weight"));
  for (const auto& e : a.entries()) {
    if (e.name.ends_with(".bias")) {
      for (double v : e.value.data()) ASSERT_EQ(v, 0.0) << e.name;
    }
  }
}

TEST(Params, KaimingBound) {
  const ModelParams p = init_params(NetConfig{}, 2);
  const Tensor& w = p.get("backbone.enc1.conv2.weight");  // (8, 8, 3, 3)
  const double bound = std::sqrt(6.0 / (8 * 9));
  double max_abs = 0.0;
  for (double v : w.data()) max_abs = std::max(max_abs, std::abs(v));
  EXPECT_LE(max_abs, bound);
  EXPECT_GT(max_abs, 0.8 * bound);
}

TEST(Params, InferConfigRecoversShapes) {
  for (BackboneKind kind : {BackboneKind::kUnet, BackboneKind::kFcn}) {
    NetConfig c = config_for(kind);
    c.base_channels = 6;
    c.head_channels = 5;
    const NetConfig got = infer_config(init_params(c, 1));
    EXPECT_EQ(got.backbone_kind, kind);
    EXPECT_EQ(got.base_channels, 6);
    EXPECT_EQ(got.head_channels, 5);
    EXPECT_EQ(got.depth, 3);
    EXPECT_EQ(got.input_size, 64);
  }
}

TEST(Params, CheckParamsRejectsMismatch) {
  const NetConfig c;
  ModelParams p = init_params(c, 1);
  NetConfig fcn = c;
  fcn.backbone_kind = BackboneKind::kFcn;
  EXPECT_THROW(check_params(fcn, p), Error);
  ModelParams missing;
  for (const auto& e : p.entries()) {
    if (e.name != "refine.out.bias") missing.add(e.name, e.value);
  }
  EXPECT_THROW(check_params(c, missing), Error);
  EXPECT_THROW(RefineNet(c, missing), Error);
}

TEST(RefineNet, RejectsWrongInput) {
  const NetConfig c;
  const RefineNet net(c, init_params(c, 1));
  EXPECT_THROW(net.backbone_forward(Image(32, 32, 0.5)), Error);
  const MultiScaleSeg seg = net.backbone_forward(Image(64, 64, 0.5));
  EXPECT_THROW(net.refine_forward(seg, render_seeds(SeedSet{}, 32, 32, 5.0)), Error);
}

TEST(Binarize, ThresholdIsInclusive) {
  ProbMap p(1, 3);
  p.values = {0.49, 0.5, 0.51};
  const BinaryMask m = binarize(p, 0.5);
  EXPECT_EQ(m.values, (std::vector<std::uint8_t>{0, 1, 1}));
  EXPECT_THROW(binarize(p, 0.0), Error);
  EXPECT_THROW(binarize(p, 1.0), Error);
}

TEST(DifficultyMap, PeaksAtHalf) {
  ProbMap p(1, 5);
  p.values = {0.0, 0.25, 0.5, 0.75, 1.0};
  const Image d = difficulty_map(p);
  const std::vector<double> want{0.0, 0.5, 1.0, 0.5, 0.0};
  for (int i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(d.values[i], want[i]);
}

// ---------------------------------------------------------------------------

TEST(Checkpoint, RoundTripAtFloat32) {
  const ModelParams p = init_params(NetConfig{}, 3);
  const ModelParams q = decode_checkpoint(encode_checkpoint(p));
  ASSERT_EQ(q.size(), p.size());
  for (size_t i = 0; i < p.size(); ++i) {
    const auto& a = p.entries()[i];
    const auto& b = q.entries()[i];
    ASSERT_EQ(a.name, b.name);
    ASSERT_EQ(a.value.shape(), b.value.shape());
    for (size_t k = 0; k < a.value.numel(); ++k) {
      ASSERT_EQ(b.value[k], static_cast<double>(static_cast<float>(a.value[k])));
    }
  }
  // Encoding a decoded checkpoint is the identity on bytes.
  EXPECT_EQ(encode_checkpoint(q), encode_checkpoint(p));
}

TEST(Checkpoint, LayoutHeader) {
  ModelParams p;
  p.add("a", Tensor({2}, {1.0, 2.0}));
  const std::string bytes = encode_checkpoint(p);
  EXPECT_EQ(bytes.substr(0, 10), "RSEGCKPT1\n");
  std::uint64_t len = 0;
  for (int i = 7; i >= 0; --i) len = (len << 8) | static_cast<std::uint8_t>(bytes[10 + i]);
  const std::string header = bytes.substr(18, len);
  EXPECT_NE(header.find("\"a\""), std::string::npos);
  EXPECT_EQ(bytes.size(), 18 + len + 8);
}

TEST(Checkpoint, CorruptInputsAreParseErrors) {
  const std::string good = encode_checkpoint(init_params(NetConfig{}, 1));
  auto expect_parse = [](const std::string& bytes) {
    try {
      decode_checkpoint(bytes);
      FAIL() << "accepted corrupt checkpoint";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kParse) << e.what();
    }
  };
  expect_parse("");
  expect_parse("RSEGCKPT2\n" + good.substr(10));
  expect_parse(good.substr(0, 14));
  expect_parse(good.substr(0, good.size() - 3));
  expect_parse(good + "x");
  std::string bad_json = good;
  bad_json[18] = '[';
  expect_parse(bad_json);
  // A NaN in the payload.
  std::string nan = good;
  const float q = std::nanf("");
  std::memcpy(&nan[nan.size() - 4], &q, 4);
  expect_parse(nan);
}

TEST(Checkpoint, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "refineseg_nets_ckpt.bin";
  const ModelParams p = init_params(NetConfig{}, 8);
  save_checkpoint(path, p);
  EXPECT_EQ(encode_checkpoint(load_checkpoint(path)), encode_checkpoint(p));
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path), Error);
}
