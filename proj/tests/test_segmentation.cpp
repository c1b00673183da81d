#include <gtest/gtest.h>

#include <cmath>

#include "cxr/error.hpp"
#include "cxr/random.hpp"
#include "cxr/segmentation.hpp"

using namespace cxr;

namespace {

Image8 noise(int w, int h, std::uint64_t seed) {
  DeterministicRng rng(seed);
  Image8 img(w, h);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

nn::Tensor3 random_tensor(std::size_t c, std::size_t h, std::size_t w, DeterministicRng& rng) {
  nn::Tensor3 t(c, h, w);
  for (double& v : t.data) v = rng.uniform(-3, 3);
  return t;
}

std::size_t conv(std::size_t in, std::size_t out, std::size_t k) { return in * out * k * k + out; }

}  // namespace

TEST(FilterSchedule, DoublingForAttentionAndNested) {
  EXPECT_EQ(filter_schedule(SegmentationConfig::full_scale(UNetVariant::AttentionUNet)),
            (std::vector<int>{64, 128, 256, 512, 1024}));
  EXPECT_EQ(filter_schedule(SegmentationConfig::full_scale(UNetVariant::UNetPlusPlus)),
            (std::vector<int>{64, 128, 256, 512, 1024}));
  auto one = SegmentationConfig::full_scale(UNetVariant::AttentionUNet);
  one.depth = 1;
  EXPECT_EQ(filter_schedule(one), (std::vector<int>{64}));
}

TEST(FilterSchedule, DenseGrowth) {
  EXPECT_EQ(dense_block_channels(32, 4, 12), 80);
  EXPECT_EQ(dense_block_channels(32, 0, 12), 32);
  int c = 32;
  for (int b = 0; b < 4; ++b) c = dense_block_channels(c, 4, 12);
  EXPECT_EQ(c, 224);
  EXPECT_EQ(filter_schedule(SegmentationConfig::full_scale(UNetVariant::DenseUNet)),
            (std::vector<int>{80, 128, 176, 224}));
}

TEST(Config, FullScaleConstants) {
  const auto a = SegmentationConfig::full_scale(UNetVariant::AttentionUNet);
  EXPECT_EQ(a.dropout, 0.3);
  EXPECT_EQ(a.gate_threshold, 0.5);
  EXPECT_EQ(a.mask_threshold, 0.5);
  EXPECT_EQ(a.batch_size, 8);
  EXPECT_EQ(a.learning_rate, 0.0005);
  EXPECT_EQ(a.lr_decay, 0.9);
  EXPECT_EQ(a.lr_decay_every_epochs, 15);
  const auto d = SegmentationConfig::full_scale(UNetVariant::DenseUNet);
  EXPECT_EQ(d.growth_rate_k, 12);
  EXPECT_EQ(d.base_filters, 32);
  EXPECT_EQ(d.depth, 4);
  auto bad = a;
  bad.mask_threshold = 1.0;
  EXPECT_THROW(bad.validate(), Error);
  bad = a;
  bad.base_filters = 0;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(ParameterCount, SingleConv) { EXPECT_EQ(conv_parameter_count(1, 64, 3), 640u); }

TEST(ParameterCount, ClosedFormMatchesInstantiated) {
  for (UNetVariant v : kAllUNetVariants) {
    for (int depth : {1, 2, 3, 4}) {
      auto cfg = SegmentationConfig::toy(v);
      cfg.depth = depth;
      EXPECT_EQ(UNetModel(cfg, 1).parameter_count(), parameter_count(cfg)) << to_string(v) << " depth " << depth;
    }
  }
}

TEST(ParameterCount, DepthMonotone) {
  for (UNetVariant v : kAllUNetVariants) {
    auto cfg = SegmentationConfig::full_scale(v);
    cfg.depth = 5;
    const std::size_t d5 = parameter_count(cfg);
    cfg.depth = 4;
    EXPECT_GT(d5, parameter_count(cfg)) << to_string(v);
  }
}

TEST(ParameterCount, DenseLayerAccounting) {
  // Single-level dense network: stem, one block, head.
  auto cfg = SegmentationConfig::full_scale(UNetVariant::DenseUNet);
  cfg.depth = 1;
  std::size_t expected = conv(1, 32, 3);
  for (std::size_t i = 0; i < 4; ++i) expected += conv(32 + i * 12, 12, 3);
  expected += conv(80, 2, 1);
  EXPECT_EQ(parameter_count(cfg), expected);
}

TEST(ParameterCount, AttentionTwoLevels) {
  auto cfg = SegmentationConfig::toy(UNetVariant::AttentionUNet);
  cfg.depth = 2;  // filters 8, 16; gate inter 4
  const std::size_t enc = conv(1, 8, 3) + conv(8, 8, 3) + conv(8, 16, 3) + conv(16, 16, 3);
  const std::size_t gate = conv(16, 4, 1) + conv(8, 4, 1) + conv(4, 1, 1);
  const std::size_t dec = conv(16, 8, 1) + conv(16, 8, 3) + conv(8, 8, 3);
  EXPECT_EQ(parameter_count(cfg), enc + gate + dec + conv(8, 2, 1));
}

TEST(ParameterCount, FullScaleNotExecutable) {
  try {
    UNetModel(SegmentationConfig::full_scale(UNetVariant::AttentionUNet), 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::BackendUnavailable);
  }
}

TEST(NestedGraph, ConnectionCountMatchesFormula) {
  for (int depth = 1; depth <= 7; ++depth) {
    const auto nodes = nested_skip_graph(depth);
    std::size_t edges = 0;
    for (const auto& n : nodes) {
      EXPECT_EQ(n.same_level_inputs.size(), static_cast<std::size_t>(n.column));
      EXPECT_EQ(n.has_upsampled_input, n.column > 0);
      for (const auto& [i, j] : n.same_level_inputs) {
        EXPECT_EQ(i, n.level);
        EXPECT_LT(j, n.column);
      }
      edges += n.same_level_inputs.size() + (n.has_upsampled_input ? 1 : 0);
    }
    // Column j holds depth - j nodes, each with j skips plus one upsample.
    std::size_t formula = 0;
    for (int j = 1; j < depth; ++j) formula += static_cast<std::size_t>((depth - j) * (j + 1));
    EXPECT_EQ(edges, formula) << depth;
    EXPECT_EQ(nodes.size(), static_cast<std::size_t>(depth * (depth + 1) / 2));
  }
}

TEST(NestedGraph, EvaluationOrderRespectsDependencies) {
  const auto nodes = nested_skip_graph(5);
  auto position = [&](int i, int j) {
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      if (nodes[k].level == i && nodes[k].column == j) return k;
    }
    return nodes.size();
  };
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    for (const auto& [i, j] : nodes[k].same_level_inputs) EXPECT_LT(position(i, j), k);
    if (nodes[k].has_upsampled_input) EXPECT_LT(position(nodes[k].level + 1, nodes[k].column - 1), k);
  }
}

TEST(AttentionGate, ZeroPreactivationIsHalf) {
  DeterministicRng rng(1);
  AttentionGate g = AttentionGate::make(8, 4, 2, rng);
  for (auto* c : {&g.w_gating, &g.w_skip, &g.psi}) {
    std::fill(c->weights.begin(), c->weights.end(), 0.0);
    std::fill(c->bias.begin(), c->bias.end(), 0.0);
  }
  const nn::Tensor3 alpha = g.coefficients(random_tensor(8, 4, 4, rng), random_tensor(4, 8, 8, rng));
  ASSERT_EQ(alpha.channels, 1u);
  for (double a : alpha.data) EXPECT_EQ(a, 0.5);
}

TEST(AttentionGate, BoundedAndShrinksSkip) {
  DeterministicRng rng(2);
  for (int t = 0; t < 20; ++t) {
    const AttentionGate g = AttentionGate::make(6, 3, 2, rng);
    const nn::Tensor3 skip = random_tensor(3, 6, 10, rng);
    const nn::Tensor3 alpha = g.coefficients(random_tensor(6, 3, 5, rng), skip);
    for (double a : alpha.data) {
      EXPECT_GE(a, 0.0);
      EXPECT_LE(a, 1.0);
    }
    const nn::Tensor3 gated = apply_gate(alpha, skip);
    for (std::size_t i = 0; i < gated.data.size(); ++i) EXPECT_LE(std::abs(gated.data[i]), std::abs(skip.data[i]));
  }
}

TEST(AttentionGate, HardMode) {
  nn::Tensor3 a(1, 1, 3);
  a.data = {0.49, 0.5, 0.51};
  EXPECT_EQ(hard_gate(a, 0.5).data, (std::vector<double>{0.0, 1.0, 1.0}));
}

TEST(AttentionGate, ShapeMismatch) {
  DeterministicRng rng(3);
  const AttentionGate g = AttentionGate::make(4, 4, 2, rng);
  try {
    g.coefficients(random_tensor(4, 4, 4, rng), random_tensor(4, 4, 4, rng));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ShapeMismatch);
  }
}

TEST(Forward, ShapeAndDeterminism) {
  const Image8 crop = noise(32, 32, 5);
  for (UNetVariant v : kAllUNetVariants) {
    const auto cfg = SegmentationConfig::toy(v);
    const Mask a = unet_forward(cfg, crop, PathologyLabel::from_index(4), 11);
    const Mask b = unet_forward(cfg, crop, PathologyLabel::from_index(4), 11);
    EXPECT_EQ(a.width, 32);
    EXPECT_EQ(a.height, 32);
    EXPECT_NO_THROW(a.validate());
    EXPECT_EQ(a.probs, b.probs) << to_string(v);
    EXPECT_EQ(a.label, PathologyLabel::from_index(4));
  }
}

TEST(Forward, RandomizedSizesPreserveShape) {
  DeterministicRng rng(6);
  for (UNetVariant v : kAllUNetVariants) {
    const UNetModel model(SegmentationConfig::toy(v), 3);
    for (int t = 0; t < 4; ++t) {
      const int w = 4 * (1 + static_cast<int>(rng.below(10)));
      const int h = 4 * (1 + static_cast<int>(rng.below(10)));
      const Mask m = model.forward(noise(w, h, rng.next()), {});
      EXPECT_EQ(m.width, w);
      EXPECT_EQ(m.height, h);
    }
    // Not a multiple of 4: padded internally, cropped back.
    const Mask odd = model.forward(noise(13, 7, 1), {});
    EXPECT_EQ(odd.width, 13);
    EXPECT_EQ(odd.height, 7);
    EXPECT_NO_THROW(odd.validate());
  }
}

TEST(Forward, HardGateChangesOutputOnly) {
  auto cfg = SegmentationConfig::toy(UNetVariant::AttentionUNet);
  const Image8 crop = noise(16, 16, 9);
  const Mask soft = unet_forward(cfg, crop, {}, 1);
  cfg.hard_gate = true;
  const Mask hard = unet_forward(cfg, crop, {}, 1);
  EXPECT_EQ(hard.width, soft.width);
  EXPECT_NO_THROW(hard.validate());
}

TEST(Binarize, Examples) {
  Mask m{2, 2, {0.4, 0.4, 0.4, 0.4}, {}};
  EXPECT_EQ(binarize_mask(m).probs, std::vector<double>(4, 0.0));
  m.probs = std::vector<double>(4, 0.5);
  EXPECT_EQ(binarize_mask(m).probs, std::vector<double>(4, 1.0));
  m.probs = {0.2, 0.7, 0.7, 0.2};
  EXPECT_EQ(binarize_mask(m).probs, (std::vector<double>{0, 1, 1, 0}));
}

TEST(Binarize, Monotone) {
  DeterministicRng rng(10);
  for (int t = 0; t < 100; ++t) {
    Mask m{8, 8, {}, {}};
    for (int i = 0; i < 64; ++i) m.probs.push_back(rng.uniform());
    Mask raised = m;
    for (double& p : raised.probs) p = std::min(1.0, p + rng.uniform(0, 0.3));
    const Mask a = binarize_mask(m), b = binarize_mask(raised);
    for (int i = 0; i < 64; ++i) EXPECT_LE(a.probs[i], b.probs[i]);
  }
}

TEST(Rle, RoundTripAndLeadingZeroRun) {
  Mask m{3, 2, {1, 1, 0, 0, 1, 1}, {}};
  EXPECT_EQ(rle_encode(m), (std::vector<std::uint32_t>{0, 2, 2, 2}));
  EXPECT_EQ(rle_decode(rle_encode(m), 3, 2, {}).probs, m.probs);
  Mask z{2, 2, std::vector<double>(4, 0.0), {}};
  EXPECT_EQ(rle_encode(z), (std::vector<std::uint32_t>{4}));
  EXPECT_THROW(rle_decode({3}, 2, 2, {}), Error);
}

TEST(AverageMasks, Elementwise) {
  const std::vector<Mask> ms{{1, 2, {0.0, 1.0}, {}}, {1, 2, {0.5, 0.5}, {}}, {1, 2, {1.0, 0.0}, {}}};
  EXPECT_EQ(average_masks(ms).probs, (std::vector<double>{0.5, 0.5}));
  EXPECT_THROW(average_masks({}), Error);
}
