#include "cxr/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <variant>

#include "cxr/error.hpp"

namespace cxr {

std::string_view to_string(UNetVariant v) {
  switch (v) {
    case UNetVariant::AttentionUNet: return "AttentionUNet";
    case UNetVariant::UNetPlusPlus: return "UNetPlusPlus";
    case UNetVariant::DenseUNet: return "DenseUNet";
  }
  return "?";
}

SegmentationConfig SegmentationConfig::full_scale(UNetVariant v) {
  SegmentationConfig c;
  c.variant = v;
  if (v == UNetVariant::DenseUNet) {
    c.depth = 4;
    c.base_filters = 32;
  }
  return c;
}

SegmentationConfig SegmentationConfig::toy(UNetVariant v) {
  SegmentationConfig c;
  c.variant = v;
  c.depth = 3;
  c.base_filters = 8;
  c.growth_rate_k = 4;
  c.layers_per_block = 2;
  return c;
}

void SegmentationConfig::validate() const {
  auto open_unit = [](double x) { return x > 0.0 && x < 1.0; };
  if (depth < 1) throw Error(Errc::InvalidArgument, "depth must be >= 1");
  if (base_filters <= 0 || growth_rate_k <= 0 || in_channels <= 0) {
    throw Error(Errc::InvalidArgument, "filters and growth must be positive");
  }
  if (layers_per_block < 0) throw Error(Errc::InvalidArgument, "layers_per_block must be >= 0");
  if (!open_unit(gate_threshold) || !open_unit(mask_threshold)) {
    throw Error(Errc::InvalidArgument, "thresholds must be in (0,1)");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error(Errc::InvalidArgument, "dropout must be in [0,1)");
  if (depth > 12) throw Error(Errc::InvalidArgument, "depth too large");
}

int dense_block_channels(int c_in, int layers_per_block, int k) { return c_in + layers_per_block * k; }

std::vector<int> filter_schedule(const SegmentationConfig& cfg) {
  cfg.validate();
  std::vector<int> out;
  if (cfg.variant == UNetVariant::DenseUNet) {
    int c = cfg.base_filters;
    for (int l = 0; l < cfg.depth; ++l) {
      c = dense_block_channels(c, cfg.layers_per_block, cfg.growth_rate_k);
      out.push_back(c);
    }
    return out;
  }
  for (int l = 0; l < cfg.depth; ++l) out.push_back(cfg.base_filters << l);
  return out;
}

namespace {

std::size_t gate_inter_channels(int skip_channels) { return static_cast<std::size_t>(std::max(1, skip_channels / 2)); }

std::size_t conv_block_params(std::size_t in, std::size_t out) {
  return conv_parameter_count(in, out, 3) + conv_parameter_count(out, out, 3);
}

std::size_t dense_block_params(std::size_t c_in, std::size_t layers, std::size_t k) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < layers; ++i) n += conv_parameter_count(c_in + i * k, k, 3);
  return n;
}

}  // namespace

std::size_t parameter_count(const SegmentationConfig& cfg) {
  const auto f = filter_schedule(cfg);
  const auto D = static_cast<std::size_t>(cfg.depth);
  const auto c0 = static_cast<std::size_t>(cfg.in_channels);
  std::size_t n = 0;
  switch (cfg.variant) {
    case UNetVariant::AttentionUNet: {
      for (std::size_t l = 0; l < D; ++l) n += conv_block_params(l == 0 ? c0 : f[l - 1], f[l]);
      for (std::size_t l = 0; l + 1 < D; ++l) {
        const std::size_t inter = gate_inter_channels(f[l]);
        n += conv_parameter_count(f[l + 1], inter, 1) + conv_parameter_count(f[l], inter, 1) +
             conv_parameter_count(inter, 1, 1);
        n += conv_parameter_count(f[l + 1], f[l], 1);
        n += conv_block_params(2 * f[l], f[l]);
      }
      n += conv_parameter_count(f[0], 2, 1);
      break;
    }
    case UNetVariant::UNetPlusPlus: {
      for (std::size_t i = 0; i < D; ++i) {
        n += conv_block_params(i == 0 ? c0 : f[i - 1], f[i]);
        for (std::size_t j = 1; i + j < D; ++j) n += conv_block_params(j * f[i] + f[i + 1], f[i]);
      }
      n += conv_parameter_count(f[0], 2, 1);
      break;
    }
    case UNetVariant::DenseUNet: {
      const auto b = static_cast<std::size_t>(cfg.base_filters);
      const auto L = static_cast<std::size_t>(cfg.layers_per_block);
      const auto k = static_cast<std::size_t>(cfg.growth_rate_k);
      n += conv_parameter_count(c0, b, 3);
      for (std::size_t l = 0; l < D; ++l) n += dense_block_params(l == 0 ? b : f[l - 1], L, k);
      std::size_t up = f[D - 1];
      for (std::size_t l = D - 1; l-- > 0;) {
        n += conv_parameter_count(f[l] + up, f[l], 1);
        n += dense_block_params(f[l], L, k);
        up = f[l] + L * k;
      }
      n += conv_parameter_count(up, 2, 1);
      break;
    }
  }
  return n;
}

// ---------------------------------------------------------------------------

AttentionGate AttentionGate::make(std::size_t gating_channels, std::size_t skip_channels, std::size_t inter,
                                  DeterministicRng& rng) {
  AttentionGate g;
  g.w_gating = nn::Conv2d::make(gating_channels, inter, 1, rng);
  g.w_skip = nn::Conv2d::make(skip_channels, inter, 1, rng);
  g.psi = nn::Conv2d::make(inter, 1, 1, rng);
  return g;
}

std::size_t AttentionGate::parameter_count() const {
  return w_gating.parameter_count() + w_skip.parameter_count() + psi.parameter_count();
}

nn::Tensor3 AttentionGate::coefficients(const nn::Tensor3& gating, const nn::Tensor3& skip) const {
  if (gating.height * 2 != skip.height || gating.width * 2 != skip.width) {
    throw Error(Errc::ShapeMismatch, "gating grid must be half the skip resolution");
  }
  const nn::Tensor3 g = w_gating(nn::upsample2_nearest(gating));
  nn::Tensor3 q = w_skip(skip);
  for (std::size_t i = 0; i < q.data.size(); ++i) q.data[i] += g.data[i];
  nn::relu_inplace(q);
  nn::Tensor3 alpha = psi(q);
  for (double& a : alpha.data) a = nn::sigmoid(a);
  return alpha;
}

nn::Tensor3 hard_gate(const nn::Tensor3& coefficients, double threshold) {
  nn::Tensor3 out = coefficients;
  for (double& a : out.data) a = a >= threshold ? 1.0 : 0.0;
  return out;
}

nn::Tensor3 apply_gate(const nn::Tensor3& coefficients, const nn::Tensor3& skip) {
  if (coefficients.channels != 1 || coefficients.height != skip.height || coefficients.width != skip.width) {
    throw Error(Errc::ShapeMismatch, "coefficient grid does not match skip");
  }
  nn::Tensor3 out = skip;
  const std::size_t plane = skip.height * skip.width;
  for (std::size_t c = 0; c < skip.channels; ++c) {
    for (std::size_t p = 0; p < plane; ++p) out.data[c * plane + p] *= coefficients.data[p];
  }
  return out;
}

std::vector<NestedNode> nested_skip_graph(int depth) {
  if (depth < 1) throw Error(Errc::InvalidArgument, "depth must be >= 1");
  std::vector<NestedNode> nodes;
  // Column by column so every input is evaluated before its consumer.
  for (int j = 0; j < depth; ++j) {
    for (int i = 0; i + j < depth; ++i) {
      NestedNode n;
      n.level = i;
      n.column = j;
      for (int p = 0; p < j; ++p) n.same_level_inputs.emplace_back(i, p);
      n.has_upsampled_input = j > 0;
      nodes.push_back(std::move(n));
    }
  }
  return nodes;
}

void Mask::validate() const {
  if (width < 0 || height < 0 || probs.size() != static_cast<std::size_t>(width) * height) {
    throw Error(Errc::ShapeMismatch, "mask size does not match dimensions");
  }
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error(Errc::InvalidProbability, "mask probability outside [0,1]");
  }
}

// ---------------------------------------------------------------------------

namespace {

struct ConvBlock {
  nn::Conv2d a, b;

  static ConvBlock make(std::size_t in, std::size_t out, DeterministicRng& rng) {
    return {nn::Conv2d::make(in, out, 3, rng), nn::Conv2d::make(out, out, 3, rng)};
  }
  std::size_t parameter_count() const { return a.parameter_count() + b.parameter_count(); }
  nn::Tensor3 operator()(const nn::Tensor3& x) const {
    nn::Tensor3 h = a(x);
    nn::relu_inplace(h);
    h = b(h);
    nn::relu_inplace(h);
    return h;
  }
};

struct DenseBlock {
  std::vector<nn::Conv2d> layers;

  static DenseBlock make(std::size_t c_in, std::size_t count, std::size_t k, DeterministicRng& rng) {
    DenseBlock d;
    for (std::size_t i = 0; i < count; ++i) d.layers.push_back(nn::Conv2d::make(c_in + i * k, k, 3, rng));
    return d;
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.parameter_count();
    return n;
  }
  nn::Tensor3 operator()(const nn::Tensor3& x) const {
    nn::Tensor3 h = x;
    for (const auto& l : layers) {
      nn::Tensor3 y = l(h);
      nn::relu_inplace(y);
      h = nn::concat_channels({&h, &y});
    }
    return h;
  }
};

struct AttentionNet {
  std::vector<ConvBlock> encoder;
  std::vector<AttentionGate> gates;   // index = level
  std::vector<nn::Conv2d> up_convs;   // index = level
  std::vector<ConvBlock> decoder;     // index = level
  bool hard = false;
  double gate_threshold = 0.5;

  nn::Tensor3 operator()(const nn::Tensor3& x) const {
    std::vector<nn::Tensor3> skips;
    nn::Tensor3 h = x;
    for (std::size_t l = 0; l < encoder.size(); ++l) {
      if (l > 0) h = nn::max_pool2(h);
      h = encoder[l](h);
      skips.push_back(h);
    }
    for (std::size_t l = encoder.size() - 1; l-- > 0;) {
      nn::Tensor3 alpha = gates[l].coefficients(h, skips[l]);
      if (hard) alpha = hard_gate(alpha, gate_threshold);
      const nn::Tensor3 gated = apply_gate(alpha, skips[l]);
      const nn::Tensor3 up = up_convs[l](nn::upsample2_nearest(h));
      h = decoder[l](nn::concat_channels({&gated, &up}));
    }
    return h;
  }
};

struct NestedNet {
  int depth = 0;
  // blocks[i][j] computes node X(i,j).
  std::vector<std::vector<ConvBlock>> blocks;

  nn::Tensor3 operator()(const nn::Tensor3& x) const {
    std::vector<std::vector<nn::Tensor3>> out(static_cast<std::size_t>(depth));
    for (const NestedNode& node : nested_skip_graph(depth)) {
      const auto i = static_cast<std::size_t>(node.level);
      const auto j = static_cast<std::size_t>(node.column);
      if (j == 0) {
        out[i].push_back(blocks[i][0](i == 0 ? x : nn::max_pool2(out[i - 1][0])));
        continue;
      }
      std::vector<const nn::Tensor3*> parts;
      for (const auto& [li, lj] : node.same_level_inputs) parts.push_back(&out[static_cast<std::size_t>(li)][static_cast<std::size_t>(lj)]);
      const nn::Tensor3 up = nn::upsample2_nearest(out[i + 1][j - 1]);
      parts.push_back(&up);
      out[i].push_back(blocks[i][j](nn::concat_channels(parts)));
    }
    return out[0].back();
  }
};

struct DenseNet {
  nn::Conv2d stem;
  std::vector<DenseBlock> encoder;
  std::vector<nn::Conv2d> compress;  // index = level
  std::vector<DenseBlock> decoder;   // index = level

  nn::Tensor3 operator()(const nn::Tensor3& x) const {
    nn::Tensor3 h = stem(x);
    nn::relu_inplace(h);
    std::vector<nn::Tensor3> skips;
    for (std::size_t l = 0; l < encoder.size(); ++l) {
      if (l > 0) h = nn::max_pool2(h);
      h = encoder[l](h);
      skips.push_back(h);
    }
    for (std::size_t l = encoder.size() - 1; l-- > 0;) {
      const nn::Tensor3 up = nn::upsample2_nearest(h);
      nn::Tensor3 c = compress[l](nn::concat_channels({&skips[l], &up}));
      nn::relu_inplace(c);
      h = decoder[l](c);
    }
    return h;
  }
};

}  // namespace

struct UNetModel::Impl {
  SegmentationConfig cfg;
  std::variant<AttentionNet, NestedNet, DenseNet> net;
  nn::Conv2d head;
  std::size_t params = 0;
};

UNetModel::UNetModel(const SegmentationConfig& cfg, std::uint64_t seed) : impl_(std::make_unique<Impl>()) {
  const std::size_t expected = cxr::parameter_count(cfg);
  if (expected > kMaxExecutableParameters) {
    throw Error(Errc::BackendUnavailable, std::string(to_string(cfg.variant)) + " with " + std::to_string(expected) +
                                              " parameters exceeds the executable limit");
  }
  impl_->cfg = cfg;
  DeterministicRng rng(seed);
  const auto f = filter_schedule(cfg);
  const auto D = static_cast<std::size_t>(cfg.depth);
  const auto c0 = static_cast<std::size_t>(cfg.in_channels);
  std::size_t n = 0;
  std::size_t head_in = 0;
  switch (cfg.variant) {
    case UNetVariant::AttentionUNet: {
      AttentionNet net;
      net.hard = cfg.hard_gate;
      net.gate_threshold = cfg.gate_threshold;
      for (std::size_t l = 0; l < D; ++l) {
        net.encoder.push_back(ConvBlock::make(l == 0 ? c0 : static_cast<std::size_t>(f[l - 1]), f[l], rng));
        n += net.encoder.back().parameter_count();
      }
      for (std::size_t l = 0; l + 1 < D; ++l) {
        const auto fl = static_cast<std::size_t>(f[l]);
        const auto fu = static_cast<std::size_t>(f[l + 1]);
        net.gates.push_back(AttentionGate::make(fu, fl, gate_inter_channels(f[l]), rng));
        net.up_convs.push_back(nn::Conv2d::make(fu, fl, 1, rng));
        net.decoder.push_back(ConvBlock::make(2 * fl, fl, rng));
        n += net.gates.back().parameter_count() + net.up_convs.back().parameter_count() +
             net.decoder.back().parameter_count();
      }
      head_in = static_cast<std::size_t>(f[0]);
      impl_->net = std::move(net);
      break;
    }
    case UNetVariant::UNetPlusPlus: {
      NestedNet net;
      net.depth = cfg.depth;
      net.blocks.resize(D);
      for (std::size_t i = 0; i < D; ++i) {
        net.blocks[i].push_back(ConvBlock::make(i == 0 ? c0 : static_cast<std::size_t>(f[i - 1]), f[i], rng));
        n += net.blocks[i].back().parameter_count();
      }
      for (std::size_t j = 1; j < D; ++j) {
        for (std::size_t i = 0; i + j < D; ++i) {
          net.blocks[i].push_back(ConvBlock::make(j * f[i] + f[i + 1], f[i], rng));
          n += net.blocks[i].back().parameter_count();
        }
      }
      head_in = static_cast<std::size_t>(f[0]);
      impl_->net = std::move(net);
      break;
    }
    case UNetVariant::DenseUNet: {
      DenseNet net;
      const auto b = static_cast<std::size_t>(cfg.base_filters);
      const auto L = static_cast<std::size_t>(cfg.layers_per_block);
      const auto k = static_cast<std::size_t>(cfg.growth_rate_k);
      net.stem = nn::Conv2d::make(c0, b, 3, rng);
      n += net.stem.parameter_count();
      for (std::size_t l = 0; l < D; ++l) {
        net.encoder.push_back(DenseBlock::make(l == 0 ? b : static_cast<std::size_t>(f[l - 1]), L, k, rng));
        n += net.encoder.back().parameter_count();
      }
      net.compress.resize(D > 0 ? D - 1 : 0);
      net.decoder.resize(D > 0 ? D - 1 : 0);
      std::size_t up = static_cast<std::size_t>(f[D - 1]);
      for (std::size_t l = D - 1; l-- > 0;) {
        const auto fl = static_cast<std::size_t>(f[l]);
        net.compress[l] = nn::Conv2d::make(fl + up, fl, 1, rng);
        net.decoder[l] = DenseBlock::make(fl, L, k, rng);
        n += net.compress[l].parameter_count() + net.decoder[l].parameter_count();
        up = fl + L * k;
      }
      head_in = up;
      impl_->net = std::move(net);
      break;
    }
  }
  impl_->head = nn::Conv2d::make(head_in, 2, 1, rng);
  n += impl_->head.parameter_count();
  impl_->params = n;
}

UNetModel::~UNetModel() = default;
UNetModel::UNetModel(UNetModel&&) noexcept = default;
UNetModel& UNetModel::operator=(UNetModel&&) noexcept = default;

const SegmentationConfig& UNetModel::config() const { return impl_->cfg; }

std::size_t UNetModel::parameter_count() const { return impl_->params; }

Mask UNetModel::forward(const Image8& crop, PathologyLabel label) const {
  if (crop.empty()) throw Error(Errc::EmptyImage, "segmentation crop is empty");
  const std::size_t multiple = std::size_t{1} << (impl_->cfg.depth - 1);
  const auto W = static_cast<std::size_t>(crop.width), H = static_cast<std::size_t>(crop.height);
  const std::size_t PW = (W + multiple - 1) / multiple * multiple;
  const std::size_t PH = (H + multiple - 1) / multiple * multiple;
  nn::Tensor3 x(static_cast<std::size_t>(impl_->cfg.in_channels), PH, PW);
  for (std::size_t c = 0; c < x.channels; ++c) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t xx = 0; xx < W; ++xx) {
        x.at(c, y, xx) = crop.at(static_cast<int>(xx), static_cast<int>(y)) / 255.0;
      }
    }
  }
  const nn::Tensor3 features = std::visit([&](const auto& net) { return net(x); }, impl_->net);
  const nn::Tensor3 logits = impl_->head(features);
  Mask m;
  m.width = crop.width;
  m.height = crop.height;
  m.label = label;
  m.probs.resize(W * H);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t xx = 0; xx < W; ++xx) {
      // Two-way softmax, foreground channel.
      m.probs[y * W + xx] = nn::sigmoid(logits.at(1, y, xx) - logits.at(0, y, xx));
    }
  }
  return m;
}

Mask unet_forward(const SegmentationConfig& cfg, const Image8& crop, PathologyLabel label, std::uint64_t seed) {
  return UNetModel(cfg, seed).forward(crop, label);
}

Mask binarize_mask(const Mask& m, double threshold) {
  m.validate();
  Mask out = m;
  for (double& p : out.probs) p = p >= threshold ? 1.0 : 0.0;
  return out;
}

Mask average_masks(const std::vector<Mask>& masks) {
  if (masks.empty()) throw Error(Errc::EmptyInput, "no masks to average");
  Mask out = masks.front();
  for (std::size_t i = 1; i < masks.size(); ++i) {
    if (masks[i].width != out.width || masks[i].height != out.height) {
      throw Error(Errc::ShapeMismatch, "mask dimensions differ");
    }
    for (std::size_t p = 0; p < out.probs.size(); ++p) out.probs[p] += masks[i].probs[p];
  }
  for (double& p : out.probs) p = std::clamp(p / static_cast<double>(masks.size()), 0.0, 1.0);
  return out;
}

std::vector<std::uint32_t> rle_encode(const Mask& binary) {
  std::vector<std::uint32_t> runs;
  double current = 0.0;
  std::uint32_t length = 0;
  for (double p : binary.probs) {
    const double bit = p >= 0.5 ? 1.0 : 0.0;
    if (bit != current) {
      runs.push_back(length);
      current = bit;
      length = 0;
    }
    ++length;
  }
  runs.push_back(length);
  return runs;
}

Mask rle_decode(const std::vector<std::uint32_t>& runs, int width, int height, PathologyLabel label) {
  Mask m;
  m.width = width;
  m.height = height;
  m.label = label;
  m.probs.reserve(static_cast<std::size_t>(width) * height);
  double bit = 0.0;
  for (std::uint32_t r : runs) {
    m.probs.insert(m.probs.end(), r, bit);
    bit = 1.0 - bit;
  }
  if (m.probs.size() != static_cast<std::size_t>(width) * height) {
    throw Error(Errc::ShapeMismatch, "run lengths do not cover the mask");
  }
  return m;
}

}  // namespace cxr
