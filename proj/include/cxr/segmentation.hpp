#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string_view>
#include <utility>
#include <vector>

#include "cxr/image.hpp"
#include "cxr/labels.hpp"
#include "cxr/nn.hpp"

namespace cxr {

enum class UNetVariant { AttentionUNet, UNetPlusPlus, DenseUNet };

inline constexpr UNetVariant kAllUNetVariants[] = {UNetVariant::AttentionUNet, UNetVariant::UNetPlusPlus,
                                                   UNetVariant::DenseUNet};

std::string_view to_string(UNetVariant v);

struct SegmentationConfig {
  UNetVariant variant = UNetVariant::AttentionUNet;
  /// Resolution levels. For DenseUNet this is the number of dense blocks.
  int depth = 5;
  int base_filters = 64;
  int growth_rate_k = 12;
  int layers_per_block = 4;
  int in_channels = 1;
  double dropout = 0.3;  // decoder dropout; inactive at inference
  double gate_threshold = 0.5;
  bool hard_gate = false;
  double mask_threshold = 0.5;
  int batch_size = 8;
  double learning_rate = 0.0005;
  double lr_decay = 0.9;
  int lr_decay_every_epochs = 15;

  /// Full-size published configuration of each variant.
  static SegmentationConfig full_scale(UNetVariant v);
  /// Small executable instance: depth 3, base 8 (dense: k 4, 2 layers).
  static SegmentationConfig toy(UNetVariant v);

  /// Throws InvalidArgument.
  void validate() const;
};

/// Per-level channel counts of the encoder: base * 2^l, or for DenseUNet
/// the output width of each chained dense block.
std::vector<int> filter_schedule(const SegmentationConfig& cfg);

/// c_in + layers * k.
int dense_block_channels(int c_in, int layers_per_block, int k);

/// Closed-form trainable parameter count of the configured network.
std::size_t parameter_count(const SegmentationConfig& cfg);

/// in * out * k^2 + out.
constexpr std::size_t conv_parameter_count(std::size_t in, std::size_t out, std::size_t kernel) {
  return in * out * kernel * kernel + out;
}

/// Additive attention gate: alpha = sigmoid(psi(relu(Wx*x + Wg*up(g)))).
/// The gating grid must be half the skip resolution.
struct AttentionGate {
  nn::Conv2d w_gating;  // 1x1, gating channels -> inter
  nn::Conv2d w_skip;    // 1x1, skip channels -> inter
  nn::Conv2d psi;       // 1x1, inter -> 1

  static AttentionGate make(std::size_t gating_channels, std::size_t skip_channels, std::size_t inter,
                            DeterministicRng& rng);
  std::size_t parameter_count() const;

  /// Single-channel coefficient grid at skip resolution, values in [0,1].
  nn::Tensor3 coefficients(const nn::Tensor3& gating, const nn::Tensor3& skip) const;
};

/// Thresholded coefficients: 1 where alpha >= threshold, else 0.
nn::Tensor3 hard_gate(const nn::Tensor3& coefficients, double threshold);

/// skip scaled channel-wise by the single-channel coefficient grid.
nn::Tensor3 apply_gate(const nn::Tensor3& coefficients, const nn::Tensor3& skip);

/// A node of the nested-skip graph: (level, column) and the nodes it reads.
struct NestedNode {
  int level = 0;
  int column = 0;
  std::vector<std::pair<int, int>> same_level_inputs;
  bool has_upsampled_input = false;
};

/// Nodes X(i,j), i + j < depth, in evaluation order.
std::vector<NestedNode> nested_skip_graph(int depth);

struct Mask {
  int width = 0;
  int height = 0;
  std::vector<double> probs;
  PathologyLabel label{};

  void validate() const;
  double at(int x, int y) const { return probs[static_cast<std::size_t>(y) * width + x]; }
};

/// Seeded network of one variant. Construction throws BackendUnavailable
/// above kMaxExecutableParameters.
class UNetModel {
 public:
  static constexpr std::size_t kMaxExecutableParameters = 2'000'000;

  UNetModel(const SegmentationConfig& cfg, std::uint64_t seed);
  ~UNetModel();
  UNetModel(UNetModel&&) noexcept;
  UNetModel& operator=(UNetModel&&) noexcept;

  const SegmentationConfig& config() const;
  /// Sum over the instantiated layers.
  std::size_t parameter_count() const;

  /// Foreground probability per pixel. Inputs whose sides are not a multiple
  /// of 2^(depth-1) are zero-padded at the bottom/right and cropped back.
  Mask forward(const Image8& crop, PathologyLabel label) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

Mask unet_forward(const SegmentationConfig& cfg, const Image8& crop, PathologyLabel label, std::uint64_t seed);

/// 1 iff prob >= threshold.
Mask binarize_mask(const Mask& m, double threshold = 0.5);

/// Elementwise mean of equally sized masks.
Mask average_masks(const std::vector<Mask>& masks);

/// Row-major alternating run lengths of a binary mask, zeros first (a mask
/// starting with a one begins with a zero-length run).
std::vector<std::uint32_t> rle_encode(const Mask& binary);
Mask rle_decode(const std::vector<std::uint32_t>& runs, int width, int height, PathologyLabel label);

}  // namespace cxr
