#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hds/rng.hpp"
#include "hds/tensor.hpp"

namespace hds {

/// Which supervision heads are trained. `multitask_no_ds` keeps both heads
/// but only on level 0.
enum class Mode { hybrid, seg_only, cls_only, multitask_no_ds };

/// Which main-stream features feed the supervision paths.
enum class TapSide { decoder, encoder };

std::string to_string(Mode mode);
Mode parse_mode(const std::string& text);
std::string to_string(TapSide side);
TapSide parse_tap_side(const std::string& text);

inline bool has_seg(Mode m) { return m != Mode::cls_only; }
inline bool has_cls(Mode m) { return m != Mode::seg_only; }

struct ArchConfig {
  int scales = 6;
  int base_channels = 16;
  int channel_cap_exponent = 3;  // channels(d) = base * 2^min(d, cap)
  std::vector<int> encoder_blocks{2, 2, 2, 2, 2, 2};
  std::vector<int> decoder_blocks{2, 2, 2, 2, 2};
  double dropout_low = 0.2;
  double dropout_high = 0.5;
  int dropout_channel_threshold = 128;  // blocks with fewer channels use dropout_low
  std::vector<int> supervision_levels{0, 1, 2, 3, 4, 5};
  Mode mode = Mode::hybrid;
  TapSide taps = TapSide::decoder;

  int channels(int level) const;
  double dropout_rate(int channels) const;
  int total_blocks() const;
};

/// 45-layer network with 32 base channels and six supervised scales.
ArchConfig paper_arch();
/// Three-scale, eight-channel network sized for CPU training.
ArchConfig desk_arch();
/// Two-scale network used for gradient checks.
ArchConfig tiny_arch(int base_channels = 2);

/// Sets the mode and, for `multitask_no_ds`, restricts supervision to level 0.
void apply_mode(ArchConfig& config, Mode mode);

/// Throws ValueError describing the first violated constraint.
void validate(const ArchConfig& config);

/// Canonical text form and its FNV-1a hash; identical architectures share it.
std::string canonical_string(const ArchConfig& config);
std::uint64_t fingerprint(const ArchConfig& config);

template <typename Scalar>
struct ConvLayer {
  Parameter<Scalar> weight;
  Parameter<Scalar> bias;
  int pad = 0;

  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const;
  int kernel() const { return static_cast<int>(weight.tensor.dim(2)); }
};

template <typename Scalar>
struct ResidualBlock {
  ConvLayer<Scalar> conv1;
  ConvLayer<Scalar> conv2;
  double dropout_rate = 0.0;
  std::uint64_t id = 0;  // keys the dropout stream

  Tensor<Scalar> operator()(const Tensor<Scalar>& x, bool training, const RngState& rng) const;
};

template <typename Scalar>
struct EncoderStage {
  std::optional<ConvLayer<Scalar>> down_proj;  // channel change before max pooling
  std::vector<ResidualBlock<Scalar>> blocks;
};

template <typename Scalar>
struct DecoderStage {
  std::optional<ConvLayer<Scalar>> up_proj;  // channel change before upsampling
  ConvLayer<Scalar> merge;                   // 1x1 after concatenating the skip
  std::vector<ResidualBlock<Scalar>> blocks;
};

/// Supervision path attached to one scale level: a segmentation branch
/// upsampled back to input resolution and a classification branch whose
/// probability map is downsampled by 2^7 overall.
template <typename Scalar>
struct MultiTaskPath {
  int level = 0;
  std::optional<ConvLayer<Scalar>> seg_head;
  std::optional<ConvLayer<Scalar>> cls_conv1;
  std::optional<ConvLayer<Scalar>> cls_conv2;
  std::optional<ConvLayer<Scalar>> cls_score;

  int seg_upsample() const { return 1 << level; }
  int cls_avgpool() const { return 1 << (5 - level); }
};

template <typename Scalar>
struct HDSOutputs {
  std::vector<int> levels;
  std::vector<Tensor<Scalar>> seg_logits;  // [N,2,H,W] per level, empty without seg heads
  std::vector<Tensor<Scalar>> cls_maps;    // [N,1,H/128,W/128] per level, empty without cls heads
};

template <typename Scalar>
struct UResNet {
  ArchConfig config;
  ConvLayer<Scalar> stem;
  std::vector<EncoderStage<Scalar>> encoder;
  std::vector<DecoderStage<Scalar>> decoder;  // decoder[d] for d in [0, scales-1)
  std::vector<MultiTaskPath<Scalar>> paths;

  /// Every parameter in a stable order; copies share storage with the model.
  std::vector<Parameter<Scalar>> parameters() const;
  void zero_grad();
};

/// Smallest multiple that input height and width must satisfy.
int required_divisor(const ArchConfig& config);

/// Kaiming-normal conv weights (variance 2/fan_in), zero biases.
template <typename Scalar>
UResNet<Scalar> build_model(const ArchConfig& config, const RngState& rng);

/// x: [N,1,H,W]. Dropout is active only when `training` is set.
template <typename Scalar>
HDSOutputs<Scalar> forward(const UResNet<Scalar>& model, const Tensor<Scalar>& x, bool training,
                           const RngState& rng);

/// Bag probability max_{i,j} r_{i,j} per image: [N,1,h,w] -> [N,1].
template <typename Scalar>
Tensor<Scalar> image_probability(const Tensor<Scalar>& cls_map);

/// 3x3 convolutions in the main stream (stem and residual blocks).
template <typename Scalar>
int count_conv3x3(const UResNet<Scalar>& model);

/// Output extents per supervision level for an H x W input, without
/// running the network.
struct LevelShapes {
  int level;
  Index seg_h, seg_w;
  Index cls_h, cls_w;
};
std::vector<LevelShapes> infer_output_shapes(const ArchConfig& config, Index height, Index width);

template <typename Scalar>
void save_weights(const UResNet<Scalar>& model, const std::filesystem::path& path);

/// Replaces all parameter values from `path`. The model is left untouched on
/// any error, including an architecture fingerprint mismatch.
template <typename Scalar>
void load_weights(UResNet<Scalar>& model, const std::filesystem::path& path);

/// Reads only the fingerprint stored in a weight file.
std::uint64_t read_weight_fingerprint(const std::filesystem::path& path);

}  // namespace hds
