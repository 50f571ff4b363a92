#include "hds/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "hds/ops.hpp"
#include "hds/util.hpp"

namespace hds {

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::hybrid: return "hybrid";
    case Mode::seg_only: return "seg-only";
    case Mode::cls_only: return "cls-only";
    case Mode::multitask_no_ds: return "no-ds";
  }
  return "hybrid";
}

Mode parse_mode(const std::string& text) {
  if (text == "hybrid") return Mode::hybrid;
  if (text == "seg-only" || text == "seg_only") return Mode::seg_only;
  if (text == "cls-only" || text == "cls_only") return Mode::cls_only;
  if (text == "no-ds" || text == "multitask_no_ds") return Mode::multitask_no_ds;
  throw ValueError("unknown mode '" + text + "' (expected hybrid, seg-only, cls-only or no-ds)");
}

std::string to_string(TapSide side) { return side == TapSide::decoder ? "decoder" : "encoder"; }

TapSide parse_tap_side(const std::string& text) {
  if (text == "decoder") return TapSide::decoder;
  if (text == "encoder") return TapSide::encoder;
  throw ValueError("unknown tap side '" + text + "' (expected decoder or encoder)");
}

int ArchConfig::channels(int level) const {
  return base_channels << std::min(level, channel_cap_exponent);
}

double ArchConfig::dropout_rate(int ch) const {
  return ch < dropout_channel_threshold ? dropout_low : dropout_high;
}

int ArchConfig::total_blocks() const {
  int n = 0;
  for (int b : encoder_blocks) n += b;
  for (int b : decoder_blocks) n += b;
  return n;
}

ArchConfig paper_arch() {
  ArchConfig c;
  c.base_channels = 32;
  return c;
}

ArchConfig desk_arch() {
  ArchConfig c;
  c.scales = 3;
  c.base_channels = 8;
  c.encoder_blocks = {1, 1, 1};
  c.decoder_blocks = {1, 1};
  c.supervision_levels = {0, 1, 2};
  return c;
}

ArchConfig tiny_arch(int base_channels) {
  ArchConfig c;
  c.scales = 2;
  c.base_channels = base_channels;
  c.encoder_blocks = {1, 1};
  c.decoder_blocks = {1};
  c.supervision_levels = {0, 1};
  return c;
}

void apply_mode(ArchConfig& config, Mode mode) {
  config.mode = mode;
  if (mode == Mode::multitask_no_ds) config.supervision_levels = {0};
}

void validate(const ArchConfig& c) {
  auto fail = [](const std::string& what) { throw ValueError("arch config: " + what); };
  if (c.scales < 2 || c.scales > 6) fail("scales must lie in [2, 6], got " + std::to_string(c.scales));
  if (c.base_channels < 1) fail("base_channels must be positive");
  if (c.channel_cap_exponent < 0) fail("channel_cap_exponent must be non-negative");
  if (static_cast<int>(c.encoder_blocks.size()) != c.scales) {
    fail("encoder_blocks has " + std::to_string(c.encoder_blocks.size()) + " entries, need " +
         std::to_string(c.scales));
  }
  if (static_cast<int>(c.decoder_blocks.size()) != c.scales - 1) {
    fail("decoder_blocks has " + std::to_string(c.decoder_blocks.size()) + " entries, need " +
         std::to_string(c.scales - 1));
  }
  for (int b : c.encoder_blocks) if (b < 0) fail("negative encoder block count");
  for (int b : c.decoder_blocks) if (b < 0) fail("negative decoder block count");
  for (double r : {c.dropout_low, c.dropout_high}) {
    if (!(r >= 0.0 && r < 1.0)) fail("dropout rates must lie in [0, 1)");
  }
  if (c.supervision_levels.empty()) fail("supervision_levels is empty");
  int prev = -1;
  for (int d : c.supervision_levels) {
    if (d < 0 || d >= c.scales) fail("supervision level " + std::to_string(d) + " out of range");
    if (d <= prev) fail("supervision_levels must be strictly increasing");
    prev = d;
    // maxpool x2 twice, avgpool 2^(5-d), feature scale 2^d
    if (4 * (1 << (5 - d)) * (1 << d) != 128) fail("downsampling ledger broken at level " + std::to_string(d));
  }
  if (c.mode == Mode::multitask_no_ds && c.supervision_levels != std::vector<int>{0}) {
    fail("mode no-ds requires supervision_levels == {0}");
  }
}

std::string canonical_string(const ArchConfig& c) {
  auto join = [](const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
  };
  char rates[96];
  std::snprintf(rates, sizeof(rates), "%.17g/%.17g@%d", c.dropout_low, c.dropout_high,
                c.dropout_channel_threshold);
  return "scales=" + std::to_string(c.scales) + ";base=" + std::to_string(c.base_channels) +
         ";cap=" + std::to_string(c.channel_cap_exponent) + ";enc=" + join(c.encoder_blocks) +
         ";dec=" + join(c.decoder_blocks) + ";dropout=" + rates +
         ";levels=" + join(c.supervision_levels) + ";mode=" + to_string(c.mode) +
         ";taps=" + to_string(c.taps);
}

std::uint64_t fingerprint(const ArchConfig& config) { return fnv1a64(canonical_string(config)); }

int required_divisor(const ArchConfig& config) {
  const int stream = 1 << (config.scales - 1);
  return has_cls(config.mode) ? std::max(stream, 128) : stream;
}

std::vector<LevelShapes> infer_output_shapes(const ArchConfig& config, Index height, Index width) {
  validate(config);
  std::vector<LevelShapes> out;
  for (int d : config.supervision_levels) {
    LevelShapes s{d, 0, 0, 0, 0};
    if (has_seg(config.mode)) {
      s.seg_h = height;
      s.seg_w = width;
    }
    if (has_cls(config.mode)) {
      s.cls_h = height / 128;
      s.cls_w = width / 128;
    }
    out.push_back(s);
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> ConvLayer<Scalar>::operator()(const Tensor<Scalar>& x) const {
  return conv2d(x, weight.tensor, bias.tensor, 1, pad);
}

template <typename Scalar>
Tensor<Scalar> ResidualBlock<Scalar>::operator()(const Tensor<Scalar>& x, bool training,
                                                 const RngState& rng) const {
  Tensor<Scalar> h = relu(conv1(x));
  h = dropout(h, dropout_rate, training, rng.fork(id));
  h = conv2(h);
  return relu(add(h, x));
}

namespace {

template <typename Scalar>
class Builder {
 public:
  explicit Builder(const RngState& rng) : rng_(rng) {}

  ConvLayer<Scalar> conv(const std::string& name, int in, int out, int kernel,
                         typename Parameter<Scalar>::Group group) {
    ConvLayer<Scalar> layer;
    layer.weight = Parameter<Scalar>(name + ".weight", Shape{out, in, kernel, kernel}, true, group);
    layer.bias = Parameter<Scalar>(name + ".bias", Shape{out}, false, group);
    layer.pad = kernel / 2;
    RngState stream = rng_.fork(fnv1a64(layer.weight.name));
    const double stddev = std::sqrt(2.0 / static_cast<double>(in * kernel * kernel));
    for (Index i = 0; i < layer.weight.tensor.size(); ++i) {
      layer.weight.tensor.values()[i] = static_cast<Scalar>(stddev * stream.normal());
    }
    return layer;
  }

  ResidualBlock<Scalar> block(const std::string& name, int channels, double rate) {
    ResidualBlock<Scalar> b;
    b.conv1 = conv(name + ".conv1", channels, channels, 3, Parameter<Scalar>::Group::main);
    b.conv2 = conv(name + ".conv2", channels, channels, 3, Parameter<Scalar>::Group::main);
    b.dropout_rate = rate;
    b.id = next_block_++;
    return b;
  }

 private:
  RngState rng_;
  std::uint64_t next_block_ = 0;
};

template <typename Scalar>
void append(std::vector<Parameter<Scalar>>& out, const ConvLayer<Scalar>& layer) {
  out.push_back(layer.weight);
  out.push_back(layer.bias);
}

template <typename Scalar>
void append(std::vector<Parameter<Scalar>>& out, const std::optional<ConvLayer<Scalar>>& layer) {
  if (layer) append(out, *layer);
}

}  // namespace

template <typename Scalar>
std::vector<Parameter<Scalar>> UResNet<Scalar>::parameters() const {
  std::vector<Parameter<Scalar>> out;
  append(out, stem);
  for (const auto& stage : encoder) {
    append(out, stage.down_proj);
    for (const auto& b : stage.blocks) {
      append(out, b.conv1);
      append(out, b.conv2);
    }
  }
  for (const auto& stage : decoder) {
    append(out, stage.up_proj);
    append(out, stage.merge);
    for (const auto& b : stage.blocks) {
      append(out, b.conv1);
      append(out, b.conv2);
    }
  }
  for (const auto& path : paths) {
    append(out, path.seg_head);
    append(out, path.cls_conv1);
    append(out, path.cls_conv2);
    append(out, path.cls_score);
  }
  return out;
}

template <typename Scalar>
void UResNet<Scalar>::zero_grad() {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

template <typename Scalar>
UResNet<Scalar> build_model(const ArchConfig& config, const RngState& rng) {
  validate(config);
  using Group = typename Parameter<Scalar>::Group;
  Builder<Scalar> make(rng);
  UResNet<Scalar> m;
  m.config = config;
  const int scales = config.scales;

  m.stem = make.conv("stem", 1, config.channels(0), 3, Group::main);
  for (int d = 0; d < scales; ++d) {
    EncoderStage<Scalar> stage;
    const int ch = config.channels(d);
    const std::string prefix = "enc" + std::to_string(d);
    if (d > 0 && config.channels(d - 1) != ch) {
      stage.down_proj = make.conv(prefix + ".down", config.channels(d - 1), ch, 1, Group::main);
    }
    for (int i = 0; i < config.encoder_blocks[static_cast<std::size_t>(d)]; ++i) {
      stage.blocks.push_back(
          make.block(prefix + ".block" + std::to_string(i), ch, config.dropout_rate(ch)));
    }
    m.encoder.push_back(std::move(stage));
  }
  m.decoder.resize(static_cast<std::size_t>(scales - 1));
  for (int d = scales - 2; d >= 0; --d) {
    DecoderStage<Scalar>& stage = m.decoder[static_cast<std::size_t>(d)];
    const int ch = config.channels(d);
    const std::string prefix = "dec" + std::to_string(d);
    if (config.channels(d + 1) != ch) {
      stage.up_proj = make.conv(prefix + ".up", config.channels(d + 1), ch, 1, Group::main);
    }
    stage.merge = make.conv(prefix + ".merge", 2 * ch, ch, 1, Group::main);
    for (int i = 0; i < config.decoder_blocks[static_cast<std::size_t>(d)]; ++i) {
      stage.blocks.push_back(
          make.block(prefix + ".block" + std::to_string(i), ch, config.dropout_rate(ch)));
    }
  }
  for (int d : config.supervision_levels) {
    MultiTaskPath<Scalar> path;
    path.level = d;
    const int ch = config.channels(d);
    const std::string prefix = "path" + std::to_string(d);
    if (has_seg(config.mode)) path.seg_head = make.conv(prefix + ".seg", ch, 2, 1, Group::seg_path);
    if (has_cls(config.mode)) {
      path.cls_conv1 = make.conv(prefix + ".cls.conv1", ch, ch, 3, Group::cls_path);
      path.cls_conv2 = make.conv(prefix + ".cls.conv2", ch, ch, 3, Group::cls_path);
      path.cls_score = make.conv(prefix + ".cls.score", ch, 1, 1, Group::cls_path);
    }
    m.paths.push_back(std::move(path));
  }
  return m;
}

template <typename Scalar>
HDSOutputs<Scalar> forward(const UResNet<Scalar>& model, const Tensor<Scalar>& x, bool training,
                           const RngState& rng) {
  const ArchConfig& cfg = model.config;
  if (x.ndim() != 4 || x.dim(1) != 1) {
    throw ShapeError("forward: expected input of shape (N,1,H,W), got " + to_string(x.shape()));
  }
  const Index h = x.dim(2), w = x.dim(3);
  for (int d = 1; d < cfg.scales; ++d) {
    if (h % (Index(1) << d) != 0 || w % (Index(1) << d) != 0) {
      throw ShapeError("forward: input " + std::to_string(h) + "x" + std::to_string(w) +
                       " cannot be halved at level " + std::to_string(d) + " (needs a multiple of " +
                       std::to_string(1 << d) + ")");
    }
  }
  if (has_cls(cfg.mode)) {
    for (int d : cfg.supervision_levels) {
      const Index need = Index(4) << (5 - d);  // two max pools, then the average pool
      if ((h >> d) % need != 0 || (w >> d) % need != 0) {
        throw ShapeError("forward: input " + std::to_string(h) + "x" + std::to_string(w) +
                         " leaves level-" + std::to_string(d) + " features of " +
                         std::to_string(h >> d) + "x" + std::to_string(w >> d) +
                         ", not divisible by the classification path's " + std::to_string(need));
      }
    }
  }

  std::vector<Tensor<Scalar>> skips;
  Tensor<Scalar> feat = relu(model.stem(x));
  for (int d = 0; d < cfg.scales; ++d) {
    const auto& stage = model.encoder[static_cast<std::size_t>(d)];
    if (d > 0) {
      if (stage.down_proj) feat = (*stage.down_proj)(feat);
      feat = maxpool2d(feat, 2);
    }
    for (const auto& block : stage.blocks) feat = block(feat, training, rng);
    skips.push_back(feat);
  }
  std::vector<Tensor<Scalar>> decoded(static_cast<std::size_t>(cfg.scales));
  decoded.back() = feat;
  for (int d = cfg.scales - 2; d >= 0; --d) {
    const auto& stage = model.decoder[static_cast<std::size_t>(d)];
    Tensor<Scalar> up = stage.up_proj ? (*stage.up_proj)(feat) : feat;
    up = upsample_bilinear(up, 2);
    feat = stage.merge(concat_channels(skips[static_cast<std::size_t>(d)], up));
    for (const auto& block : stage.blocks) feat = block(feat, training, rng);
    decoded[static_cast<std::size_t>(d)] = feat;
  }

  const Scalar floor = static_cast<Scalar>(1e-7);
  HDSOutputs<Scalar> out;
  for (const auto& path : model.paths) {
    const auto level = static_cast<std::size_t>(path.level);
    const Tensor<Scalar>& tap = cfg.taps == TapSide::decoder ? decoded[level] : skips[level];
    out.levels.push_back(path.level);
    if (path.seg_head) {
      out.seg_logits.push_back(upsample_bilinear((*path.seg_head)(tap), path.seg_upsample()));
    }
    if (path.cls_conv1) {
      Tensor<Scalar> c = maxpool2d(relu((*path.cls_conv1)(tap)), 2);
      c = maxpool2d(relu((*path.cls_conv2)(c)), 2);
      c = avgpool2d(c, path.cls_avgpool());
      c = sigmoid((*path.cls_score)(c));
      out.cls_maps.push_back(clamp(c, floor, Scalar(1) - floor));
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> image_probability(const Tensor<Scalar>& cls_map) {
  return reduce_max_spatial(cls_map);
}

template <typename Scalar>
int count_conv3x3(const UResNet<Scalar>& model) {
  int n = 0;
  for (const auto& p : model.parameters()) {
    if (p.group == Parameter<Scalar>::Group::main && p.tensor.ndim() == 4 && p.tensor.dim(2) == 3 &&
        p.tensor.dim(3) == 3) {
      ++n;
    }
  }
  return n;
}

#define HDS_INSTANTIATE_MODEL(S)                                                                   \
  template struct ConvLayer<S>;                                                                    \
  template struct ResidualBlock<S>;                                                                \
  template struct UResNet<S>;                                                                      \
  template UResNet<S> build_model<S>(const ArchConfig&, const RngState&);                          \
  template HDSOutputs<S> forward<S>(const UResNet<S>&, const Tensor<S>&, bool, const RngState&);  \
  template Tensor<S> image_probability<S>(const Tensor<S>&);                                       \
  template int count_conv3x3<S>(const UResNet<S>&);

HDS_INSTANTIATE_MODEL(float)
HDS_INSTANTIATE_MODEL(double)

#undef HDS_INSTANTIATE_MODEL

}  // namespace hds
