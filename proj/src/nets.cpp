#include "refineseg/nets.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "refineseg/optim.hpp"

namespace refineseg {

std::string to_string(BackboneKind kind) {
  return kind == BackboneKind::kUnet ? "unet" : "fcn";
}

BackboneKind parse_backbone_kind(const std::string& text) {
  if (text == "unet") return BackboneKind::kUnet;
  if (text == "fcn") return BackboneKind::kFcn;
  throw Error(ErrorCode::kInvalidArgument,
              "backbone must be unet or fcn, got '" + text + "'");
}

void NetConfig::validate() const {
  if (base_channels < 2) {
    throw Error(ErrorCode::kInvalidArgument, "base_channels must be >= 2");
  }
  if (head_channels < 1) {
    throw Error(ErrorCode::kInvalidArgument, "head_channels must be >= 1");
  }
  if (depth < 3) {
    throw Error(ErrorCode::kInvalidArgument,
                "depth must be >= 3 for three side outputs");
  }
  const int divisor = 1 << (depth - 1);
  if (input_size < kMinImageExtent || input_size % 4 != 0 ||
      input_size % divisor != 0) {
    throw Error(ErrorCode::kInvalidArgument,
                "input_size " + std::to_string(input_size) +
                    " must be >= 8 and divisible by 4 (and by " +
                    std::to_string(divisor) + " at depth " +
                    std::to_string(depth) + ")");
  }
}

namespace {

struct ParamSpec {
  std::string name;
  Shape shape;
  int fan_in;  // 0 for biases
};

std::string level_name(const char* prefix, int level) {
  return std::string(prefix) + std::to_string(level + 1);
}

int level_channels(const NetConfig& c, int level) { return c.base_channels << level; }

void add_conv(std::vector<ParamSpec>& out, const std::string& name, int cin,
              int cout, int k) {
  out.push_back({name + ".weight", {cout, cin, k, k}, cin * k * k});
  out.push_back({name + ".bias", {cout}, 0});
}

void add_up(std::vector<ParamSpec>& out, const std::string& name, int cin, int cout) {
  // Each output pixel of a 2x2/stride-2 transposed conv sees one input pixel
  // per input channel.
  out.push_back({name + ".weight", {cin, cout, 2, 2}, cin});
  out.push_back({name + ".bias", {cout}, 0});
}

std::vector<ParamSpec> param_specs(const NetConfig& c) {
  std::vector<ParamSpec> specs;
  const bool skips = c.backbone_kind == BackboneKind::kUnet;
  // Encoder.
  int cin = 1;
  for (int l = 0; l < c.depth; ++l) {
    const std::string base = "backbone." + level_name("enc", l);
    const int ch = level_channels(c, l);
    add_conv(specs, base + ".conv1", cin, ch, 3);
    add_conv(specs, base + ".conv2", ch, ch, 3);
    cin = ch;
  }
  // Decoder, coarse to fine.
  for (int l = c.depth - 2; l >= 0; --l) {
    const std::string base = "backbone." + level_name("dec", l);
    const int ch = level_channels(c, l);
    add_up(specs, base + ".up", level_channels(c, l + 1), ch);
    add_conv(specs, base + ".conv1", skips ? 2 * ch : ch, ch, 3);
    add_conv(specs, base + ".conv2", ch, ch, 3);
  }
  // Side outputs at 0.25x, 0.5x, 1x.
  add_conv(specs, "backbone.side_quarter", level_channels(c, 2), 1, 1);
  add_conv(specs, "backbone.side_half", level_channels(c, 1), 1, 1);
  add_conv(specs, "backbone.side_full", level_channels(c, 0), 1, 1);
  // Refinement head.
  const int h = c.head_channels;
  add_conv(specs, "refine.quarter.conv", 3, h, 3);
  add_conv(specs, "refine.half.conv", 3, h, 3);
  add_conv(specs, "refine.full.conv", 3, h, 3);
  add_up(specs, "refine.up_half", h, h);
  add_conv(specs, "refine.fuse_half.conv", 2 * h, h, 3);
  add_up(specs, "refine.up_full", h, h);
  add_conv(specs, "refine.fuse_full.conv", 2 * h, h, 3);
  add_conv(specs, "refine.out", h, 1, 1);
  return specs;
}

}  // namespace

ModelParams init_params(const NetConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams params;
  std::uint64_t stream = 0;
  for (const auto& spec : param_specs(config)) {
    // One independent stream per tensor keeps each layer's init stable when
    // unrelated layers are added.
    ++stream;
    if (spec.fan_in == 0) {
      params.add(spec.name, Tensor(spec.shape, 0.0));
    } else {
      params.add(spec.name, kaiming_uniform(spec.shape, spec.fan_in,
                                            seed * 0x9E3779B97F4A7C15ULL + stream));
    }
  }
  return params;
}

void check_params(const NetConfig& config, const ModelParams& params) {
  const auto specs = param_specs(config);
  if (specs.size() != params.size()) {
    throw Error(ErrorCode::kShapeMismatch,
                "expected " + std::to_string(specs.size()) + " parameters, got " +
                    std::to_string(params.size()));
  }
  for (const auto& spec : specs) {
    if (!params.contains(spec.name)) {
      throw Error(ErrorCode::kShapeMismatch, "missing parameter " + spec.name);
    }
    const Tensor& t = params.get(spec.name);
    if (t.shape() != spec.shape) {
      throw Error(ErrorCode::kShapeMismatch,
                  spec.name + ": expected " + shape_string(spec.shape) + ", got " +
                      shape_string(t.shape()));
    }
  }
}

NetConfig infer_config(const ModelParams& params) {
  NetConfig c;
  if (!params.contains("backbone.enc1.conv1.weight") ||
      !params.contains("refine.out.weight")) {
    throw Error(ErrorCode::kShapeMismatch,
                "parameters do not describe a refinement network");
  }
  c.base_channels = params.get("backbone.enc1.conv1.weight").dim(0);
  c.head_channels = params.get("refine.out.weight").dim(1);
  c.depth = 0;
  while (params.contains("backbone." + level_name("enc", c.depth) + ".conv1.weight")) {
    ++c.depth;
  }
  const Tensor& dec1 = params.get("backbone.dec1.conv1.weight");
  c.backbone_kind =
      dec1.dim(1) == 2 * c.base_channels ? BackboneKind::kUnet : BackboneKind::kFcn;
  c.input_size = std::max(64, 1 << (c.depth - 1));
  check_params(c, params);
  return c;
}

namespace graph {

ParamVars bind(ad::Tape& tape, const ModelParams& params, bool trainable) {
  ParamVars vars;
  for (const auto& e : params.entries()) {
    vars.emplace(e.name, trainable ? tape.leaf(e.value) : tape.constant(e.value));
  }
  return vars;
}

namespace {

ad::Var conv(const ParamVars& p, const std::string& name, ad::Var x, int pad) {
  return ad::conv2d(x, p.at(name + ".weight"), p.at(name + ".bias"), 1, pad);
}

ad::Var conv_relu(const ParamVars& p, const std::string& name, ad::Var x) {
  return ad::relu(conv(p, name, x, 1));
}

ad::Var up(const ParamVars& p, const std::string& name, ad::Var x) {
  return ad::transposed_conv2d(x, p.at(name + ".weight"), p.at(name + ".bias"), 2);
}

}  // namespace

SideOutputs backbone(const NetConfig& c, const ParamVars& p, ad::Var images) {
  const Tensor& img = images.value();
  if (img.rank() != 4 || img.dim(1) != 1 || img.dim(2) != c.input_size ||
      img.dim(3) != c.input_size) {
    throw Error(ErrorCode::kShapeMismatch,
                "backbone: expected (N,1," + std::to_string(c.input_size) + "," +
                    std::to_string(c.input_size) + ") input, got " +
                    shape_string(img.shape()));
  }
  std::vector<ad::Var> skips;
  ad::Var x = images;
  for (int l = 0; l < c.depth; ++l) {
    if (l > 0) x = ad::maxpool2(x);
    const std::string base = "backbone." + level_name("enc", l);
    x = conv_relu(p, base + ".conv1", x);
    x = conv_relu(p, base + ".conv2", x);
    skips.push_back(x);
  }
  std::vector<ad::Var> decoded(c.depth);
  decoded[c.depth - 1] = x;
  for (int l = c.depth - 2; l >= 0; --l) {
    const std::string base = "backbone." + level_name("dec", l);
    x = up(p, base + ".up", x);
    if (c.backbone_kind == BackboneKind::kUnet) x = ad::concat_channels(skips[l], x);
    x = conv_relu(p, base + ".conv1", x);
    x = conv_relu(p, base + ".conv2", x);
    decoded[l] = x;
  }
  return {ad::sigmoid(conv(p, "backbone.side_full", decoded[0], 0)),
          ad::sigmoid(conv(p, "backbone.side_half", decoded[1], 0)),
          ad::sigmoid(conv(p, "backbone.side_quarter", decoded[2], 0))};
}

ad::Var refine(const NetConfig& c, const ParamVars& p, const SideOutputs& seg,
               ad::Var seeds) {
  const int s = c.input_size;
  const Tensor& sv = seeds.value();
  if (sv.rank() != 4 || sv.dim(1) != 2 || sv.dim(2) != s || sv.dim(3) != s ||
      sv.dim(0) != seg.full.value().dim(0)) {
    throw Error(ErrorCode::kShapeMismatch,
                "refine: seed tensor " + shape_string(sv.shape()) +
                    " incompatible with input size " + std::to_string(s));
  }
  auto scale_input = [&](ad::Var prob, int size) {
    ad::Var sd = size == s ? seeds : ad::bilinear_resize(seeds, size, size);
    return ad::concat_channels(prob, sd);
  };
  ad::Var q = conv_relu(p, "refine.quarter.conv", scale_input(seg.quarter, s / 4));
  ad::Var h = conv_relu(p, "refine.half.conv", scale_input(seg.half, s / 2));
  ad::Var f = conv_relu(p, "refine.full.conv", scale_input(seg.full, s));
  ad::Var x = ad::concat_channels(h, up(p, "refine.up_half", q));
  x = conv_relu(p, "refine.fuse_half.conv", x);
  x = ad::concat_channels(f, up(p, "refine.up_full", x));
  x = conv_relu(p, "refine.fuse_full.conv", x);
  // The head predicts a correction to the backbone's full-scale logit.
  return ad::sigmoid(ad::add(conv(p, "refine.out", x, 0), ad::logit(seg.full)));
}

}  // namespace graph

RefineNet::RefineNet(NetConfig config, ModelParams params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  check_params(config_, params_);
}

Tensor image_tensor(const Image& image) {
  return Tensor({1, 1, image.height, image.width}, image.values);
}

Tensor seed_tensor(const SeedChannels& seeds) {
  if (!seeds.foreground.same_shape(seeds.background)) {
    throw Error(ErrorCode::kShapeMismatch, "seed channels differ in shape");
  }
  const int h = seeds.foreground.height, w = seeds.foreground.width;
  std::vector<double> v = seeds.foreground.values;
  v.insert(v.end(), seeds.background.values.begin(), seeds.background.values.end());
  return Tensor({1, 2, h, w}, std::move(v));
}

ProbMap prob_map_from(const Tensor& t, int batch_index) {
  ProbMap m(t.dim(2), t.dim(3));
  const size_t plane = m.size();
  std::copy_n(t.ptr() + static_cast<size_t>(batch_index) * t.dim(1) * plane, plane,
              m.values.begin());
  return m;
}

namespace {

Tensor prob_tensor(const ProbMap& p) {
  return Tensor({1, 1, p.height, p.width}, p.values);
}

}  // namespace

MultiScaleSeg RefineNet::backbone_forward(const Image& image) const {
  validate_image(image);
  if (image.height != config_.input_size || image.width != config_.input_size) {
    throw Error(ErrorCode::kShapeMismatch,
                "image is " + shape_string(image.height, image.width) +
                    ", network expects " +
                    shape_string(config_.input_size, config_.input_size));
  }
  ad::Tape tape;
  const auto p = graph::bind(tape, params_, false);
  const auto out = graph::backbone(config_, p, tape.constant(image_tensor(image)));
  return {prob_map_from(out.full.value()), prob_map_from(out.half.value()),
          prob_map_from(out.quarter.value())};
}

ProbMap RefineNet::refine_forward(const MultiScaleSeg& seg,
                                  const SeedChannels& seeds) const {
  const int s = config_.input_size;
  if (seg.full.height != s || seg.full.width != s || seg.half.height != s / 2 ||
      seg.half.width != s / 2 || seg.quarter.height != s / 4 ||
      seg.quarter.width != s / 4) {
    throw Error(ErrorCode::kShapeMismatch,
                "multi-scale segmentation does not match input size " +
                    std::to_string(s));
  }
  if (seeds.foreground.height != s || seeds.foreground.width != s) {
    throw Error(ErrorCode::kShapeMismatch,
                "seed channels are " +
                    shape_string(seeds.foreground.height, seeds.foreground.width) +
                    ", expected " + shape_string(s, s));
  }
  ad::Tape tape;
  const auto p = graph::bind(tape, params_, false);
  graph::SideOutputs side{tape.constant(prob_tensor(seg.full)),
                          tape.constant(prob_tensor(seg.half)),
                          tape.constant(prob_tensor(seg.quarter))};
  const ad::Var out =
      graph::refine(config_, p, side, tape.constant(seed_tensor(seeds)));
  return prob_map_from(out.value());
}

BinaryMask binarize(const ProbMap& p, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "threshold must lie in (0,1)");
  }
  BinaryMask m(p.height, p.width);
  for (size_t i = 0; i < p.size(); ++i) m.values[i] = p.values[i] >= threshold;
  return m;
}

Image difficulty_map(const ProbMap& p) {
  Image u(p.height, p.width);
  for (size_t i = 0; i < p.size(); ++i) {
    u.values[i] = 1.0 - std::abs(2.0 * p.values[i] - 1.0);
  }
  return u;
}

}  // namespace refineseg
