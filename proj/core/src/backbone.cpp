#include "coar/backbone.hpp"

#include <cmath>
#include <stdexcept>

#include "coar/ops.hpp"

namespace coar {

std::string to_string(BackboneKind kind) { return kind == BackboneKind::Cnn ? "cnn" : "vit"; }

BackboneKind parse_backbone_kind(std::string_view text) {
  if (text == "cnn") return BackboneKind::Cnn;
  if (text == "vit") return BackboneKind::Vit;
  throw std::invalid_argument("unknown backbone '" + std::string(text) + "'");
}

CnnParams CnnParams::init(const CnnConfig& config, Rng& rng) {
  if (config.image_size % 8 != 0 || config.image_size < 8) {
    throw std::invalid_argument("CNN image size must be a positive multiple of 8");
  }
  CnnParams p;
  p.config = config;
  int cin = config.in_channels;
  for (std::size_t s = 0; s < 4; ++s) {
    const int cout = config.channels[s];
    p.stages[s].weight = kaiming_uniform({9 * cin, cout}, 9 * cin, rng);
    p.stages[s].bias = Tensor({cout}, 0.0);
    p.stages[s].attention = DenseLayer::init(cout, config.num_attributes, rng);
    cin = cout;
  }
  return p;
}

void CnnParams::collect(ParamList& out) {
  for (std::size_t s = 0; s < 4; ++s) {
    const std::string prefix = "cnn.stage" + std::to_string(s + 1);
    out.push_back({prefix + ".conv.weight", &stages[s].weight, true});
    out.push_back({prefix + ".conv.bias", &stages[s].bias, false});
    stages[s].attention.collect(prefix + ".attention", out);
  }
}

VitParams VitParams::init(const VitConfig& config, Rng& rng) {
  if (config.patch_size < 1 || config.image_size % config.patch_size != 0) {
    throw std::invalid_argument("image size " + std::to_string(config.image_size) + " is not divisible by patch size " +
                                std::to_string(config.patch_size));
  }
  if (config.dim % config.heads != 0) throw std::invalid_argument("transformer dim must be divisible by heads");
  VitParams p;
  p.config = config;
  const int C = config.dim;
  const int patch_in = config.patch_size * config.patch_size * config.in_channels;
  p.patch_embed = DenseLayer::init(patch_in, C, rng);
  std::normal_distribution<double> small(0.0, 0.02);
  p.positions = Tensor({config.num_patches() + 1, C});
  for (double& v : p.positions.values()) v = small(rng);
  p.class_token = Tensor({1, C});
  for (double& v : p.class_token.values()) v = small(rng);
  for (int b = 0; b < config.depth; ++b) {
    VitBlock block;
    block.ln1_gain = Tensor({C}, 1.0);
    block.ln1_bias = Tensor({C}, 0.0);
    block.query = DenseLayer::init(C, C, rng);
    block.key = DenseLayer::init(C, C, rng);
    block.value = DenseLayer::init(C, C, rng);
    block.out = DenseLayer::init(C, C, rng);
    block.ln2_gain = Tensor({C}, 1.0);
    block.ln2_bias = Tensor({C}, 0.0);
    block.fc1 = DenseLayer::init(C, config.mlp_hidden, rng);
    block.fc2 = DenseLayer::init(config.mlp_hidden, C, rng);
    p.blocks.push_back(std::move(block));
  }
  p.attention = DenseLayer::init(C, config.num_attributes, rng);
  return p;
}

void VitParams::collect(ParamList& out) {
  patch_embed.collect("vit.patch_embed", out);
  out.push_back({"vit.positions", &positions, false});
  out.push_back({"vit.class_token", &class_token, false});
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const std::string prefix = "vit.block" + std::to_string(b);
    VitBlock& blk = blocks[b];
    out.push_back({prefix + ".ln1.gain", &blk.ln1_gain, false});
    out.push_back({prefix + ".ln1.bias", &blk.ln1_bias, false});
    blk.query.collect(prefix + ".query", out);
    blk.key.collect(prefix + ".key", out);
    blk.value.collect(prefix + ".value", out);
    blk.out.collect(prefix + ".out", out);
    out.push_back({prefix + ".ln2.gain", &blk.ln2_gain, false});
    out.push_back({prefix + ".ln2.bias", &blk.ln2_bias, false});
    blk.fc1.collect(prefix + ".fc1", out);
    blk.fc2.collect(prefix + ".fc2", out);
  }
  attention.collect("vit.attention", out);
}

void BackboneParams::collect(ParamList& out) {
  if (kind == BackboneKind::Cnn) {
    cnn.collect(out);
  } else {
    vit.collect(out);
  }
}

int BackboneParams::feature_dim() const {
  return kind == BackboneKind::Cnn ? cnn.config.feature_dim() : vit.config.feature_dim();
}
int BackboneParams::grid_size() const {
  return kind == BackboneKind::Cnn ? cnn.config.grid_size() : vit.config.grid_size();
}
int BackboneParams::image_size() const {
  return kind == BackboneKind::Cnn ? cnn.config.image_size : vit.config.image_size;
}
int BackboneParams::in_channels() const {
  return kind == BackboneKind::Cnn ? cnn.config.in_channels : vit.config.in_channels;
}
int BackboneParams::num_attributes() const {
  return kind == BackboneKind::Cnn ? cnn.config.num_attributes : vit.config.num_attributes;
}

Tensor patchify(const Tensor& image, int patch_size) {
  if (image.rank() != 3) throw ShapeError("patchify expects H x W x C");
  const int H = image.dim(0);
  const int W = image.dim(1);
  const int C = image.dim(2);
  if (patch_size < 1 || H % patch_size || W % patch_size) {
    throw ShapeError("image " + shape_string(image.shape()) + " is not divisible into " + std::to_string(patch_size) +
                     "-pixel patches");
  }
  const int gh = H / patch_size;
  const int gw = W / patch_size;
  Tensor out({gh * gw, patch_size * patch_size * C});
  for (int py = 0; py < gh; ++py) {
    for (int px = 0; px < gw; ++px) {
      double* dst = out.row(py * gw + px).data();
      for (int y = 0; y < patch_size; ++y) {
        for (int x = 0; x < patch_size; ++x) {
          for (int c = 0; c < C; ++c) {
            *dst++ = image.at(py * patch_size + y, px * patch_size + x, c);
          }
        }
      }
    }
  }
  return out;
}

namespace ag {
namespace {

Var dense(ParamBinder& bind, const DenseLayer& layer, Var x) {
  return add_row(matmul(x, bind(layer.weight)), bind(layer.bias));
}

void check_image(const Tensor& image, int size, int channels) {
  if (image.shape() != std::vector<int>{size, size, channels}) {
    throw ShapeError("image " + shape_string(image.shape()) + " does not match backbone input " +
                     shape_string({size, size, channels}));
  }
}

FeatureVars finish(Var features, Var attention, Var class_feature, int h, int w) {
  FeatureVars out;
  out.features = features;
  out.attention = attention;
  out.attention_softmax = softmax2d(attention);
  out.class_feature = class_feature;
  out.attribute_features = attribute_pool(features, out.attention_softmax);
  out.height = h;
  out.width = w;
  return out;
}

}  // namespace

Var softmax2d(Var attention) { return softmax_cols(reshape(attention, {attention.rows(), attention.cols()})); }

Var attribute_pool(Var features, Var attention_softmax) {
  if (features.rows() != attention_softmax.rows()) throw ShapeError("attribute_pool: spatial sizes differ");
  return scale(matmul_tn(attention_softmax, reshape(features, {features.rows(), features.cols()})),
               1.0 / features.rows());
}

Var semantic_readout(Var attention_softmax) { return col_max(attention_softmax); }

FeatureVars extract_cnn(ParamBinder& bind, const CnnParams& params, const Tensor& image) {
  const CnnConfig& cfg = params.config;
  check_image(image, cfg.image_size, cfg.in_channels);
  Graph& g = bind.graph();
  const int grid = cfg.grid_size();
  Var x = g.external(image, false);
  int side = cfg.image_size;
  Var attention;
  for (std::size_t s = 0; s < 4; ++s) {
    const ConvStage& stage = params.stages[s];
    x = relu(conv3x3(x, bind(stage.weight), bind(stage.bias)));
    if (s < 3) {
      x = max_pool2x2(x);
      side /= 2;
    }
    Var proj = dense(bind, stage.attention, reshape(x, {side * side, x.cols()}));
    proj = resize_bilinear(proj, side, side, grid, grid);
    attention = attention.valid() ? add(attention, proj) : proj;
  }
  return finish(x, attention, mean_rows(reshape(x, {grid * grid, x.cols()})), grid, grid);
}

FeatureVars extract_vit(ParamBinder& bind, const VitParams& params, const Tensor& image) {
  const VitConfig& cfg = params.config;
  check_image(image, cfg.image_size, cfg.in_channels);
  Graph& g = bind.graph();
  const int C = cfg.dim;
  const int P = cfg.num_patches();
  const int grid = cfg.grid_size();
  const int head_dim = C / cfg.heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Var patches = dense(bind, params.patch_embed, g.constant(patchify(image, cfg.patch_size)));
  Var tokens = add(concat_rows({bind(params.class_token), patches}), bind(params.positions));
  for (const VitBlock& blk : params.blocks) {
    Var h = add_row(mul_row(layer_norm_rows(tokens), bind(blk.ln1_gain)), bind(blk.ln1_bias));
    Var q = dense(bind, blk.query, h);
    Var k = dense(bind, blk.key, h);
    Var v = dense(bind, blk.value, h);
    std::vector<Var> heads;
    for (int head = 0; head < cfg.heads; ++head) {
      const int b = head * head_dim;
      const int e = b + head_dim;
      Var weights = softmax_rows(scale(matmul_nt(slice_cols(q, b, e), slice_cols(k, b, e)), inv_sqrt_d));
      heads.push_back(matmul(weights, slice_cols(v, b, e)));
    }
    tokens = add(tokens, dense(bind, blk.out, concat_cols(heads)));
    Var h2 = add_row(mul_row(layer_norm_rows(tokens), bind(blk.ln2_gain)), bind(blk.ln2_bias));
    tokens = add(tokens, dense(bind, blk.fc2, gelu(dense(bind, blk.fc1, h2))));
  }
  const int cls_row = 0;
  Var class_feature = gather_rows(tokens, std::span<const int>(&cls_row, 1));
  std::vector<int> patch_rows(static_cast<std::size_t>(P));
  for (int i = 0; i < P; ++i) patch_rows[static_cast<std::size_t>(i)] = i + 1;
  Var features = reshape(gather_rows(tokens, patch_rows), {grid, grid, C});
  Var attention = reshape(dense(bind, params.attention, reshape(features, {P, C})), {grid, grid, cfg.num_attributes});
  return finish(features, attention, class_feature, grid, grid);
}

FeatureVars extract(ParamBinder& bind, const BackboneParams& params, const Tensor& image) {
  return params.kind == BackboneKind::Cnn ? extract_cnn(bind, params.cnn, image) : extract_vit(bind, params.vit, image);
}

}  // namespace ag

namespace {

FeatureBundle to_bundle(const ag::FeatureVars& v) {
  FeatureBundle b;
  b.features = v.features.value();
  b.attention = v.attention.value();
  b.class_feature = v.class_feature.value().reshaped({v.class_feature.value().cols()});
  b.attribute_features = v.attribute_features.value();
  return b;
}

}  // namespace

Tensor softmax2d(const Tensor& attention) {
  ag::Graph g;
  return ag::softmax2d(g.constant(attention)).value();
}

Tensor attribute_pool(const Tensor& features, const Tensor& attention) {
  if (features.rank() != 3 || attention.rank() != 3 || features.dim(0) != attention.dim(0) ||
      features.dim(1) != attention.dim(1)) {
    throw ShapeError("attribute_pool: F " + shape_string(features.shape()) + " and AM " +
                     shape_string(attention.shape()) + " must share H x W");
  }
  ag::Graph g;
  return ag::attribute_pool(g.constant(features), ag::softmax2d(g.constant(attention))).value();
}

Tensor semantic_readout(const Tensor& attention) {
  ag::Graph g;
  Tensor out = ag::semantic_readout(ag::softmax2d(g.constant(attention))).value();
  out.reshape({out.cols()});
  return out;
}

Tensor attention_peaks(const Tensor& attention) {
  const int K = attention.cols();
  const int HW = attention.rows();
  Tensor out({K});
  for (int j = 0; j < K; ++j) {
    double best = attention[static_cast<std::size_t>(j)];
    for (int p = 1; p < HW; ++p) best = std::max(best, attention[static_cast<std::size_t>(p) * K + j]);
    out[static_cast<std::size_t>(j)] = best;
  }
  return out;
}

FeatureBundle extract_cnn(const CnnParams& params, const Tensor& image) {
  ag::Graph g;
  ag::ParamBinder bind(g, false);
  return to_bundle(ag::extract_cnn(bind, params, image));
}

FeatureBundle extract_vit(const VitParams& params, const Tensor& image) {
  ag::Graph g;
  ag::ParamBinder bind(g, false);
  return to_bundle(ag::extract_vit(bind, params, image));
}

FeatureBundle extract(const BackboneParams& params, const Tensor& image) {
  return params.kind == BackboneKind::Cnn ? extract_cnn(params.cnn, image) : extract_vit(params.vit, image);
}

}  // namespace coar
