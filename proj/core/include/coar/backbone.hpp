#pragma once

// Feature extractors with attention-based attribute localisation.
//
// Both backbones produce, per image:
//   F   H x W x C  feature map
//   AM  H x W x K  raw (pre-softmax) attention, one channel per attribute
//   cf  C          class-level feature
//   AF  K x C      attribute-level features, af_j = sum_p softmax2d(am_j)[p] F[p] / (H*W)
//
// The CNN takes cf = GAP(F) and sums per-stage 1x1 attention projections,
// bilinearly resized to the last stage's grid. The transformer takes cf from
// the classification token and projects the patch-token grid to K channels.

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "coar/autograd.hpp"
#include "coar/params.hpp"

namespace coar {

enum class BackboneKind { Cnn, Vit };

std::string to_string(BackboneKind kind);
BackboneKind parse_backbone_kind(std::string_view text);

/// Four conv3x3 -> ReLU stages; the first three end with 2x2 max pooling,
/// so a 64 x 64 input yields an 8 x 8 grid.
struct CnnConfig {
  int image_size = 64;
  int in_channels = 3;
  std::array<int, 4> channels{16, 32, 48, 64};
  int num_attributes = 12;

  int grid_size() const { return image_size / 8; }
  int feature_dim() const { return channels[3]; }
};

struct VitConfig {
  int image_size = 32;
  int in_channels = 3;
  int patch_size = 8;
  int dim = 64;
  int heads = 4;
  int depth = 2;
  int mlp_hidden = 128;
  int num_attributes = 12;

  int grid_size() const { return image_size / patch_size; }
  int num_patches() const { return grid_size() * grid_size(); }
  int feature_dim() const { return dim; }
};

struct ConvStage {
  Tensor weight;         // (9 * Cin) x Cout
  Tensor bias;           // Cout
  DenseLayer attention;  // Cout -> K, applied per pixel
};

struct CnnParams {
  CnnConfig config;
  std::array<ConvStage, 4> stages;

  static CnnParams init(const CnnConfig& config, Rng& rng);
  void collect(ParamList& out);
};

struct VitBlock {
  Tensor ln1_gain, ln1_bias;
  DenseLayer query, key, value, out;
  Tensor ln2_gain, ln2_bias;
  DenseLayer fc1, fc2;
};

struct VitParams {
  VitConfig config;
  DenseLayer patch_embed;  // (Q*Q*Cin) -> C
  Tensor positions;        // (P + 1) x C, row 0 belongs to the class token
  Tensor class_token;      // 1 x C
  std::vector<VitBlock> blocks;
  DenseLayer attention;  // C -> K over the token grid (1x1 convolution)

  static VitParams init(const VitConfig& config, Rng& rng);
  void collect(ParamList& out);
};

struct BackboneParams {
  BackboneKind kind = BackboneKind::Cnn;
  CnnParams cnn;
  VitParams vit;

  void collect(ParamList& out);
  int feature_dim() const;
  int grid_size() const;
  int image_size() const;
  int in_channels() const;
  int num_attributes() const;
};

struct FeatureBundle {
  Tensor features;            // H x W x C
  Tensor attention;           // H x W x K, raw
  Tensor class_feature;       // C
  Tensor attribute_features;  // K x C
};

/// Softmax over the H*W positions of each attention channel.
Tensor softmax2d(const Tensor& attention);
/// af_j = GAP(replicate(softmax2d(am_j)) * F).
Tensor attribute_pool(const Tensor& features, const Tensor& attention);
/// cs^e_j = max over positions of softmax2d(am_j).
Tensor semantic_readout(const Tensor& attention);
/// Raw per-channel maxima of AM (the quantity peak filtering thresholds).
Tensor attention_peaks(const Tensor& attention);

FeatureBundle extract_cnn(const CnnParams& params, const Tensor& image);
FeatureBundle extract_vit(const VitParams& params, const Tensor& image);
FeatureBundle extract(const BackboneParams& params, const Tensor& image);

/// Rows = patches in raster order, columns = (py, px, c) of each patch.
Tensor patchify(const Tensor& image, int patch_size);

namespace ag {

struct FeatureVars {
  Var features;            // H x W x C
  Var attention;           // H x W x K
  Var attention_softmax;   // (H*W) x K
  Var class_feature;       // 1 x C
  Var attribute_features;  // K x C
  int height = 0;
  int width = 0;
};

Var softmax2d(Var attention);
Var attribute_pool(Var features, Var attention_softmax);
Var semantic_readout(Var attention_softmax);

FeatureVars extract_cnn(ParamBinder& bind, const CnnParams& params, const Tensor& image);
FeatureVars extract_vit(ParamBinder& bind, const VitParams& params, const Tensor& image);
FeatureVars extract(ParamBinder& bind, const BackboneParams& params, const Tensor& image);

}  // namespace ag
}  // namespace coar
