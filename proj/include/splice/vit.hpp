#pragma once

#include <array>
#include <map>
#include <set>
#include <string>

#include "splice/nn.hpp"

namespace splice::vit {

using ad::Var;

struct VitConfig {
  Index patch_size = 8;
  Index num_layers = 12;
  Index token_dim = 768;
  Index num_heads = 12;
  Index mlp_ratio = 4;
  std::string weights_source;
  // Input normalization applied before patch embedding (extractor training
  // statistics, pinned here so tests can assert them).
  std::array<Scalar, 3> norm_mean = {0.485f, 0.456f, 0.406f};
  std::array<Scalar, 3> norm_std = {0.229f, 0.224f, 0.225f};

  void validate() const;
};

/// Per-layer features recorded during a forward pass. Row 0 of every matrix
/// is the global token; rows 1..n are spatial tokens in raster order.
/// Keys/queries/values are the full token_dim-wide projections of the
/// normalized tokens, all heads concatenated.
struct LayerFeatures {
  std::map<Index, Var> tokens;   // layer index (1-based) -> [n+1, D]
  std::map<Index, Var> keys;
  std::map<Index, Var> queries;
  std::map<Index, Var> values;
  Index n = 0;  // spatial patch count

  const Var& tokens_at(Index layer) const;
  const Var& keys_at(Index layer) const;
};

/// Frozen feature extractor. Parameters are tape constants: no gradient ever
/// reaches them, while every recorded feature stays differentiable w.r.t.
/// the input image. Immutable after construction; concurrent read-only
/// forward passes are safe.
class VitModel {
 public:
  static VitModel load(const VitConfig& config);
  static VitModel random(const VitConfig& config, std::uint64_t seed,
                         Index base_grid = 28);
  void save(const std::string& path) const;

  LayerFeatures forward_features(const Var& image,
                                 const std::set<Index>& layers) const;
  LayerFeatures forward_features(const Tensor& image_chw,
                                 const std::set<Index>& layers) const;

  const VitConfig& config() const { return cfg_; }
  Index deepest_layer() const { return cfg_.num_layers; }
  std::uint64_t checksum() const { return params_.checksum(); }

 private:
  VitModel() = default;
  void bind();  // wires layer handles after params_ is populated
  Var block_forward(Index layer, const Var& tokens, bool record,
                    LayerFeatures& out) const;
  Tensor interpolated_pos_embed(Index grid_h, Index grid_w) const;

  VitConfig cfg_;
  nn::ParamStore params_;

  struct Block {
    Var norm1_g, norm1_b, norm2_g, norm2_b;
    Var wq, bq, wk, bk, wv, bv, wproj, bproj;
    Var fc1_w, fc1_b, fc2_w, fc2_b;
  };
  Var patch_w_, patch_b_, cls_token_, pos_embed_;
  std::vector<Block> blocks_;
};

}  // namespace splice::vit
