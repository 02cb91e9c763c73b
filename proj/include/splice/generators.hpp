#pragma once

#include "splice/nn.hpp"

namespace splice::gen {

using ad::Var;

// ------------------------------------------------------------------ Splice

/// Per-pair U-Net: 5 stride-2 conv levels (BatchNorm + LeakyReLU), a 1x1
/// skip projection per level concatenated ahead of each decoder conv, and a
/// final 1x1 + sigmoid. ~1.0M parameters at the default widths.
struct SpliceGeneratorConfig {
  std::vector<Index> encoder_channels{16, 32, 64, 128, 128};
  void validate() const;
};

class SpliceGenerator {
 public:
  SpliceGenerator(SpliceGeneratorConfig cfg, std::uint64_t seed);

  /// [3,H,W] in [0,1] -> [3,H,W] in (0,1). H and W must be divisible by
  /// 2^levels. `training` selects batch-stat vs running-stat normalization.
  Var forward(const Var& image, bool training);

  Index downsample_factor() const {
    return Index(1) << cfg_.encoder_channels.size();
  }
  const SpliceGeneratorConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return ps_; }
  const nn::ParamStore& params() const { return ps_; }

  /// Parameters plus normalization running stats, ready for a checkpoint.
  TensorArchive state() const;
  void load_state(const TensorArchive& a);

 private:
  SpliceGeneratorConfig cfg_;
  nn::ParamStore ps_;
  std::vector<nn::Conv2d> enc_, skip_, dec_;
  std::vector<nn::BatchNorm2d> enc_bn_, dec_bn_;
  nn::Conv2d final_;
};

// ---------------------------------------------------------------- SpliceNet

/// Feed-forward model: 1x1 stem, 5 downsampling residual blocks, a modulated
/// residual block on each skip path (stem + first four encoder outputs), 5
/// modulated upsampling residual blocks, modulated 1x1 head + sigmoid.
/// Conditioning: global token -> 2-layer GELU mapping network -> per-conv
/// affine styles (modulate/demodulate discipline).
struct SpliceNetConfig {
  Index stem_channels = 32;
  std::vector<Index> encoder_channels{64, 128, 256, 512, 1024};
  Index style_dim = 768;
  Index mapping_hidden = 768;
  void validate() const;
};

class SpliceNet {
 public:
  SpliceNet(SpliceNetConfig cfg, std::uint64_t seed);

  /// Mapping network only: [style_dim] token -> [style_dim] modulation vector.
  Var map_style(const Var& cls) const;

  /// structure [3,H,W] (H, W divisible by 2^levels), cls [style_dim].
  Var forward(const Var& structure, const Var& cls) const;
  /// Same, with a pre-computed mapping-network output.
  Var forward_mapped(const Var& structure, const Var& mapped) const;

  Index downsample_factor() const {
    return Index(1) << cfg_.encoder_channels.size();
  }
  const SpliceNetConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return ps_; }
  const nn::ParamStore& params() const { return ps_; }

  TensorArchive state() const { return ps_.to_archive(); }
  void load_state(const TensorArchive& a) { ps_.load_archive(a); }

 private:
  struct DownBlock {  // plain residual block, stride-2 entry
    nn::Conv2d c1, c2, res;
    Var forward(const Var& x) const;
  };
  struct ModBlock {  // modulated residual block, optional 2x upsample entry
    nn::ModulatedConv2d c1, c2, res;
    bool upsample = false;
    Var forward(const Var& x, const Var& mapped) const;
  };

  SpliceNetConfig cfg_;
  nn::ParamStore ps_;
  nn::Conv2d stem_;
  std::vector<DownBlock> enc_;
  std::vector<ModBlock> skips_;  // stem, e1..e4
  std::vector<ModBlock> dec_;
  nn::ModulatedConv2d head_;
  nn::Linear map1_, map2_;
};

}  // namespace splice::gen
