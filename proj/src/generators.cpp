#include "splice/generators.hpp"

#include "splice/errors.hpp"

namespace splice::gen {

namespace {
Var channel_concat(const Var& a, const Var& b) {
  const Index ca = a->value.dim(0), h = a->value.dim(1), w = a->value.dim(2);
  const Index cb = b->value.dim(0);
  Var flat = ad::concat_rows({ad::reshape(a, {ca, h * w}),
                              ad::reshape(b, {cb, h * w})});
  return ad::reshape(flat, {ca + cb, h, w});
}

void check_input(const Tensor& img, Index factor, const char* who) {
  if (img.rank() != 3 || img.dim(0) != 3)
    throw ConfigError(std::string(who) + ": expected a [3,H,W] image, got " +
                      img.shape_str());
  if (img.dim(1) % factor != 0 || img.dim(2) % factor != 0)
    throw ConfigError(std::string(who) + ": spatial size " + img.shape_str() +
                      " must be divisible by " + std::to_string(factor));
}
}  // namespace

// ------------------------------------------------------------------ Splice

void SpliceGeneratorConfig::validate() const {
  if (encoder_channels.empty())
    throw ConfigError("splice generator: empty encoder channel list");
  for (Index c : encoder_channels)
    if (c < 1)
      throw ConfigError("splice generator: non-positive channel width");
}

SpliceGenerator::SpliceGenerator(SpliceGeneratorConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)) {
  cfg_.validate();
  nn::Rng rng(seed);
  const auto& ch = cfg_.encoder_channels;
  const size_t L = ch.size();
  Index in = 3;
  for (size_t i = 0; i < L; ++i) {
    const std::string n = "enc" + std::to_string(i);
    enc_.emplace_back(ps_, n, in, ch[i], 3, 2, 1, rng);
    enc_bn_.emplace_back(ps_, n + ".bn", ch[i], rng);
    skip_.emplace_back(ps_, "skip" + std::to_string(i), ch[i], ch[i], 1, 1, 0,
                       rng);
    in = ch[i];
  }
  // Decoder widths mirror the encoder; each conv sees the running feature
  // concatenated with the same-resolution skip projection.
  Index x = ch.back();
  for (size_t i = 0; i < L; ++i) {
    const size_t lvl = L - 1 - i;  // which skip joins here
    const Index out = ch[lvl];
    const std::string n = "dec" + std::to_string(i);
    dec_.emplace_back(ps_, n, x + ch[lvl], out, 3, 1, 1, rng);
    dec_bn_.emplace_back(ps_, n + ".bn", out, rng);
    x = out;
  }
  final_ = nn::Conv2d(ps_, "final", ch[0], 3, 1, 1, 0, rng);
}

Var SpliceGenerator::forward(const Var& image, bool training) {
  check_input(image->value, downsample_factor(), "splice generator");
  const size_t L = enc_.size();
  std::vector<Var> skips(L);
  Var x = image;
  for (size_t i = 0; i < L; ++i) {
    x = ad::leaky_relu(enc_bn_[i].forward(enc_[i].forward(x), training), 0.2f);
    skips[i] = skip_[i].forward(x);
  }
  for (size_t i = 0; i < L; ++i) {
    x = channel_concat(x, skips[L - 1 - i]);
    x = ad::leaky_relu(dec_bn_[i].forward(dec_[i].forward(x), training), 0.2f);
    x = ad::upsample_nearest2x(x);
  }
  return ad::sigmoid(final_.forward(x));
}

TensorArchive SpliceGenerator::state() const {
  TensorArchive a = ps_.to_archive();
  for (size_t i = 0; i < enc_bn_.size(); ++i)
    enc_bn_[i].save_stats(a, "enc" + std::to_string(i) + ".bn");
  for (size_t i = 0; i < dec_bn_.size(); ++i)
    dec_bn_[i].save_stats(a, "dec" + std::to_string(i) + ".bn");
  return a;
}

void SpliceGenerator::load_state(const TensorArchive& a) {
  ps_.load_archive(a);
  for (size_t i = 0; i < enc_bn_.size(); ++i)
    enc_bn_[i].load_stats(a, "enc" + std::to_string(i) + ".bn");
  for (size_t i = 0; i < dec_bn_.size(); ++i)
    dec_bn_[i].load_stats(a, "dec" + std::to_string(i) + ".bn");
}

// ---------------------------------------------------------------- SpliceNet

void SpliceNetConfig::validate() const {
  if (stem_channels < 1 || style_dim < 1 || mapping_hidden < 1)
    throw ConfigError("splicenet: non-positive width in config");
  if (encoder_channels.empty())
    throw ConfigError("splicenet: empty encoder channel list");
  for (Index c : encoder_channels)
    if (c < 1) throw ConfigError("splicenet: non-positive channel width");
}

Var SpliceNet::DownBlock::forward(const Var& x) const {
  Var y = ad::leaky_relu(c1.forward(x), 0.2f);
  y = ad::leaky_relu(c2.forward(y), 0.2f);
  return ad::add(y, res.forward(x));
}

Var SpliceNet::ModBlock::forward(const Var& x, const Var& mapped) const {
  Var y = ad::leaky_relu(c1.forward(x, mapped), 0.2f);
  y = ad::leaky_relu(c2.forward(y, mapped), 0.2f);
  return ad::add(y, res.forward(x, mapped));
}

SpliceNet::SpliceNet(SpliceNetConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)) {
  cfg_.validate();
  nn::Rng rng(seed);
  const auto& ch = cfg_.encoder_channels;
  const size_t L = ch.size();
  const Index sd = cfg_.style_dim;

  stem_ = nn::Conv2d(ps_, "stem", 3, cfg_.stem_channels, 1, 1, 0, rng);

  Index in = cfg_.stem_channels;
  for (size_t i = 0; i < L; ++i) {
    const std::string n = "enc" + std::to_string(i);
    DownBlock b;
    b.c1 = nn::Conv2d(ps_, n + ".c1", in, ch[i], 3, 2, 1, rng);
    b.c2 = nn::Conv2d(ps_, n + ".c2", ch[i], ch[i], 3, 1, 1, rng);
    b.res = nn::Conv2d(ps_, n + ".res", in, ch[i], 1, 2, 0, rng);
    enc_.push_back(std::move(b));
    in = ch[i];
  }

  // Skip paths carry the stem output and every encoder level but the last.
  std::vector<Index> skip_ch{cfg_.stem_channels};
  for (size_t i = 0; i + 1 < L; ++i) skip_ch.push_back(ch[i]);
  for (size_t i = 0; i < skip_ch.size(); ++i) {
    const std::string n = "skip" + std::to_string(i);
    const Index c = skip_ch[i];
    ModBlock b;
    b.c1 = nn::ModulatedConv2d(ps_, n + ".c1", c, c, 3, 1, sd, rng);
    b.c2 = nn::ModulatedConv2d(ps_, n + ".c2", c, c, 3, 1, sd, rng);
    b.res = nn::ModulatedConv2d(ps_, n + ".res", c, c, 1, 0, sd, rng);
    skips_.push_back(std::move(b));
  }

  Index x = ch.back();
  for (size_t i = 0; i < L; ++i) {
    const size_t lvl = L - 1 - i;  // index into skip_ch
    const Index cin = x + skip_ch[lvl];
    const Index out = skip_ch[lvl];
    const std::string n = "dec" + std::to_string(i);
    ModBlock b;
    b.c1 = nn::ModulatedConv2d(ps_, n + ".c1", cin, out, 3, 1, sd, rng);
    b.c2 = nn::ModulatedConv2d(ps_, n + ".c2", out, out, 3, 1, sd, rng);
    b.res = nn::ModulatedConv2d(ps_, n + ".res", cin, out, 1, 0, sd, rng);
    dec_.push_back(std::move(b));
    x = out;
  }

  head_ = nn::ModulatedConv2d(ps_, "head", cfg_.stem_channels, 3, 1, 0, sd,
                              rng);
  map1_ = nn::Linear(ps_, "map1", sd, cfg_.mapping_hidden, rng);
  map2_ = nn::Linear(ps_, "map2", cfg_.mapping_hidden, sd, rng);
}

Var SpliceNet::map_style(const Var& cls) const {
  if (cls->value.size() != cfg_.style_dim)
    throw ConfigError("splicenet: token length " +
                      std::to_string(cls->value.size()) + " != style dim " +
                      std::to_string(cfg_.style_dim));
  Var row = ad::reshape(cls, {1, cfg_.style_dim});
  Var h = ad::gelu(map1_.forward(row));
  return ad::reshape(map2_.forward(h), {cfg_.style_dim});
}

Var SpliceNet::forward(const Var& structure, const Var& cls) const {
  return forward_mapped(structure, map_style(cls));
}

Var SpliceNet::forward_mapped(const Var& structure, const Var& mapped) const {
  check_input(structure->value, downsample_factor(), "splicenet");
  Var x = stem_.forward(structure);
  std::vector<Var> skips;
  skips.push_back(skips_[0].forward(x, mapped));
  for (size_t i = 0; i < enc_.size(); ++i) {
    x = enc_[i].forward(x);
    if (i + 1 < enc_.size())
      skips.push_back(skips_[i + 1].forward(x, mapped));
  }
  for (size_t i = 0; i < dec_.size(); ++i) {
    x = channel_concat(ad::upsample_nearest2x(x),
                       skips[skips.size() - 1 - i]);
    x = dec_[i].forward(x, mapped);
  }
  return ad::sigmoid(head_.forward(x, mapped));
}

}  // namespace splice::gen
