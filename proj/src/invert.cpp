#include "splice/invert.hpp"

#include <cmath>
#include <numeric>

#include "splice/augment.hpp"
#include "splice/descriptors.hpp"
#include "splice/errors.hpp"
#include "splice/ops.hpp"

namespace splice::invert {

FeatureSelector parse_selector(const std::string& text) {
  FeatureSelector s;
  std::string kind = text;
  const auto at = text.find('@');
  if (at != std::string::npos) {
    kind = text.substr(0, at);
    try {
      s.layer = std::stol(text.substr(at + 1));
    } catch (const std::exception&) {
      throw ConfigError("bad feature selector '" + text + "': layer not a number");
    }
    if (s.layer < 1)
      throw ConfigError("bad feature selector '" + text + "': layer must be >= 1");
  }
  if (kind == "cls")
    s.kind = FeatureKind::Cls;
  else if (kind == "keys")
    s.kind = FeatureKind::Keys;
  else if (kind == "selfsim")
    s.kind = FeatureKind::SelfSim;
  else
    throw ConfigError("bad feature selector '" + text +
                      "' (expected cls|keys|selfsim, optionally @layer)");
  return s;
}

std::string selector_name(const FeatureSelector& s) {
  std::string kind = s.kind == FeatureKind::Cls      ? "cls"
                     : s.kind == FeatureKind::Keys   ? "keys"
                                                     : "selfsim";
  return s.layer ? kind + "@" + std::to_string(s.layer) : kind;
}

void InversionConfig::validate() const {
  if (steps < 0) throw ConfigError("inversion: steps must be >= 0");
  if (!(lr > 0)) throw ConfigError("inversion: lr must be positive");
  if (output_size < 1) throw ConfigError("inversion: output size must be >= 1");
  if (divergence_factor <= 1 || divergence_window < 1)
    throw ConfigError("inversion: bad divergence guard");
}

namespace {

/// Minimal image prior: fixed seeded noise z [32,S,S] pushed through a
/// 4-level encoder-decoder CNN whose weights are the optimization variables.
struct PriorNet {
  nn::ParamStore ps;
  Tensor z;
  std::vector<nn::Conv2d> enc, dec;
  nn::Conv2d head;

  PriorNet(Index size, std::uint64_t seed) {
    nn::Rng rng(seed);
    z = nn::randn({32, size, size}, rng);
    const Index ec[] = {32, 32, 64, 64, 64};
    for (int i = 0; i < 4; ++i)
      enc.emplace_back(ps, "enc" + std::to_string(i), ec[i], ec[i + 1], 3, 2,
                       1, rng);
    const Index dc[] = {64, 64, 64, 32, 32};
    for (int i = 0; i < 4; ++i)
      dec.emplace_back(ps, "dec" + std::to_string(i), dc[i], dc[i + 1], 3, 1,
                       1, rng);
    head = nn::Conv2d(ps, "head", 32, 3, 1, 1, 0, rng);
  }

  ad::Var forward() const {
    ad::Var x = ad::constant(z);
    for (const auto& c : enc) x = ad::leaky_relu(c.forward(x), 0.2f);
    for (const auto& c : dec)
      x = ad::leaky_relu(c.forward(ad::upsample_nearest2x(x)), 0.2f);
    return ad::sigmoid(head.forward(x));
  }
};

Index lcm(Index a, Index b) { return a / std::gcd(a, b) * b; }

ad::Var feature_of(const vit::VitModel& vit, const ad::Var& image,
                   const FeatureSelector& s) {
  const Index layer = s.layer ? s.layer : vit.deepest_layer();
  if (layer > vit.deepest_layer())
    throw ConfigError("feature selector layer " + std::to_string(layer) +
                      " exceeds model depth " +
                      std::to_string(vit.deepest_layer()));
  auto f = vit.forward_features(image, {layer});
  switch (s.kind) {
    case FeatureKind::Cls:
      return features::extract_cls(f, layer);
    case FeatureKind::Keys:
      return f.keys_at(layer);
    case FeatureKind::SelfSim:
      return features::self_similarity(f.keys_at(layer));
  }
  throw ConfigError("unreachable selector kind");
}

}  // namespace

InversionResult invert_feature(
    const vit::VitModel& vit, const Image& target, const InversionConfig& cfg,
    const std::function<void(Index, Scalar)>& on_step) {
  cfg.validate();
  const Index patch = vit.config().patch_size;
  const Index mult = cfg.pixels_only ? patch : lcm(patch, 16);
  const Index size = std::max<Index>(1, (cfg.output_size + mult / 2) / mult) *
                     mult;

  const Tensor target_sq = train::resize_bicubic(target.t, size, size);
  const Tensor phi_target =
      feature_of(vit, ad::constant(target_sq), cfg.selector)->value;

  PriorNet prior(size, cfg.prior_seed);
  nn::Rng pix_rng(cfg.prior_seed);
  nn::ParamStore pixel_ps;
  ad::Var pixel_logits;
  if (cfg.pixels_only)
    pixel_logits = pixel_ps.add("pixels", nn::randn({3, size, size}, pix_rng,
                                                    0.1f));

  auto render = [&]() {
    return cfg.pixels_only ? ad::sigmoid(pixel_logits) : prior.forward();
  };
  nn::ParamStore& ps = cfg.pixels_only ? pixel_ps : prior.ps;
  nn::Adam opt(cfg.lr, 0.9f, 0.999f);

  InversionResult res;
  Index high_streak = 0;
  for (Index step = 0; step <= cfg.steps; ++step) {
    ad::Var out = render();
    ad::Var loss = ad::l2_diff(feature_of(vit, out, cfg.selector),
                               ad::constant(phi_target));
    const Scalar v = loss->value.item();
    if (!std::isfinite(v))
      throw NumericError("inversion: non-finite loss at step " +
                         std::to_string(step));
    if (step == 0) res.initial_loss = v;
    res.trace.push_back(v);
    res.final_loss = v;
    res.image = out->value;
    if (on_step) on_step(step, v);

    high_streak = v > cfg.divergence_factor * res.initial_loss
                      ? high_streak + 1
                      : 0;
    if (high_streak >= cfg.divergence_window)
      throw NumericError(
          "inversion diverged: loss " + std::to_string(v) + " > " +
          std::to_string(cfg.divergence_factor) + "x initial for " +
          std::to_string(cfg.divergence_window) + " steps (at step " +
          std::to_string(step) + ")");
    if (step == cfg.steps) break;
    ad::backward(loss);
    opt.step(ps);
  }
  return res;
}

MultiInversion invert_cls_across_layers(const vit::VitModel& vit,
                                        const Image& target,
                                        const std::set<Index>& layers,
                                        InversionConfig cfg) {
  MultiInversion out;
  for (Index l : layers) {
    cfg.selector = {FeatureKind::Cls, l};
    try {
      out.results[l] = invert_feature(vit, target, cfg);
    } catch (const std::exception& e) {
      out.errors[l] = e.what();
    }
  }
  return out;
}

}  // namespace splice::invert
