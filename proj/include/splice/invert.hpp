#pragma once

#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "splice/image.hpp"
#include "splice/vit.hpp"

namespace splice::invert {

enum class FeatureKind { Cls, Keys, SelfSim };

struct FeatureSelector {
  FeatureKind kind = FeatureKind::Cls;
  Index layer = 0;  // 0 means deepest
};

/// "cls@12" | "keys@12" | "selfsim@12"; "@N" optional (deepest by default).
FeatureSelector parse_selector(const std::string& text);
std::string selector_name(const FeatureSelector& s);

struct InversionConfig {
  FeatureSelector selector;
  Index steps = 2000;
  Scalar lr = 1e-3f;
  std::uint64_t prior_seed = 0;  // fixes the noise input z and the prior init
  Index output_size = 224;       // square; rounded to a compatible multiple
  bool pixels_only = false;      // optimize raw pixels, no prior network
  // Abort when the loss exceeds divergence_factor x initial for
  // divergence_window consecutive steps.
  Scalar divergence_factor = 10;
  Index divergence_window = 50;

  void validate() const;
};

struct InversionResult {
  Tensor image;  // [3,S,S]
  std::vector<Scalar> trace;
  Scalar initial_loss = 0;
  Scalar final_loss = 0;
};

/// Optimize a seeded image prior (or raw pixels) so the selected ViT feature
/// of its output matches the target's. Throws NumericError on divergence.
InversionResult invert_feature(
    const vit::VitModel& vit, const Image& target, const InversionConfig& cfg,
    const std::function<void(Index, Scalar)>& on_step = {});

struct MultiInversion {
  std::map<Index, InversionResult> results;
  std::map<Index, std::string> errors;  // layer -> failure message
};

/// One global-token inversion per requested layer; failures are recorded and
/// the remaining layers still run.
MultiInversion invert_cls_across_layers(const vit::VitModel& vit,
                                        const Image& target,
                                        const std::set<Index>& layers,
                                        InversionConfig cfg);

}  // namespace splice::invert
