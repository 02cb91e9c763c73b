#include "splice/perceptual.hpp"

#include "splice/errors.hpp"

namespace splice::losses {

namespace {
void check_shapes(const Var& a, const Var& b, const char* what) {
  if (!a->value.same_shape(b->value))
    throw ConfigError(std::string(what) + ": shape mismatch " +
                      a->value.shape_str() + " vs " + b->value.shape_str());
}
}  // namespace

Var appearance_loss(const Var& cls_out, const Var& cls_target) {
  check_shapes(cls_out, cls_target, "appearance_loss");
  return ad::l2_diff(cls_out, cls_target);
}

Var structure_loss(const Var& sim_out, const Var& sim_source) {
  check_shapes(sim_out, sim_source, "structure_loss");
  return ad::l2_diff(sim_out, sim_source);
}

Var identity_loss_keys(const Var& keys_target, const Var& keys_generated) {
  check_shapes(keys_target, keys_generated, "identity_loss_keys");
  return ad::l2_diff(keys_target, keys_generated);
}

LossReport splice_objective(const Var& cls_out, const Var& cls_target,
                            const Var& sim_out, const Var& sim_source,
                            const Var& keys_target,
                            const Var& keys_of_generated_target,
                            const LossWeights& weights) {
  LossReport r;
  r.app = appearance_loss(cls_out, cls_target);
  r.structure = structure_loss(sim_out, sim_source);
  r.identity = identity_loss_keys(keys_target, keys_of_generated_target);
  r.total = ad::add(r.app, ad::add(ad::scale(r.structure, weights.alpha),
                                   ad::scale(r.identity, weights.beta)));
  return r;
}

DistanceBackend parse_distance_backend(const std::string& name) {
  if (name == "mean-squared") return DistanceBackend::MeanSquared;
  if (name == "learned-perceptual") return DistanceBackend::LearnedPerceptual;
  throw ConfigError("unknown distance backend '" + name +
                    "' (expected mean-squared or learned-perceptual)");
}

PerceptualDistance::PerceptualDistance(DistanceBackend backend,
                                       std::uint64_t seed)
    : backend_(backend) {
  if (backend_ != DistanceBackend::LearnedPerceptual) return;
  nn::Rng rng(seed);
  const Index widths[] = {3, 8, 16, 32};
  for (int i = 0; i < 3; ++i)
    convs_.emplace_back(ps_, "pyr" + std::to_string(i), widths[i],
                        widths[i + 1], 3, 1, 1, rng);
  // The pyramid is a fixed measuring stick, never optimized.
  for (const auto& p : ps_.params()) p.var->requires_grad = false;
}

Var PerceptualDistance::operator()(const Var& a, const Var& b) const {
  check_shapes(a, b, "perceptual_distance");
  if (backend_ == DistanceBackend::MeanSquared)
    return ad::mean_square_diff(a, b);
  Var fa = a, fb = b, d = ad::mean_square_diff(a, b);
  for (const auto& conv : convs_) {
    fa = ad::leaky_relu(conv.forward(fa), 0.2f);
    fb = ad::leaky_relu(conv.forward(fb), 0.2f);
    d = ad::add(d, ad::mean_square_diff(fa, fb));
    if (&conv != &convs_.back()) {
      fa = ad::avg_pool2d(fa, 2);
      fb = ad::avg_pool2d(fb, 2);
    }
  }
  return d;
}

Scalar PerceptualDistance::operator()(const Tensor& a, const Tensor& b) const {
  return (*this)(ad::constant(a), ad::constant(b))->value.item();
}

}  // namespace splice::losses
