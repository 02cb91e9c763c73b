#pragma once

#include <string>

#include "splice/nn.hpp"

namespace splice::losses {

using ad::Var;

struct LossWeights {
  Scalar alpha = 0.1f;  // structure weight
  Scalar beta = 0.1f;   // identity weight
};

/// One objective evaluation, still on the tape. `total` is the optimizable
/// scalar; the components are kept so callers can log them individually.
/// Invariant: total = app + alpha*structure + beta*identity.
struct LossReport {
  Var total;
  Var app;
  Var structure;
  Var identity;
};

/// Euclidean norm of the global-token difference.
Var appearance_loss(const Var& cls_out, const Var& cls_target);

/// Frobenius norm of the self-similarity difference.
Var structure_loss(const Var& sim_out, const Var& sim_source);

/// Frobenius norm of the deepest-layer key difference.
Var identity_loss_keys(const Var& keys_target, const Var& keys_generated);

LossReport splice_objective(const Var& cls_out, const Var& cls_target,
                            const Var& sim_out, const Var& sim_source,
                            const Var& keys_target,
                            const Var& keys_of_generated_target,
                            const LossWeights& weights);

enum class DistanceBackend { MeanSquared, LearnedPerceptual };

/// "mean-squared" | "learned-perceptual"; anything else is a ConfigError.
DistanceBackend parse_distance_backend(const std::string& name);

/// Pluggable image distance. MeanSquared is the analytic fallback;
/// LearnedPerceptual runs both images through a small frozen conv pyramid
/// (seeded random by default, replaceable via load_weights) and sums the
/// mean-squared feature gaps per level.
class PerceptualDistance {
 public:
  explicit PerceptualDistance(DistanceBackend backend,
                              std::uint64_t seed = 0x1b9f);

  Var operator()(const Var& a, const Var& b) const;
  Scalar operator()(const Tensor& a, const Tensor& b) const;

  DistanceBackend backend() const { return backend_; }
  void save_weights(TensorArchive& a) const { a.merge(ps_.to_archive()); }
  void load_weights(const TensorArchive& a) { ps_.load_archive(a); }

 private:
  DistanceBackend backend_;
  nn::ParamStore ps_;
  std::vector<nn::Conv2d> convs_;
};

}  // namespace splice::losses
