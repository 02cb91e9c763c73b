#pragma once

#include <string>
#include <vector>

#include "splice/tensor.hpp"

namespace splice::clsops {

/// t_i = alpha_i * cls_target + (1 - alpha_i) * cls_structure.
std::vector<Tensor> interpolate_cls(const Tensor& cls_structure,
                                    const Tensor& cls_target,
                                    const std::vector<Scalar>& alphas);

struct ModeSet {
  Tensor centroids;                // [K, D]
  std::vector<Index> assignments;  // token row -> centroid index
  Scalar inertia = 0;
  std::uint64_t seed = 0;

  void save(const std::string& tensor_path,
            const std::string& manifest_path) const;
  static ModeSet load(const std::string& tensor_path,
                      const std::string& manifest_path);
};

/// Lloyd's algorithm with k-means++ seeding; converges when the largest
/// centroid shift drops below `tol` (or at `max_iters`). Deterministic for a
/// fixed seed; inertia is non-increasing across iterations.
ModeSet kmeans_modes(const Tensor& tokens, Index k, std::uint64_t seed,
                     Index max_iters = 300, Scalar tol = 1e-6f);

}  // namespace splice::clsops
