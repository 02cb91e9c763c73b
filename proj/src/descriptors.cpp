#include "splice/descriptors.hpp"

#include <cmath>

#include "splice/errors.hpp"
#include "splice/ops.hpp"

namespace splice::features {

Var extract_cls(const vit::LayerFeatures& features, Index layer) {
  const Var& tokens = features.tokens_at(layer);
  const Index d = tokens->value.mat().cols();
  return ad::reshape(ad::slice_rows(tokens, 0, 1), {d});
}

namespace {
void check_key_rows(const Tensor& keys) {
  auto m = keys.mat();
  for (Index r = 0; r < m.rows(); ++r)
    if (m.row(r).norm() < 1e-12f)
      throw NumericError("degenerate key: row " + std::to_string(r) +
                         " has zero norm, cosine similarity undefined");
}

Index square_side(Index n, const char* what) {
  const Index g = static_cast<Index>(std::lround(std::sqrt(
      static_cast<double>(n))));
  if (g * g != n)
    throw ConfigError(std::string(what) + ": " + std::to_string(n) +
                      " keys do not form a square grid");
  return g;
}
}  // namespace

Var self_similarity(const Var& keys) {
  check_key_rows(keys->value);
  Var normed = ad::row_l2_normalize(keys);
  return ad::matmul(normed, normed, false, true);
}

Tensor self_similarity(const Tensor& keys) {
  return self_similarity(ad::constant(keys))->value;
}

Var coarse_self_similarity(const Var& spatial_keys, Index window) {
  const Index n = spatial_keys->value.mat().rows();
  const Index d = spatial_keys->value.mat().cols();
  const Index g = square_side(n, "coarse_self_similarity");
  if (window < 1 || g % window != 0)
    throw ConfigError("coarse_self_similarity: window " +
                      std::to_string(window) + " does not divide grid side " +
                      std::to_string(g));
  // [n,D] -> [D,g,g] -> pool -> [d^2,D]
  Var grid = ad::reshape(ad::transpose(spatial_keys), {d, g, g});
  Var pooled = ad::avg_pool2d(grid, window);
  const Index side = g / window;
  Var pooled_keys =
      ad::transpose(ad::reshape(pooled, {d, side * side}));
  return self_similarity(pooled_keys);
}

Tensor coarse_self_similarity(const Tensor& spatial_keys, Index window) {
  return coarse_self_similarity(ad::constant(spatial_keys), window)->value;
}

Tensor pca_component_maps(const Tensor& selfsim, Index components) {
  auto s = selfsim.mat();
  if (s.rows() != s.cols())
    throw ConfigError("pca: self-similarity matrix must be square");
  const Index m = s.rows();
  // Row 0 is the global token when the spatial remainder forms a grid.
  Index first = 0, n = m;
  if (static_cast<Index>(std::lround(std::sqrt(double(m - 1)))) *
          static_cast<Index>(std::lround(std::sqrt(double(m - 1)))) ==
      m - 1)
    first = 1, n = m - 1;
  const Index g = square_side(n, "pca");

  MatrixRM x = s.block(first, 0, n, m);
  Eigen::RowVectorXf mean = x.colwise().mean();
  x.rowwise() -= mean;
  Eigen::SelfAdjointEigenSolver<MatrixRM> eig(
      (x.transpose() * x) / static_cast<Scalar>(std::max<Index>(n - 1, 1)));
  // Eigenvalues ascend; count the numerical rank from the top.
  const auto& evals = eig.eigenvalues();
  const Scalar tol = std::max(evals.cwiseAbs().maxCoeff(), Scalar(1)) * 1e-6f;
  Index rank = 0;
  for (Index i = 0; i < m; ++i)
    if (evals[i] > tol) ++rank;
  if (components > rank)
    throw ConfigError("pca: requested " + std::to_string(components) +
                      " components but matrix rank is " +
                      std::to_string(rank));

  Tensor out({components, g, g});
  for (Index c = 0; c < components; ++c) {
    VectorX v = eig.eigenvectors().col(m - 1 - c);
    Index imax;
    v.cwiseAbs().maxCoeff(&imax);
    if (v[imax] < 0) v = -v;
    VectorX score = x * v;
    const Scalar lo = score.minCoeff(), hi = score.maxCoeff();
    const Scalar range = std::max(hi - lo, Scalar(1e-12));
    for (Index i = 0; i < n; ++i)
      out[c * n + i] = (score[i] - lo) / range;
  }
  return out;
}

}  // namespace splice::features
