#pragma once

#include "splice/vit.hpp"

namespace splice::features {

using ad::Var;

/// Global appearance descriptor: row 0 of the token matrix at `layer`.
/// Returned as a [D] vector (still attached to the tape).
Var extract_cls(const vit::LayerFeatures& features, Index layer);

/// Pairwise cosine similarity of key rows: [(n+1),(n+1)], symmetric,
/// unit diagonal. Throws NumericError naming the row if a key row has
/// zero norm.
Var self_similarity(const Var& keys);
Tensor self_similarity(const Tensor& keys);

/// Average-pools the raster-ordered spatial key grid with a w-sized window,
/// then takes the cosine self-similarity of the pooled keys: [d^2, d^2]
/// with d = sqrt(n)/w. Spatial keys only; no global-token row.
Var coarse_self_similarity(const Var& spatial_keys, Index window);
Tensor coarse_self_similarity(const Tensor& spatial_keys, Index window);

/// Leading principal-component scores of the (row-centered) self-similarity,
/// one min-max-normalized grid map per component: [k, g, g]. Components are
/// sign-fixed so the maximum-magnitude loading is positive.
Tensor pca_component_maps(const Tensor& selfsim, Index components);

}  // namespace splice::features
