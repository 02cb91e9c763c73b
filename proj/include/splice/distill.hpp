#pragma once

#include <string>
#include <utility>
#include <vector>

#include "splice/image.hpp"
#include "splice/vit.hpp"

namespace splice::distill {

enum class Metric { Cosine, Frobenius };
Metric parse_metric(const std::string& name);
std::string metric_name(Metric m);

/// Exact brute-force index over flattened coarse self-similarity descriptors.
struct DescriptorIndex {
  std::vector<std::string> ids;  // sorted-insert order = input order
  Tensor descriptors;            // [N, d^4] rows aligned with ids
  Metric metric = Metric::Cosine;
  Index window = 4;
  std::vector<std::string> skipped;  // unreadable inputs, kept for provenance

  Index size() const { return static_cast<Index>(ids.size()); }
  Index find(const std::string& id) const;  // ConfigError on unknown id
  std::uint64_t dataset_hash() const;

  void save(const std::string& tensor_path,
            const std::string& manifest_path) const;
  static DescriptorIndex load(const std::string& tensor_path,
                              const std::string& manifest_path);
};

/// One coarse descriptor: square-resize, extract deepest-layer spatial keys,
/// pool with `window`, flatten the cosine self-similarity.
Tensor coarse_descriptor(const vit::VitModel& vit, const Image& image,
                         Index window, Index vit_resize = 224);

DescriptorIndex compute_descriptors(
    const vit::VitModel& vit,
    const std::vector<std::pair<std::string, Image>>& images, Index window,
    Index vit_resize = 224, Metric metric = Metric::Cosine);

/// K nearest neighbors of `query` (position), most-similar first, query
/// excluded, ties broken by ascending id. Requires K < index size.
std::vector<Index> knn(const DescriptorIndex& index, Index query, Index k);
std::vector<std::string> knn(const DescriptorIndex& index,
                             const std::string& query_id, Index k);

struct PairSet {
  // Every mutual pair in both orders; no self-pairs.
  std::vector<std::pair<std::string, std::string>> pairs;
  Index k = 0;
  Index window = 0;
  Metric metric = Metric::Cosine;
  std::uint64_t dataset_hash = 0;

  void save(const std::string& pair_path, const std::string& meta_path) const;
  static PairSet load(const std::string& pair_path,
                      const std::string& meta_path);
};

PairSet mutual_knn_pairs(const DescriptorIndex& index, Index k);

}  // namespace splice::distill
