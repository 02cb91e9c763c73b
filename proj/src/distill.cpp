#include "splice/distill.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "splice/augment.hpp"
#include "splice/descriptors.hpp"
#include "splice/errors.hpp"
#include "splice/serialize.hpp"

namespace splice::distill {

using nlohmann::json;

Metric parse_metric(const std::string& name) {
  if (name == "cosine") return Metric::Cosine;
  if (name == "frobenius") return Metric::Frobenius;
  throw ConfigError("unknown descriptor metric '" + name +
                    "' (expected cosine or frobenius)");
}

std::string metric_name(Metric m) {
  return m == Metric::Cosine ? "cosine" : "frobenius";
}

Index DescriptorIndex::find(const std::string& id) const {
  auto it = std::find(ids.begin(), ids.end(), id);
  if (it == ids.end())
    throw ConfigError("descriptor index: unknown id '" + id + "'");
  return static_cast<Index>(it - ids.begin());
}

std::uint64_t DescriptorIndex::dataset_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& id : ids) h = bytes_checksum(id.data(), id.size(), h);
  h = bytes_checksum(descriptors.data(),
                     descriptors.size() * sizeof(Scalar), h);
  return h;
}

void DescriptorIndex::save(const std::string& tensor_path,
                           const std::string& manifest_path) const {
  TensorArchive a;
  a.put("descriptors", descriptors);
  a.save(tensor_path);
  json m;
  m["ids"] = ids;
  m["metric"] = metric_name(metric);
  m["window"] = window;
  m["skipped"] = skipped;
  m["dataset_hash"] = dataset_hash();
  std::ofstream f(manifest_path);
  if (!f) throw IoError("cannot write index manifest: " + manifest_path);
  f << m.dump(2) << '\n';
}

DescriptorIndex DescriptorIndex::load(const std::string& tensor_path,
                                      const std::string& manifest_path) {
  std::ifstream f(manifest_path);
  if (!f) throw IoError("cannot read index manifest: " + manifest_path);
  json m;
  try {
    f >> m;
  } catch (const json::exception& e) {
    throw IoError("malformed index manifest " + manifest_path + ": " +
                  e.what());
  }
  DescriptorIndex idx;
  idx.ids = m.at("ids").get<std::vector<std::string>>();
  idx.metric = parse_metric(m.at("metric").get<std::string>());
  idx.window = m.at("window").get<Index>();
  if (m.contains("skipped"))
    idx.skipped = m.at("skipped").get<std::vector<std::string>>();
  idx.descriptors = TensorArchive::load(tensor_path).get("descriptors");
  if (idx.descriptors.dim(0) != static_cast<Index>(idx.ids.size()))
    throw IoError("descriptor index: id/descriptor count mismatch");
  return idx;
}

Tensor coarse_descriptor(const vit::VitModel& vit, const Image& image,
                         Index window, Index vit_resize) {
  const Index patch = vit.config().patch_size;
  const Index side = std::max<Index>(1, vit_resize / patch) * patch;
  // Square resize: the pooled key grid must be square for the descriptor.
  Image sq{train::resize_bicubic(image.t, side, side)};
  const Index L = vit.deepest_layer();
  auto feats = vit.forward_features(sq.t, {L});
  const ad::Var& keys = feats.keys_at(L);
  const Index n = keys->value.mat().rows() - 1;
  const Index d = keys->value.mat().cols();
  Tensor spatial(Shape{n, d});
  spatial.mat() = keys->value.mat().block(1, 0, n, d);
  Tensor coarse = features::coarse_self_similarity(spatial, window);
  return coarse.reshaped({coarse.size()});
}

DescriptorIndex compute_descriptors(
    const vit::VitModel& vit,
    const std::vector<std::pair<std::string, Image>>& images, Index window,
    Index vit_resize, Metric metric) {
  if (images.empty()) throw ConfigError("compute_descriptors: no images");
  DescriptorIndex idx;
  idx.metric = metric;
  idx.window = window;
  std::vector<Tensor> rows;
  for (const auto& [id, img] : images) {
    rows.push_back(coarse_descriptor(vit, img, window, vit_resize));
    idx.ids.push_back(id);
  }
  const Index len = rows.front().size();
  idx.descriptors = Tensor({static_cast<Index>(rows.size()), len});
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != len)
      throw ConfigError("compute_descriptors: inconsistent descriptor length");
    idx.descriptors.mat().row(static_cast<Index>(i)) = rows[i].vec();
  }
  return idx;
}

namespace {
// Higher is more similar, for either metric.
Scalar similarity(const DescriptorIndex& idx, Index a, Index b) {
  auto m = idx.descriptors.mat();
  if (idx.metric == Metric::Cosine) {
    const Scalar na = m.row(a).norm(), nb = m.row(b).norm();
    if (na < 1e-12f || nb < 1e-12f)
      throw NumericError("descriptor index: zero-norm descriptor");
    return m.row(a).dot(m.row(b)) / (na * nb);
  }
  return -(m.row(a) - m.row(b)).norm();
}
}  // namespace

std::vector<Index> knn(const DescriptorIndex& index, Index query, Index k) {
  const Index n = index.size();
  if (query < 0 || query >= n)
    throw ConfigError("knn: query position out of range");
  if (k < 1 || k >= n)
    throw ConfigError("knn: K must satisfy 1 <= K < collection size (" +
                      std::to_string(n) + ")");
  std::vector<std::pair<Scalar, Index>> scored;
  for (Index i = 0; i < n; ++i)
    if (i != query) scored.emplace_back(similarity(index, query, i), i);
  std::sort(scored.begin(), scored.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return index.ids[a.second] < index.ids[b.second];
  });
  std::vector<Index> out;
  for (Index i = 0; i < k; ++i) out.push_back(scored[i].second);
  return out;
}

std::vector<std::string> knn(const DescriptorIndex& index,
                             const std::string& query_id, Index k) {
  std::vector<std::string> out;
  for (Index i : knn(index, index.find(query_id), k))
    out.push_back(index.ids[i]);
  return out;
}

PairSet mutual_knn_pairs(const DescriptorIndex& index, Index k) {
  const Index n = index.size();
  std::vector<std::vector<bool>> in_knn(n, std::vector<bool>(n, false));
  for (Index q = 0; q < n; ++q)
    for (Index j : knn(index, q, k)) in_knn[q][j] = true;
  PairSet ps;
  ps.k = k;
  ps.window = index.window;
  ps.metric = index.metric;
  ps.dataset_hash = index.dataset_hash();
  for (Index a = 0; a < n; ++a)
    for (Index b = a + 1; b < n; ++b)
      if (in_knn[a][b] && in_knn[b][a]) {
        ps.pairs.emplace_back(index.ids[a], index.ids[b]);
        ps.pairs.emplace_back(index.ids[b], index.ids[a]);
      }
  return ps;
}

void PairSet::save(const std::string& pair_path,
                   const std::string& meta_path) const {
  std::ofstream f(pair_path);
  if (!f) throw IoError("cannot write pair file: " + pair_path);
  for (const auto& [s, a] : pairs) f << s << '\t' << a << '\n';
  json m;
  m["K"] = k;
  m["window"] = window;
  m["metric"] = metric_name(metric);
  m["dataset_hash"] = dataset_hash;
  std::ofstream mf(meta_path);
  if (!mf) throw IoError("cannot write pair metadata: " + meta_path);
  mf << m.dump(2) << '\n';
}

PairSet PairSet::load(const std::string& pair_path,
                      const std::string& meta_path) {
  PairSet ps;
  std::ifstream f(pair_path);
  if (!f) throw IoError("cannot read pair file: " + pair_path);
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size())
      throw IoError("malformed pair file " + pair_path + " at line " +
                    std::to_string(lineno) +
                    ": expected structure_id<TAB>appearance_id");
    ps.pairs.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  if (!meta_path.empty()) {
    std::ifstream mf(meta_path);
    if (!mf) throw IoError("cannot read pair metadata: " + meta_path);
    json m;
    try {
      mf >> m;
    } catch (const json::exception& e) {
      throw IoError("malformed pair metadata " + meta_path + ": " + e.what());
    }
    ps.k = m.at("K").get<Index>();
    ps.window = m.at("window").get<Index>();
    ps.metric = parse_metric(m.at("metric").get<std::string>());
    ps.dataset_hash = m.at("dataset_hash").get<std::uint64_t>();
  }
  return ps;
}

}  // namespace splice::distill
