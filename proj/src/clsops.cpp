#include "splice/clsops.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include <json.hpp>

#include "splice/errors.hpp"
#include "splice/serialize.hpp"

namespace splice::clsops {

using nlohmann::json;

std::vector<Tensor> interpolate_cls(const Tensor& cls_structure,
                                    const Tensor& cls_target,
                                    const std::vector<Scalar>& alphas) {
  if (!cls_structure.same_shape(cls_target))
    throw ConfigError("interpolate_cls: token shape mismatch " +
                      cls_structure.shape_str() + " vs " +
                      cls_target.shape_str());
  std::vector<Tensor> out;
  for (Scalar a : alphas) {
    if (!std::isfinite(a))
      throw ConfigError("interpolate_cls: non-finite alpha");
    Tensor t(cls_structure.shape());
    t.array() = a * cls_target.array() + (1 - a) * cls_structure.array();
    out.push_back(std::move(t));
  }
  return out;
}

ModeSet kmeans_modes(const Tensor& tokens, Index k, std::uint64_t seed,
                     Index max_iters, Scalar tol) {
  auto x = tokens.mat();
  const Index n = x.rows(), d = x.cols();
  if (k < 1 || k > n)
    throw ConfigError("kmeans: K must satisfy 1 <= K <= N (K=" +
                      std::to_string(k) + ", N=" + std::to_string(n) + ")");

  std::mt19937_64 eng(seed);
  MatrixRM c(k, d);

  // k-means++ seeding: next center drawn proportional to squared distance
  // to the closest chosen center.
  VectorX d2 = VectorX::Constant(n, std::numeric_limits<Scalar>::max());
  c.row(0) = x.row(static_cast<Index>(
      std::uniform_int_distribution<Index>(0, n - 1)(eng)));
  for (Index j = 1; j < k; ++j) {
    for (Index i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], (x.row(i) - c.row(j - 1)).squaredNorm());
    const double total = d2.sum();
    Index pick = 0;
    if (total > 0) {
      double r = std::uniform_real_distribution<double>(0, total)(eng);
      for (; pick < n - 1; ++pick) {
        r -= d2[pick];
        if (r <= 0) break;
      }
    }
    c.row(j) = x.row(pick);
  }

  std::vector<Index> assign(n, 0);
  Scalar inertia = 0;
  for (Index iter = 0; iter < max_iters; ++iter) {
    inertia = 0;
    for (Index i = 0; i < n; ++i) {
      Scalar best = std::numeric_limits<Scalar>::max();
      for (Index j = 0; j < k; ++j) {
        const Scalar dist = (x.row(i) - c.row(j)).squaredNorm();
        if (dist < best) {
          best = dist;
          assign[i] = j;
        }
      }
      inertia += best;
    }

    MatrixRM sums = MatrixRM::Zero(k, d);
    std::vector<Index> counts(k, 0);
    for (Index i = 0; i < n; ++i) {
      sums.row(assign[i]) += x.row(i);
      ++counts[assign[i]];
    }
    Scalar shift = 0;
    for (Index j = 0; j < k; ++j) {
      if (counts[j] == 0) continue;  // empty cluster keeps its old center
      const auto mean = sums.row(j) / static_cast<Scalar>(counts[j]);
      shift = std::max(shift, (mean - c.row(j)).norm());
      c.row(j) = mean;
    }
    if (shift < tol) break;
  }
  // Final assignment/inertia against the converged centers.
  inertia = 0;
  for (Index i = 0; i < n; ++i) {
    Scalar best = std::numeric_limits<Scalar>::max();
    for (Index j = 0; j < k; ++j) {
      const Scalar dist = (x.row(i) - c.row(j)).squaredNorm();
      if (dist < best) {
        best = dist;
        assign[i] = j;
      }
    }
    inertia += best;
  }

  ModeSet m;
  m.centroids = Tensor::from_matrix(c);
  m.assignments = std::move(assign);
  m.inertia = inertia;
  m.seed = seed;
  return m;
}

void ModeSet::save(const std::string& tensor_path,
                   const std::string& manifest_path) const {
  TensorArchive a;
  a.put("centroids", centroids);
  a.save(tensor_path);
  json j;
  j["assignments"] = assignments;
  j["inertia"] = inertia;
  j["seed"] = seed;
  std::ofstream f(manifest_path);
  if (!f) throw IoError("cannot write mode manifest: " + manifest_path);
  f << j.dump(2) << '\n';
}

ModeSet ModeSet::load(const std::string& tensor_path,
                      const std::string& manifest_path) {
  ModeSet m;
  m.centroids = TensorArchive::load(tensor_path).get("centroids");
  std::ifstream f(manifest_path);
  if (!f) throw IoError("cannot read mode manifest: " + manifest_path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw IoError("malformed mode manifest " + manifest_path + ": " +
                  e.what());
  }
  m.assignments = j.at("assignments").get<std::vector<Index>>();
  m.inertia = j.at("inertia").get<Scalar>();
  m.seed = j.at("seed").get<std::uint64_t>();
  return m;
}

}  // namespace splice::clsops
