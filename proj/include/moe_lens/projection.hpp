#pragma once

// PCA projection and DBSCAN outlier removal for expert weight vectors.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/SVD>

#include "moe_lens/error.hpp"
#include "moe_lens/linalg.hpp"

namespace moe_lens {

struct PcaResult {
  Matrix coords;                    // [n_samples, dims]
  Matrix components;                // [dims, kept features], unit rows
  Vector explained_variance;        // per component, non-increasing
  Vector mean;                      // per kept feature, in (standardized) input space
  std::vector<std::size_t> kept;    // indices of the input features used

  /// Maps coords back into the centered (and standardized, if requested) feature space.
  Matrix reconstruct_centered() const {
    Matrix out(coords.rows(), components.cols(), 0.0);
    for (std::size_t s = 0; s < coords.rows(); ++s)
      for (std::size_t k = 0; k < components.rows(); ++k)
        for (std::size_t f = 0; f < components.cols(); ++f) out(s, f) += coords(s, k) * components(k, f);
    return out;
  }
};

/// Exact PCA through a thin SVD of the centered sample matrix. With
/// standardize, features are scaled to zero mean and unit (population)
/// variance first and constant features are dropped. Explained variance uses
/// the n-1 denominator. Each component is signed so its largest-magnitude
/// entry is positive.
inline PcaResult pca_project(const std::vector<Vector>& samples, std::size_t dims, bool standardize) {
  if (dims != 2 && dims != 3) throw Error("pca: dims must be 2 or 3");
  if (samples.size() < dims + 1)
    throw Error("pca: need at least " + std::to_string(dims + 1) + " samples, got " +
                std::to_string(samples.size()));
  const std::size_t n = samples.size();
  const std::size_t d = samples.front().size();
  for (const auto& s : samples)
    if (s.size() != d) throw Error("pca: samples have different lengths");

  PcaResult res;
  Vector mean(d, 0.0), scale(d, 1.0);
  for (const auto& s : samples)
    for (std::size_t f = 0; f < d; ++f) mean[f] += s[f];
  for (double& m : mean) m /= static_cast<double>(n);
  for (std::size_t f = 0; f < d; ++f) {
    if (!standardize) {
      res.kept.push_back(f);
      continue;
    }
    double var = 0.0;
    for (const auto& s : samples) var += (s[f] - mean[f]) * (s[f] - mean[f]);
    var /= static_cast<double>(n);
    if (var > 0.0) {
      scale[f] = std::sqrt(var);
      res.kept.push_back(f);
    }
  }
  if (res.kept.empty()) throw Error("pca: every feature is constant");

  const std::size_t k = res.kept.size();
  Eigen::MatrixXd x(n, k);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t f = res.kept[j];
      x(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(j)) = (samples[s][f] - mean[f]) / scale[f];
    }
  for (std::size_t j = 0; j < k; ++j) res.mean.push_back(standardize ? 0.0 : mean[res.kept[j]]);

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const Eigen::MatrixXd& v = svd.matrixV();

  res.coords = Matrix(n, dims, 0.0);
  res.components = Matrix(dims, k, 0.0);
  for (std::size_t c = 0; c < dims; ++c) {
    if (static_cast<Eigen::Index>(c) >= sv.size()) {
      res.explained_variance.push_back(0.0);
      continue;
    }
    const auto ci = static_cast<Eigen::Index>(c);
    Eigen::Index arg = 0;
    v.col(ci).cwiseAbs().maxCoeff(&arg);
    const double sign = v(arg, ci) < 0.0 ? -1.0 : 1.0;
    for (std::size_t j = 0; j < k; ++j) res.components(c, j) = sign * v(static_cast<Eigen::Index>(j), ci);
    const Eigen::VectorXd proj = x * v.col(ci) * sign;
    for (std::size_t s = 0; s < n; ++s) res.coords(s, c) = proj(static_cast<Eigen::Index>(s));
    res.explained_variance.push_back(sv(ci) * sv(ci) / static_cast<double>(n - 1));
  }
  return res;
}

struct DbscanResult {
  std::vector<int> cluster;             // -1 marks noise
  std::vector<std::size_t> outliers;    // indices of noise points
};

/// Density clustering with Euclidean distance. The neighborhood of a point
/// includes the point itself and every point at distance <= eps; points with
/// at least min_pts neighbors are core points.
inline DbscanResult dbscan(const std::vector<Vector>& points, double eps, std::size_t min_pts) {
  if (!(eps > 0.0)) throw Error("dbscan: eps must be positive");
  if (min_pts < 1) throw Error("dbscan: min_pts must be at least 1");
  const std::size_t n = points.size();
  auto neighbors = [&](std::size_t i) {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < n; ++j) {
      double d2 = 0.0;
      for (std::size_t c = 0; c < points[i].size(); ++c) {
        const double diff = points[i][c] - points[j][c];
        d2 += diff * diff;
      }
      if (std::sqrt(d2) <= eps) out.push_back(j);
    }
    return out;
  };

  constexpr int kUnvisited = -2, kNoise = -1;
  DbscanResult res;
  res.cluster.assign(n, kUnvisited);
  int next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (res.cluster[i] != kUnvisited) continue;
    auto seeds = neighbors(i);
    if (seeds.size() < min_pts) {
      res.cluster[i] = kNoise;
      continue;
    }
    const int id = next++;
    res.cluster[i] = id;
    for (std::size_t q = 0; q < seeds.size(); ++q) {
      const std::size_t p = seeds[q];
      if (res.cluster[p] == kNoise) res.cluster[p] = id;  // border point
      if (res.cluster[p] != kUnvisited) continue;
      res.cluster[p] = id;
      auto more = neighbors(p);
      if (more.size() >= min_pts) seeds.insert(seeds.end(), more.begin(), more.end());
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    if (res.cluster[i] == kNoise) res.outliers.push_back(i);
  return res;
}

/// Labeled projection with DBSCAN outliers removed from `points`.
struct Projection {
  std::vector<std::string> labels;      // retained points
  std::vector<Vector> points;           // coordinates of retained points
  Vector explained_variance;
  std::vector<std::string> outliers;
};

/// Standardize (optionally), project, then drop DBSCAN noise points.
inline Projection project_with_outliers(const std::vector<std::string>& labels,
                                        const std::vector<Vector>& vectors, std::size_t dims,
                                        bool standardize, std::optional<double> eps,
                                        std::size_t min_pts = 2) {
  if (labels.size() != vectors.size()) throw Error("projection: label count mismatch");
  const PcaResult pca = pca_project(vectors, dims, standardize);
  std::vector<Vector> coords;
  for (std::size_t s = 0; s < vectors.size(); ++s) {
    const auto r = pca.coords.row(s);
    coords.emplace_back(r.begin(), r.end());
  }
  std::vector<bool> drop(vectors.size(), false);
  if (eps)
    for (std::size_t i : dbscan(coords, *eps, min_pts).outliers) drop[i] = true;
  Projection p;
  p.explained_variance = pca.explained_variance;
  for (std::size_t s = 0; s < vectors.size(); ++s) {
    if (drop[s]) {
      p.outliers.push_back(labels[s]);
    } else {
      p.labels.push_back(labels[s]);
      p.points.push_back(coords[s]);
    }
  }
  return p;
}

}  // namespace moe_lens
