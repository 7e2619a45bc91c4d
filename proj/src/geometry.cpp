#include "laflow/geometry.hpp"

#include <algorithm>
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace laflow {

PointCloud crop_workspace(const PointCloud& cloud, const Box& box) {
  if (!((box.min.array() < box.max.array()).all())) throw std::invalid_argument("crop_workspace: box min must be < max");
  std::vector<Index> keep;
  for (Index i = 0; i < cloud.rows(); ++i) {
    const Eigen::Vector3d p = cloud.row(i).transpose();
    if ((p.array() >= box.min.array()).all() && (p.array() <= box.max.array()).all()) keep.push_back(i);
  }
  if (keep.empty()) throw std::runtime_error("crop_workspace: no points inside the workspace");
  return select_points(cloud, keep);
}

std::vector<Index> fps(const PointCloud& cloud, Index k, Index start) {
  const Index n = cloud.rows();
  if (k < 1 || k > n) throw std::invalid_argument("fps: need 1 <= k <= N");
  if (start < 0 || start >= n) throw std::out_of_range("fps: start index outside cloud");
  std::vector<Index> chosen{start};
  chosen.reserve(static_cast<std::size_t>(k));
  Eigen::VectorXd nearest = (cloud.rowwise() - cloud.row(start)).rowwise().squaredNorm();
  nearest(start) = -1.0;
  while (static_cast<Index>(chosen.size()) < k) {
    Index best = -1;
    for (Index i = 0; i < n; ++i) {
      if (nearest(i) < 0.0) continue;
      if (best < 0 || nearest(i) > nearest(best)) best = i;
    }
    chosen.push_back(best);
    nearest(best) = -1.0;
    for (Index i = 0; i < n; ++i) {
      if (nearest(i) < 0.0) continue;
      nearest(i) = std::min(nearest(i), (cloud.row(i) - cloud.row(best)).squaredNorm());
    }
  }
  return chosen;
}

PointCloud select_points(const PointCloud& cloud, const std::vector<Index>& idx) {
  PointCloud out(static_cast<Index>(idx.size()), 3);
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Index>(i)) = cloud.row(idx[i]);
  return out;
}

Neighborhoods group_neighborhoods(const PointCloud& cloud, const PointCloud& centers, Index m) {
  const Index n = cloud.rows();
  if (m < 1 || m > n) throw std::invalid_argument("group_neighborhoods: need 1 <= m <= N");
  Neighborhoods out;
  out.centers = centers;
  out.neighbors = m;
  out.offsets.resize(centers.rows() * m, 3);
  std::vector<std::pair<double, Index>> dist(static_cast<std::size_t>(n));
  for (Index c = 0; c < centers.rows(); ++c) {
    for (Index i = 0; i < n; ++i) dist[static_cast<std::size_t>(i)] = {(cloud.row(i) - centers.row(c)).squaredNorm(), i};
    std::partial_sort(dist.begin(), dist.begin() + m, dist.end());
    for (Index j = 0; j < m; ++j)
      out.offsets.row(c * m + j) = cloud.row(dist[static_cast<std::size_t>(j)].second) - centers.row(c);
  }
  return out;
}

Neighborhoods preprocess_cloud(const PointCloud& raw, const Box& workspace, const GeometryConfig& cfg) {
  PointCloud cropped = crop_workspace(raw, workspace);
  PointCloud cloud = cropped;
  if (cropped.rows() > cfg.cloud_points) cloud = select_points(cropped, fps(cropped, cfg.cloud_points, cfg.fps_start));
  const Index k = std::min(cfg.centers, cloud.rows());
  PointCloud centers = select_points(cloud, fps(cloud, k, cfg.fps_start));
  Neighborhoods nb = group_neighborhoods(cloud, centers, std::min(cfg.neighbors, cloud.rows()));
  if (k < cfg.centers || nb.neighbors < cfg.neighbors)
    throw std::runtime_error("preprocess_cloud: cloud has fewer points than centers/neighbors");
  return nb;
}

// ---------------------------------------------------------------------------

LocalEncoder::LocalEncoder(const std::string& name, Index width, Rng& rng)
    : lift_(name + ".lift", 3, width, rng),
      block1_(name + ".block1", width, width, rng),
      block2_(name + ".block2", width, width, rng) {}

Var LocalEncoder::operator()(Tape& tape, const Var& offsets, Index centers, Index neighbors) {
  Var h = silu(lift_(tape, offsets));
  h = h + silu(block1_(tape, h));
  h = h + silu(block2_(tape, h));
  Var pooled = concat_cols<double>({group_max_rows(h, neighbors), group_mean_rows(h, neighbors)});
  return group_mean_rows(pooled, centers);
}

void LocalEncoder::collect(ParamList& out) {
  lift_.collect(out);
  block1_.collect(out);
  block2_.collect(out);
}

CenterEncoder::CenterEncoder(const std::string& name, Index width, Rng& rng)
    : in_(name + ".in", 3, width, rng), out_(name + ".out", width, width, rng) {}

Var CenterEncoder::operator()(Tape& tape, const Var& centers, Index k) {
  return group_mean_rows(out_(tape, silu(in_(tape, centers))), k);
}

void CenterEncoder::collect(ParamList& out) {
  in_.collect(out);
  out_.collect(out);
}

Var film_hierarchical(const Var& h, const FilmLayer& local, const FilmLayer& center) {
  return film(film(h, local.gamma, local.beta), center.gamma, center.beta);
}

// ---------------------------------------------------------------------------

SceneEncoder::SceneEncoder(const GeometryConfig& cfg, std::vector<Index> modulated_widths, Rng& rng)
    : cfg_(cfg),
      local_("scene.local", cfg.local_width, rng),
      center_("scene.center", cfg.center_width, rng),
      local_film_("scene.local_film", 2 * cfg.local_width, cfg.film_hidden, modulated_widths, rng),
      center_film_("scene.center_film", cfg.center_width, cfg.film_hidden, modulated_widths, rng) {}

Var SceneEncoder::encode_local(Tape& tape, const std::vector<const Neighborhoods*>& scenes) {
  const Index k = cfg_.centers, m = cfg_.neighbors;
  Matrix offsets(static_cast<Index>(scenes.size()) * k * m, 3);
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    if (scenes[s]->offsets.rows() != k * m) throw std::invalid_argument("SceneEncoder: neighborhood size mismatch");
    offsets.middleRows(static_cast<Index>(s) * k * m, k * m) = scenes[s]->offsets;
  }
  return local_(tape, tape.constant(std::move(offsets)), k, m);
}

Var SceneEncoder::encode_center(Tape& tape, const std::vector<const Neighborhoods*>& scenes) {
  const Index k = cfg_.centers;
  Matrix centers(static_cast<Index>(scenes.size()) * k, 3);
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    if (scenes[s]->centers.rows() != k) throw std::invalid_argument("SceneEncoder: center count mismatch");
    centers.middleRows(static_cast<Index>(s) * k, k) = scenes[s]->centers;
  }
  return center_(tape, tape.constant(std::move(centers)), k);
}

SceneFilm SceneEncoder::operator()(Tape& tape, const std::vector<const Neighborhoods*>& scenes) {
  if (scenes.empty()) throw std::invalid_argument("SceneEncoder: no scenes");
  SceneFilm out;
  out.local = local_film_(tape, encode_local(tape, scenes));
  out.center = center_film_(tape, encode_center(tape, scenes));
  return out;
}

SceneFilm SceneEncoder::gather(const SceneFilm& film, const std::vector<Index>& index) {
  SceneFilm out;
  for (const auto& l : film.local) out.local.push_back({gather_rows(l.gamma, index), gather_rows(l.beta, index)});
  for (const auto& c : film.center) out.center.push_back({gather_rows(c.gamma, index), gather_rows(c.beta, index)});
  return out;
}

void SceneEncoder::collect(ParamList& out) {
  local_.collect(out);
  center_.collect(out);
  local_film_.collect(out);
  center_film_.collect(out);
}

// ---------------------------------------------------------------------------

void write_point_cloud(std::ostream& os, const PointCloud& cloud) {
  os << cloud.rows() << '\n';
  os << std::setprecision(17);
  for (Index i = 0; i < cloud.rows(); ++i) os << cloud(i, 0) << ',' << cloud(i, 1) << ',' << cloud(i, 2) << '\n';
}

PointCloud read_point_cloud(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("point cloud: missing count line");
  const long long n = std::stoll(line);
  if (n < 0) throw std::runtime_error("point cloud: negative count");
  PointCloud cloud(static_cast<Index>(n), 3);
  for (Index i = 0; i < cloud.rows(); ++i) {
    if (!std::getline(is, line)) throw std::runtime_error("point cloud: truncated record");
    std::istringstream ls(line);
    std::string field;
    for (int d = 0; d < 3; ++d) {
      if (!std::getline(ls, field, ',')) throw std::runtime_error("point cloud: malformed line " + line);
      cloud(i, d) = std::stod(field);
    }
  }
  return cloud;
}

}  // namespace laflow
