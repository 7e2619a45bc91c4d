#pragma once
// Point-cloud scene conditioning: workspace crop, farthest point sampling,
// k-NN neighborhoods, a translation-invariant local branch, a layout-aware
// center branch, and the two-stage FiLM that injects both into a network.

#include <iosfwd>
#include <vector>

#include "laflow/layers.hpp"
#include "laflow/rng.hpp"
#include "laflow/tape.hpp"

namespace laflow {

using PointCloud = Eigen::Matrix<double, Eigen::Dynamic, 3>;

struct Box {
  Eigen::Vector3d min;
  Eigen::Vector3d max;
};

// Points inside the closed box, in their original order. Throws when the box
// is inverted or nothing survives.
PointCloud crop_workspace(const PointCloud& cloud, const Box& box);

// Greedy max-min selection starting at `start`; ties go to the lowest index.
std::vector<Index> fps(const PointCloud& cloud, Index k, Index start = 0);

PointCloud select_points(const PointCloud& cloud, const std::vector<Index>& idx);

struct Neighborhoods {
  Eigen::Matrix<double, Eigen::Dynamic, 3> centers;  // k x 3
  Eigen::Matrix<double, Eigen::Dynamic, 3> offsets;  // (k * m) x 3, grouped by center
  Index neighbors = 0;
};

// m nearest points (ties by index) around each center, as point - center.
Neighborhoods group_neighborhoods(const PointCloud& cloud, const PointCloud& centers, Index m);

struct GeometryConfig {
  Index cloud_points = 512;  // after FPS downsampling of the rendered cloud
  Index centers = 16;
  Index neighbors = 16;
  Index local_width = 32;   // f_l has 2 * local_width entries (max | mean)
  Index center_width = 32;  // f_c
  Index film_hidden = 64;
  Index fps_start = 0;
};

// Crop -> FPS to cloud_points -> FPS centers -> k-NN neighborhoods.
Neighborhoods preprocess_cloud(const PointCloud& raw, const Box& workspace, const GeometryConfig& cfg);

// Shared per-point MLP with residual blocks, max|mean pooled per neighborhood,
// then averaged over neighborhoods.
class LocalEncoder {
 public:
  LocalEncoder() = default;
  LocalEncoder(const std::string& name, Index width, Rng& rng);

  // offsets: (B * k * m) x 3 -> B x (2 * width)
  Var operator()(Tape& tape, const Var& offsets, Index centers, Index neighbors);
  void collect(ParamList& out);
  Index output_dim() const { return 2 * lift_.out_features(); }

 private:
  Linear lift_;
  Linear block1_;
  Linear block2_;
};

// Per-center MLP then mean over centers.
class CenterEncoder {
 public:
  CenterEncoder() = default;
  CenterEncoder(const std::string& name, Index width, Rng& rng);

  // centers: (B * k) x 3 -> B x width
  Var operator()(Tape& tape, const Var& centers, Index k);
  void collect(ParamList& out);
  Index output_dim() const { return out_.out_features(); }

  Linear& first() { return in_; }
  Linear& second() { return out_; }

 private:
  Linear in_;
  Linear out_;
};

// gamma_c * (gamma_l * h + beta_l) + beta_c: local first, then center.
Var film_hierarchical(const Var& h, const FilmLayer& local, const FilmLayer& center);

struct SceneFilm {
  std::vector<FilmLayer> local;
  std::vector<FilmLayer> center;
};

// Both point branches plus the two FiLM generators for a network whose hidden
// layer widths are `modulated_widths`.
class SceneEncoder {
 public:
  SceneEncoder() = default;
  SceneEncoder(const GeometryConfig& cfg, std::vector<Index> modulated_widths, Rng& rng);

  // Encodes a batch of preprocessed scenes to per-scene FiLM parameters.
  SceneFilm operator()(Tape& tape, const std::vector<const Neighborhoods*>& scenes);

  // Rows of `film` gathered by `index` (scene id per sample).
  static SceneFilm gather(const SceneFilm& film, const std::vector<Index>& index);

  Var encode_local(Tape& tape, const std::vector<const Neighborhoods*>& scenes);
  Var encode_center(Tape& tape, const std::vector<const Neighborhoods*>& scenes);

  void collect(ParamList& out);
  const GeometryConfig& config() const { return cfg_; }

  LocalEncoder& local() { return local_; }
  CenterEncoder& center() { return center_; }
  FilmGenerator& local_film() { return local_film_; }
  FilmGenerator& center_film() { return center_film_; }

 private:
  GeometryConfig cfg_;
  LocalEncoder local_;
  CenterEncoder center_;
  FilmGenerator local_film_;
  FilmGenerator center_film_;
};

// Text record: N on the first line, then N lines "x,y,z".
void write_point_cloud(std::ostream& os, const PointCloud& cloud);
PointCloud read_point_cloud(std::istream& is);

}  // namespace laflow
