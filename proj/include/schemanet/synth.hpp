#pragma once

#include <cstdint>
#include <vector>

#include "schemanet/records.hpp"
#include "schemanet/tensor.hpp"

namespace schemanet {

/// Parameters of a generated world. Empty `pkg` / `prototypes` are drawn
/// from the seed.
struct SynthWorldSpec {
  std::size_t num_object_classes = 20;
  std::size_t num_predicate_classes = 10;
  std::size_t dim = 64;
  /// Row (head * C_o + tail) is P(predicate | head, tail).
  std::vector<std::vector<double>> pkg;
  /// Probability of each pair's majority predicate when `pkg` is drawn.
  double majority_mass = 0.9;
  Tensor<float> prototypes;  // C_o x dim
  double prototype_scale = 0.125;
  /// Classes g*k .. g*k+g-1 share one drawn prototype.
  std::size_t prototype_group = 1;
  double feature_sigma = 0.375;
  double occlusion_rate = 0.3;
  /// With scene types, each scene draws a type and each object comes from
  /// that type's class subset with probability `type_mass`, otherwise
  /// uniformly. 0 types gives i.i.d. uniform classes.
  std::size_t scene_types = 10;
  std::size_t classes_per_type = 2;
  double type_mass = 1.0;
  /// Predicates 2k and 2k+1 share a geometry template when 2.
  std::size_t geometry_group = 2;
  double geometry_noise = 0.1;
  std::size_t train_scenes = 2000;
  std::size_t test_scenes = 500;
  std::size_t min_objects = 4;
  std::size_t max_objects = 8;
  std::uint64_t seed = 0;
};

struct SynthWorld {
  Vocabulary vocab;
  std::vector<SceneRecord> train;
  std::vector<SceneRecord> test;
  std::vector<KbTriple> kb;  // aggregated over `train`
  std::vector<std::vector<double>> pkg;
  Tensor<float> prototypes;
};

/// Objects per scene draw classes (see scene_types) and are linked by a random spanning tree
/// with random orientation; each link's predicate is drawn from the PKG row
/// of its (head, tail) classes and the boxes follow per-predicate geometry.
/// Features are prototype + N(0, sigma^2), or pure noise for occluded
/// objects. Throws std::invalid_argument on a degenerate spec.
SynthWorld synth_generate(const SynthWorldSpec& spec);

/// Majority predicate of each PKG row, lowest index on ties.
std::vector<std::size_t> pkg_majority(const std::vector<std::vector<double>>& pkg);

}  // namespace schemanet
