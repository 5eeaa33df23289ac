#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "schemanet/records.hpp"
#include "schemanet/tensor.hpp"

namespace schemanet {

/// Geometry of a head box relative to its tail box.
struct RelPositionVector {
  double tx = 0.0;
  double ty = 0.0;
  double tw = 0.0;
  double th = 0.0;

  std::array<double, 4> as_array() const { return {tx, ty, tw, th}; }
};

/// tx = (x_h - x_t) / w_t, ty = (y_h - y_t) / h_t, tw = log(w_h / w_t),
/// th = log(h_h / h_t). Throws std::invalid_argument on a nonpositive extent.
RelPositionVector rel_position_vector(const BoundingBox& head, const BoundingBox& tail);

/// Directed edges (src -> dst) over global node indices.
struct EdgeList {
  std::vector<std::size_t> dst;
  std::vector<std::size_t> src;

  std::size_t size() const { return dst.size(); }
};

/// Scene Representation Graph. Object nodes occupy global indices
/// [0, num_objects), predicate node r sits at num_objects + r. Edges run
/// head object -> predicate -> tail object, so a predicate's in-neighbor
/// is its head and its out-neighbor its tail.
///
/// A graph may hold several scenes (see merge_graphs); the offsets record
/// where each scene's objects and predicates start.
struct SceneRepGraph {
  std::size_t dim = 0;
  std::size_t num_objects = 0;
  std::size_t num_predicates = 0;
  Tensor<float> object_features;  // num_objects x dim; zero rows when absent
  std::vector<BoundingBox> boxes;
  std::vector<std::size_t> heads;  // per predicate, object index
  std::vector<std::size_t> tails;
  std::vector<RelPositionVector> rel_positions;
  std::vector<std::size_t> object_labels;  // empty when unlabeled
  std::vector<std::size_t> predicate_labels;
  EdgeList in_edges;   // dst receives from an in-neighbor
  EdgeList out_edges;  // dst receives from an out-neighbor
  std::vector<std::size_t> object_offsets{0};
  std::vector<std::size_t> predicate_offsets{0};

  std::size_t num_nodes() const { return num_objects + num_predicates; }
  std::size_t num_scenes() const { return object_offsets.size() - 1; }
  bool labeled() const {
    return object_labels.size() == num_objects && predicate_labels.size() == num_predicates;
  }
  /// Object labels followed by predicate labels.
  std::vector<std::size_t> node_labels() const;
  std::vector<std::size_t> in_neighbors(std::size_t node) const;
  std::vector<std::size_t> out_neighbors(std::size_t node) const;
  /// Rel-position vectors as a num_predicates x 4 matrix.
  template <typename T>
  Tensor<T> geometry() const;
};

/// Builds the graph structure for `num_objects` objects and the given
/// relations (parallel head/tail arrays). Rejects dangling indices and
/// head == tail.
SceneRepGraph make_graph(std::size_t dim, Tensor<float> object_features,
                         std::vector<BoundingBox> boxes, std::span<const std::size_t> heads,
                         std::span<const std::size_t> tails);

/// Graph for one annotated scene. Labels are resolved through `vocab`;
/// missing object features become zero vectors. Throws DataError on a
/// feature width mismatch, dangling relation index, self-relation or
/// unknown label.
SceneRepGraph build_srg(const SceneRecord& record, const Vocabulary& vocab, std::size_t dim);

/// Disjoint union, scenes kept in order.
SceneRepGraph merge_graphs(std::span<const SceneRepGraph* const> graphs);
SceneRepGraph merge_graphs(std::span<const SceneRepGraph> graphs);

}  // namespace schemanet
