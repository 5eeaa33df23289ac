#include "schemanet/srg.hpp"

#include <cmath>
#include <string>

namespace schemanet {

RelPositionVector rel_position_vector(const BoundingBox& head, const BoundingBox& tail) {
  if (!(head.w > 0.0 && head.h > 0.0 && tail.w > 0.0 && tail.h > 0.0))
    throw std::invalid_argument("rel_position_vector: box extents must be positive");
  return {(head.x - tail.x) / tail.w, (head.y - tail.y) / tail.h, std::log(head.w / tail.w),
          std::log(head.h / tail.h)};
}

std::vector<std::size_t> SceneRepGraph::node_labels() const {
  std::vector<std::size_t> labels = object_labels;
  labels.insert(labels.end(), predicate_labels.begin(), predicate_labels.end());
  return labels;
}

namespace {

std::vector<std::size_t> neighbors_of(const EdgeList& edges, std::size_t node) {
  std::vector<std::size_t> out;
  for (std::size_t e = 0; e < edges.size(); ++e)
    if (edges.dst[e] == node) out.push_back(edges.src[e]);
  return out;
}

void add_relation_edges(SceneRepGraph& g, std::size_t r) {
  const std::size_t p = g.num_objects + r;
  // head -> p -> tail
  g.in_edges.dst.push_back(p);
  g.in_edges.src.push_back(g.heads[r]);
  g.out_edges.dst.push_back(p);
  g.out_edges.src.push_back(g.tails[r]);
  g.in_edges.dst.push_back(g.tails[r]);
  g.in_edges.src.push_back(p);
  g.out_edges.dst.push_back(g.heads[r]);
  g.out_edges.src.push_back(p);
}

}  // namespace

std::vector<std::size_t> SceneRepGraph::in_neighbors(std::size_t node) const {
  return neighbors_of(in_edges, node);
}

std::vector<std::size_t> SceneRepGraph::out_neighbors(std::size_t node) const {
  return neighbors_of(out_edges, node);
}

template <typename T>
Tensor<T> SceneRepGraph::geometry() const {
  Tensor<T> out(num_predicates, 4);
  for (std::size_t r = 0; r < num_predicates; ++r) {
    const auto t = rel_positions[r].as_array();
    for (std::size_t j = 0; j < 4; ++j) out(r, j) = static_cast<T>(t[j]);
  }
  return out;
}

template Tensor<float> SceneRepGraph::geometry<float>() const;
template Tensor<double> SceneRepGraph::geometry<double>() const;

SceneRepGraph make_graph(std::size_t dim, Tensor<float> object_features, std::vector<BoundingBox> boxes,
                         std::span<const std::size_t> heads, std::span<const std::size_t> tails) {
  if (heads.size() != tails.size()) throw std::invalid_argument("make_graph: head/tail count mismatch");
  if (object_features.cols() != dim && object_features.rows() != 0)
    throw std::invalid_argument("make_graph: feature width " + std::to_string(object_features.cols()) +
                                " differs from " + std::to_string(dim));
  SceneRepGraph g;
  g.dim = dim;
  g.num_objects = object_features.rows();
  g.num_predicates = heads.size();
  g.object_features = std::move(object_features);
  if (g.object_features.cols() != dim) g.object_features = Tensor<float>(0, dim);
  const bool has_boxes = !boxes.empty();
  if (has_boxes && boxes.size() != g.num_objects)
    throw std::invalid_argument("make_graph: box count differs from object count");
  g.boxes = std::move(boxes);
  g.heads.assign(heads.begin(), heads.end());
  g.tails.assign(tails.begin(), tails.end());
  for (std::size_t r = 0; r < g.num_predicates; ++r) {
    if (g.heads[r] >= g.num_objects || g.tails[r] >= g.num_objects)
      throw std::invalid_argument("make_graph: relation " + std::to_string(r) + " references a missing object");
    if (g.heads[r] == g.tails[r])
      throw std::invalid_argument("make_graph: relation " + std::to_string(r) + " is a self-relation");
    g.rel_positions.push_back(has_boxes ? rel_position_vector(g.boxes[g.heads[r]], g.boxes[g.tails[r]])
                                        : RelPositionVector{});
    add_relation_edges(g, r);
  }
  g.object_offsets = {0, g.num_objects};
  g.predicate_offsets = {0, g.num_predicates};
  return g;
}

SceneRepGraph build_srg(const SceneRecord& record, const Vocabulary& vocab, std::size_t dim) {
  const std::size_t n = record.objects.size();
  Tensor<float> features(n, dim);
  std::vector<BoundingBox> boxes;
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& obj = record.objects[i];
    if (obj.feature) {
      if (obj.feature->size() != dim)
        throw DataError("scene '" + record.id + "' object " + std::to_string(i) + ": feature width " +
                        std::to_string(obj.feature->size()) + ", expected " + std::to_string(dim));
      std::copy(obj.feature->begin(), obj.feature->end(), features.row(i).begin());
    }
    if (!(obj.box.w > 0.0 && obj.box.h > 0.0))
      throw DataError("scene '" + record.id + "' object " + std::to_string(i) + ": nonpositive box extent");
    boxes.push_back(obj.box);
    const auto label = vocab.object_index(obj.label);
    if (!label) throw DataError("scene '" + record.id + "': unknown object label '" + obj.label + "'");
    labels.push_back(*label);
  }
  std::vector<std::size_t> heads, tails, predicate_labels;
  for (std::size_t r = 0; r < record.relations.size(); ++r) {
    const auto& rel = record.relations[r];
    if (rel.head >= n || rel.tail >= n)
      throw DataError("scene '" + record.id + "' relation " + std::to_string(r) + ": dangling object index");
    if (rel.head == rel.tail)
      throw DataError("scene '" + record.id + "' relation " + std::to_string(r) + ": self-relation");
    const auto p = vocab.predicate_index(rel.predicate);
    if (!p) throw DataError("scene '" + record.id + "': unknown predicate '" + rel.predicate + "'");
    heads.push_back(rel.head);
    tails.push_back(rel.tail);
    predicate_labels.push_back(*p);
  }
  SceneRepGraph g = make_graph(dim, std::move(features), std::move(boxes), heads, tails);
  g.object_labels = std::move(labels);
  g.predicate_labels = std::move(predicate_labels);
  return g;
}

SceneRepGraph merge_graphs(std::span<const SceneRepGraph* const> graphs) {
  SceneRepGraph out;
  if (graphs.empty()) return out;
  out.dim = graphs.front()->dim;
  std::size_t n = 0, m = 0;
  bool labeled = true;
  for (const auto* g : graphs) {
    if (g->dim != out.dim) throw std::invalid_argument("merge_graphs: dimension mismatch");
    n += g->num_objects;
    m += g->num_predicates;
    labeled = labeled && g->labeled();
  }
  out.num_objects = n;
  out.num_predicates = m;
  out.object_features = Tensor<float>(n, out.dim);
  out.object_offsets = {0};
  out.predicate_offsets = {0};
  std::size_t obj_base = 0, pred_base = 0;
  float* feat = out.object_features.data();
  for (const auto* g : graphs) {
    std::copy(g->object_features.values().begin(), g->object_features.values().end(), feat);
    feat += g->object_features.size();
    out.boxes.insert(out.boxes.end(), g->boxes.begin(), g->boxes.end());
    for (std::size_t r = 0; r < g->num_predicates; ++r) {
      out.heads.push_back(obj_base + g->heads[r]);
      out.tails.push_back(obj_base + g->tails[r]);
    }
    out.rel_positions.insert(out.rel_positions.end(), g->rel_positions.begin(), g->rel_positions.end());
    if (labeled) {
      out.object_labels.insert(out.object_labels.end(), g->object_labels.begin(), g->object_labels.end());
      out.predicate_labels.insert(out.predicate_labels.end(), g->predicate_labels.begin(),
                                  g->predicate_labels.end());
    }
    // Scenes that are themselves merged keep their inner boundaries.
    for (std::size_t s = 1; s < g->object_offsets.size(); ++s) {
      out.object_offsets.push_back(obj_base + g->object_offsets[s]);
      out.predicate_offsets.push_back(pred_base + g->predicate_offsets[s]);
    }
    obj_base += g->num_objects;
    pred_base += g->num_predicates;
  }
  for (std::size_t r = 0; r < m; ++r) add_relation_edges(out, r);
  return out;
}

SceneRepGraph merge_graphs(std::span<const SceneRepGraph> graphs) {
  std::vector<const SceneRepGraph*> ptrs;
  for (const auto& g : graphs) ptrs.push_back(&g);
  return merge_graphs(std::span<const SceneRepGraph* const>(ptrs));
}

}  // namespace schemanet
