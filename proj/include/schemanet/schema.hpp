#pragma once

#include <functional>
#include <span>
#include <vector>

#include "schemanet/graph_transformer.hpp"

namespace schemanet {

/// Classification rows alpha' for object nodes (n x |C_o|) and predicate
/// nodes (m x |C_p|).
template <typename T>
struct Classification {
  Var<T> objects;
  Var<T> predicates;
};

/// alpha'_ic = softmax_c(z_i . s_c). `states` holds the object rows first.
template <typename T>
Classification<T> classify(Tape<T>& tape, Var<T> states, const SchemaBank<T>& bank, std::size_t num_objects);

/// delta_i = sum_c alpha'_ic s_c, stacked objects then predicates.
template <typename T>
Var<T> schema_message(Tape<T>& tape, const Classification<T>& alpha, const SchemaBank<T>& bank);

/// u = LN(x + delta); returns LN(u + g(u)).
template <typename T>
Var<T> inject(Tape<T>& tape, Var<T> x, Var<T> delta, const InjectionNet<T>& net, T slope);

/// Result of `assimilate`: one classification and final-layer state per step.
template <typename T>
struct AssimilationTrace {
  Var<T> features;  // x, the step-0 input
  std::vector<Classification<T>> steps;
  std::vector<Var<T>> states;

  std::size_t size() const { return steps.size(); }
};

/// Called with step t and alpha'^(t) before it feeds the schema message of
/// step t+1; the returned rows are used instead. The trace keeps the
/// unmodified classification.
template <typename T>
using AlphaHook = std::function<Classification<T>(std::size_t step, const Classification<T>& alpha)>;

/// Step 0 contextualizes `x` and classifies. Each later step computes
/// schema messages from the previous classification, injects them into
/// the original `x`, contextualizes and classifies again.
template <typename T>
AssimilationTrace<T> assimilate(Tape<T>& tape, const ModelParams<T>& model, const SceneRepGraph& graph, Var<T> x,
                                std::size_t assimilations, const AlphaHook<T>& hook = {});

struct ClassPair {
  std::size_t head = 0;
  std::size_t tail = 0;
};

/// Structure used for triple-only inputs: per pair two object nodes and one
/// predicate node, zero features, no geometry.
SceneRepGraph kb_graph(std::span<const ClassPair> pairs, std::size_t dim);

/// One-hot object rows for the given classes.
template <typename T>
Tensor<T> one_hot_rows(std::span<const std::size_t> classes, std::size_t num_classes);

/// Predicate distributions (pairs x |C_p|) for class pairs without image
/// evidence: x = 0, head/tail alpha' one-hot, predicate alpha' uniform,
/// then one injection, contextualization and classification.
template <typename T>
Var<T> kb_assimilate(Tape<T>& tape, const ModelParams<T>& model, std::span<const ClassPair> pairs);

}  // namespace schemanet
