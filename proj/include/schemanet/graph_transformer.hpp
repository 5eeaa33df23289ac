#pragma once

#include "schemanet/model.hpp"

namespace schemanet {

enum class Direction { In, Out };

/// Attention message for every destination of `edges`:
/// (1/K) sum_k sum_j alpha_ij^k W_dir^k z_j, with the attention softmax
/// normalized within each destination's neighbor set. Nodes without
/// neighbors in this direction receive a zero row.
template <typename T>
Var<T> directional_message(Tape<T>& tape, const TransformerLayerParams<T>& layer, Var<T> states,
                           const EdgeList& edges, Direction direction, T slope);

/// z' = LN(z + m_in + m_out); out = LN(z' + f(z')).
template <typename T>
Var<T> transformer_layer(Tape<T>& tape, const TransformerLayerParams<T>& layer, Var<T> states,
                         const SceneRepGraph& graph, T slope);

/// Applies every layer of the stack in order.
template <typename T>
Var<T> contextualize(Tape<T>& tape, const TransformerStack<T>& stack, Var<T> states, const SceneRepGraph& graph,
                     T slope);

/// Attention coefficients of node state `z_i` (1 x d) over `neighbors`
/// (k x d, k >= 1) for one head and direction. Throws on an empty set.
template <typename T>
Tensor<T> attention_coefficients(const TransformerLayerParams<T>& layer, std::size_t head, Direction direction,
                                 const Tensor<T>& z_i, const Tensor<T>& neighbors, T slope);

/// Message from `neighbors` (k x d, possibly empty) to `z_i` in one direction.
template <typename T>
Tensor<T> neighborhood_message(const TransformerLayerParams<T>& layer, Direction direction, const Tensor<T>& z_i,
                               const Tensor<T>& neighbors, T slope);

}  // namespace schemanet
