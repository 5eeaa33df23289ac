#include "schemanet/graph_transformer.hpp"

namespace schemanet {
namespace {

template <typename T>
const Parameter<T>& projection(const AttentionHead<T>& head, Direction direction) {
  return direction == Direction::In ? head.proj_in : head.proj_out;
}

// Attention coefficients of one head over `edges`, plus the projected
// states W z (needed by the message).
template <typename T>
std::pair<Var<T>, Var<T>> head_attention(Tape<T>& tape, const AttentionHead<T>& head, Var<T> states,
                                         const EdgeList& edges, Direction direction, T slope) {
  const std::size_t d = states.cols();
  const std::size_t n = states.rows();
  Var<T> projected = matmul(states, tape.param(projection(head, direction)));
  Var<T> attn = tape.param(head.attention);
  if (attn.rows() != 2 * d) throw ShapeError("attention vector must be 2d x 1");
  // h . [z_i || W z_j] = h_left . z_i + h_right . W z_j
  Var<T> left = matmul(states, slice_rows(attn, 0, d));
  Var<T> right = matmul(projected, slice_rows(attn, d, 2 * d));
  Var<T> scores = leaky_relu(add(gather_rows(left, edges.dst), gather_rows(right, edges.src)), slope);
  Var<T> alpha = segment_softmax(scores, edges.dst, n);
  return {alpha, projected};
}

}  // namespace

template <typename T>
Var<T> directional_message(Tape<T>& tape, const TransformerLayerParams<T>& layer, Var<T> states,
                           const EdgeList& edges, Direction direction, T slope) {
  const std::size_t n = states.rows();
  if (layer.heads.empty()) throw std::invalid_argument("transformer layer without heads");
  if (edges.size() == 0) return tape.constant(Tensor<T>(n, states.cols()));
  Var<T> total{};
  for (std::size_t k = 0; k < layer.heads.size(); ++k) {
    auto [alpha, projected] = head_attention(tape, layer.heads[k], states, edges, direction, slope);
    Var<T> weighted = mul_col(gather_rows(projected, edges.src), alpha);
    Var<T> msg = scatter_add_rows(weighted, edges.dst, n);
    total = k == 0 ? msg : add(total, msg);
  }
  return scale(total, T(1) / static_cast<T>(layer.heads.size()));
}

template <typename T>
Var<T> transformer_layer(Tape<T>& tape, const TransformerLayerParams<T>& layer, Var<T> states,
                         const SceneRepGraph& graph, T slope) {
  if (states.rows() != graph.num_nodes())
    throw ShapeError("transformer_layer: " + std::to_string(states.rows()) + " states for " +
                     std::to_string(graph.num_nodes()) + " nodes");
  Var<T> m_in = directional_message(tape, layer, states, graph.in_edges, Direction::In, slope);
  Var<T> m_out = directional_message(tape, layer, states, graph.out_edges, Direction::Out, slope);
  Var<T> z_mid = apply_layer_norm(tape, layer.message_norm, add(add(states, m_in), m_out));
  Var<T> ff = apply_feed_forward(tape, layer.ffn, z_mid, slope);
  return apply_layer_norm(tape, layer.output_norm, add(z_mid, ff));
}

template <typename T>
Var<T> contextualize(Tape<T>& tape, const TransformerStack<T>& stack, Var<T> states, const SceneRepGraph& graph,
                     T slope) {
  for (const auto& layer : stack.layers) states = transformer_layer(tape, layer, states, graph, slope);
  return states;
}

namespace {

// Node 0 is z_i, nodes 1..k the neighbors, all edges point into node 0.
template <typename T>
std::pair<Tensor<T>, EdgeList> star(const Tensor<T>& z_i, const Tensor<T>& neighbors) {
  if (z_i.rows() != 1 || (neighbors.rows() > 0 && neighbors.cols() != z_i.cols()))
    throw ShapeError("expected z_i as 1 x d and neighbors as k x d");
  Tensor<T> states(neighbors.rows() + 1, z_i.cols());
  std::copy(z_i.values().begin(), z_i.values().end(), states.data());
  std::copy(neighbors.values().begin(), neighbors.values().end(), states.data() + z_i.cols());
  EdgeList edges;
  for (std::size_t j = 0; j < neighbors.rows(); ++j) {
    edges.dst.push_back(0);
    edges.src.push_back(j + 1);
  }
  return {std::move(states), std::move(edges)};
}

}  // namespace

template <typename T>
Tensor<T> attention_coefficients(const TransformerLayerParams<T>& layer, std::size_t head, Direction direction,
                                 const Tensor<T>& z_i, const Tensor<T>& neighbors, T slope) {
  if (neighbors.rows() == 0) throw std::invalid_argument("attention_coefficients: empty neighbor set");
  if (head >= layer.heads.size()) throw std::out_of_range("attention_coefficients: head index");
  auto [states, edges] = star(z_i, neighbors);
  Tape<T> tape(false);
  auto [alpha, projected] =
      head_attention(tape, layer.heads[head], tape.constant(std::move(states)), edges, direction, slope);
  return alpha.value();
}

template <typename T>
Tensor<T> neighborhood_message(const TransformerLayerParams<T>& layer, Direction direction, const Tensor<T>& z_i,
                               const Tensor<T>& neighbors, T slope) {
  auto [states, edges] = star(z_i, neighbors);
  Tape<T> tape(false);
  Var<T> msg = directional_message(tape, layer, tape.constant(std::move(states)), edges, direction, slope);
  Tensor<T> out(1, z_i.cols());
  std::copy(msg.value().row(0).begin(), msg.value().row(0).end(), out.data());
  return out;
}

#define SCHEMANET_INSTANTIATE_GT(T)                                                                             \
  template Var<T> directional_message<T>(Tape<T>&, const TransformerLayerParams<T>&, Var<T>, const EdgeList&,  \
                                         Direction, T);                                                        \
  template Var<T> transformer_layer<T>(Tape<T>&, const TransformerLayerParams<T>&, Var<T>,                     \
                                       const SceneRepGraph&, T);                                               \
  template Var<T> contextualize<T>(Tape<T>&, const TransformerStack<T>&, Var<T>, const SceneRepGraph&, T);     \
  template Tensor<T> attention_coefficients<T>(const TransformerLayerParams<T>&, std::size_t, Direction,       \
                                               const Tensor<T>&, const Tensor<T>&, T);                         \
  template Tensor<T> neighborhood_message<T>(const TransformerLayerParams<T>&, Direction, const Tensor<T>&,     \
                                             const Tensor<T>&, T);

SCHEMANET_INSTANTIATE_GT(float)
SCHEMANET_INSTANTIATE_GT(double)

}  // namespace schemanet
