#include "schemanet/model.hpp"

#include <string>

#include "schemanet/optim.hpp"

namespace schemanet {
namespace {

template <typename T>
Parameter<T> glorot(std::string name, std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  return Parameter<T>(std::move(name), glorot_init<T>(rows, cols, rng));
}

template <typename T>
Parameter<T> constant(std::string name, std::size_t rows, std::size_t cols, T value) {
  return Parameter<T>(std::move(name), Tensor<T>(rows, cols, value));
}

template <typename T>
Affine<T> make_affine(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return {glorot<T>(name + ".weight", in, out, rng), constant<T>(name + ".bias", 1, out, T(0))};
}

template <typename T>
FeedForward<T> make_ff(const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
                       std::mt19937_64& rng) {
  // Separate statements fix the draw order.
  Affine<T> first = make_affine<T>(name + ".0", in, hidden, rng);
  Affine<T> second = make_affine<T>(name + ".1", hidden, out, rng);
  return {std::move(first), std::move(second)};
}

template <typename T>
LayerNormParams<T> make_norm(const std::string& name, std::size_t dim) {
  return {constant<T>(name + ".gain", 1, dim, T(1)), constant<T>(name + ".bias", 1, dim, T(0))};
}

template <typename P, typename F>
void visit_affine(P& a, F&& f) {
  f(a.weight);
  f(a.bias);
}

template <typename P, typename F>
void visit_ff(P& net, F&& f) {
  visit_affine(net.first, f);
  visit_affine(net.second, f);
}

template <typename P, typename F>
void visit_norm(P& n, F&& f) {
  f(n.gain);
  f(n.bias);
}

// Declared parameter order: predicate init, layers (heads, ffn, norms),
// injection, schemata.
template <typename M, typename F>
void visit_params(M& model, F&& f) {
  visit_ff(model.predicate_init.mlp, f);
  for (auto& layer : model.stack.layers) {
    for (auto& head : layer.heads) {
      f(head.proj_in);
      f(head.proj_out);
      f(head.attention);
    }
    visit_ff(layer.ffn, f);
    visit_norm(layer.message_norm, f);
    visit_norm(layer.output_norm, f);
  }
  visit_ff(model.injection.g, f);
  visit_norm(model.injection.fuse_norm, f);
  visit_norm(model.injection.output_norm, f);
  f(model.bank.objects);
  f(model.bank.predicates);
}

}  // namespace

template <typename T>
ModelParams<T> ModelParams<T>::init(const ModelConfig& config, std::mt19937_64& rng) {
  if (config.dim == 0 || config.heads == 0) throw std::invalid_argument("model: dim and heads must be positive");
  if (config.num_object_classes == 0 || config.num_predicate_classes == 0)
    throw std::invalid_argument("model: class counts must be positive");
  const std::size_t d = config.dim;
  ModelParams<T> m;
  m.config = config;
  m.predicate_init.mlp = make_ff<T>("predicate_init", 4, config.predicate_hidden, d, rng);
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string prefix = "layer" + std::to_string(l);
    TransformerLayerParams<T> layer;
    for (std::size_t k = 0; k < config.heads; ++k) {
      const std::string hp = prefix + ".head" + std::to_string(k);
      AttentionHead<T> head;
      head.proj_in = glorot<T>(hp + ".proj_in", d, d, rng);
      head.proj_out = glorot<T>(hp + ".proj_out", d, d, rng);
      head.attention = glorot<T>(hp + ".attention", 2 * d, 1, rng);
      layer.heads.push_back(std::move(head));
    }
    layer.ffn = make_ff<T>(prefix + ".ffn", d, config.ffn_hidden, d, rng);
    layer.message_norm = make_norm<T>(prefix + ".message_norm", d);
    layer.output_norm = make_norm<T>(prefix + ".output_norm", d);
    m.stack.layers.push_back(std::move(layer));
  }
  m.injection.g = make_ff<T>("inject.g", d, config.inject_hidden, d, rng);
  m.injection.fuse_norm = make_norm<T>("inject.fuse_norm", d);
  m.injection.output_norm = make_norm<T>("inject.output_norm", d);
  m.bank.objects = glorot<T>("schema.objects", config.num_object_classes, d, rng);
  m.bank.predicates = glorot<T>("schema.predicates", config.num_predicate_classes, d, rng);
  return m;
}

template <typename T>
std::vector<Parameter<T>*> ModelParams<T>::parameters() {
  std::vector<Parameter<T>*> out;
  visit_params(*this, [&out](Parameter<T>& p) { out.push_back(&p); });
  return out;
}

template <typename T>
std::vector<const Parameter<T>*> ModelParams<T>::parameters() const {
  std::vector<const Parameter<T>*> out;
  visit_params(*this, [&out](const Parameter<T>& p) { out.push_back(&p); });
  return out;
}

template <typename T>
template <typename U>
ModelParams<U> ModelParams<T>::cast() const {
  ModelParams<U> out;
  out.config = config;
  // Same layer/head counts, then values copied in declared order.
  out.stack.layers.resize(stack.layers.size());
  for (std::size_t l = 0; l < stack.layers.size(); ++l)
    out.stack.layers[l].heads.resize(stack.layers[l].heads.size());
  auto src = parameters();
  auto dst = out.parameters();
  for (std::size_t i = 0; i < src.size(); ++i)
    *dst[i] = Parameter<U>(src[i]->name, src[i]->value.template cast<U>());
  return out;
}

template <typename T>
Var<T> apply_affine(Tape<T>& tape, const Affine<T>& layer, Var<T> x) {
  return add_row(matmul(x, tape.param(layer.weight)), tape.param(layer.bias));
}

template <typename T>
Var<T> apply_feed_forward(Tape<T>& tape, const FeedForward<T>& net, Var<T> x, T slope) {
  return apply_affine(tape, net.second, leaky_relu(apply_affine(tape, net.first, x), slope));
}

template <typename T>
Var<T> apply_layer_norm(Tape<T>& tape, const LayerNormParams<T>& norm, Var<T> x) {
  return layer_norm(x, tape.param(norm.gain), tape.param(norm.bias));
}

template <typename T>
Var<T> predicate_features(Tape<T>& tape, const ModelParams<T>& model, Var<T> geometry, bool training,
                          std::mt19937_64& rng) {
  if (geometry.cols() != 4) throw ShapeError("predicate_features: geometry must be m x 4");
  Var<T> h = apply_feed_forward(tape, model.predicate_init.mlp, geometry, model.slope());
  return dropout(h, static_cast<T>(model.config.predicate_dropout), training, rng);
}

template <typename T>
Tensor<T> init_predicate_feature(const RelPositionVector& t, const ModelParams<T>& model, bool training,
                                 std::mt19937_64& rng) {
  Tape<T> tape(false);
  const auto arr = t.as_array();
  Tensor<T> geo(1, 4);
  for (std::size_t j = 0; j < 4; ++j) geo[j] = static_cast<T>(arr[j]);
  return predicate_features(tape, model, tape.constant(std::move(geo)), training, rng).value();
}

template <typename T>
Var<T> initial_features(Tape<T>& tape, const ModelParams<T>& model, const SceneRepGraph& graph, bool training,
                        std::mt19937_64& rng) {
  if (graph.dim != model.config.dim)
    throw ShapeError("initial_features: graph width " + std::to_string(graph.dim) + " differs from model width " +
                     std::to_string(model.config.dim));
  Var<T> objects = tape.constant(graph.object_features.template cast<T>());
  objects = dropout(objects, static_cast<T>(model.config.object_dropout), training, rng);
  Var<T> preds = predicate_features(tape, model, tape.constant(graph.geometry<T>()), training, rng);
  return concat_rows(objects, preds);
}

#define SCHEMANET_INSTANTIATE_MODEL(T)                                                                       \
  template struct ModelParams<T>;                                                                           \
  template Var<T> apply_affine<T>(Tape<T>&, const Affine<T>&, Var<T>);                                      \
  template Var<T> apply_feed_forward<T>(Tape<T>&, const FeedForward<T>&, Var<T>, T);                        \
  template Var<T> apply_layer_norm<T>(Tape<T>&, const LayerNormParams<T>&, Var<T>);                         \
  template Var<T> predicate_features<T>(Tape<T>&, const ModelParams<T>&, Var<T>, bool, std::mt19937_64&);   \
  template Tensor<T> init_predicate_feature<T>(const RelPositionVector&, const ModelParams<T>&, bool,       \
                                               std::mt19937_64&);                                           \
  template Var<T> initial_features<T>(Tape<T>&, const ModelParams<T>&, const SceneRepGraph&, bool,          \
                                      std::mt19937_64&);

SCHEMANET_INSTANTIATE_MODEL(float)
SCHEMANET_INSTANTIATE_MODEL(double)

template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;
template ModelParams<float> ModelParams<float>::cast<float>() const;
template ModelParams<double> ModelParams<double>::cast<double>() const;

}  // namespace schemanet
