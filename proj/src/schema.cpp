#include "schemanet/schema.hpp"

namespace schemanet {

template <typename T>
Classification<T> classify(Tape<T>& tape, Var<T> states, const SchemaBank<T>& bank, std::size_t num_objects) {
  if (num_objects > states.rows()) throw ShapeError("classify: more objects than states");
  Var<T> objects = slice_rows(states, 0, num_objects);
  Var<T> predicates = slice_rows(states, num_objects, states.rows());
  Var<T> obj_logits = matmul(objects, transpose(tape.param(bank.objects)));
  Var<T> pred_logits = matmul(predicates, transpose(tape.param(bank.predicates)));
  return {softmax(obj_logits, 1), softmax(pred_logits, 1)};
}

template <typename T>
Var<T> schema_message(Tape<T>& tape, const Classification<T>& alpha, const SchemaBank<T>& bank) {
  Var<T> obj = matmul(alpha.objects, tape.param(bank.objects));
  Var<T> pred = matmul(alpha.predicates, tape.param(bank.predicates));
  return concat_rows(obj, pred);
}

template <typename T>
Var<T> inject(Tape<T>& tape, Var<T> x, Var<T> delta, const InjectionNet<T>& net, T slope) {
  Var<T> u = apply_layer_norm(tape, net.fuse_norm, add(x, delta));
  return apply_layer_norm(tape, net.output_norm, add(u, apply_feed_forward(tape, net.g, u, slope)));
}

template <typename T>
AssimilationTrace<T> assimilate(Tape<T>& tape, const ModelParams<T>& model, const SceneRepGraph& graph, Var<T> x,
                                std::size_t assimilations, const AlphaHook<T>& hook) {
  if (x.rows() != graph.num_nodes() || x.cols() != model.config.dim)
    throw ShapeError("assimilate: features " + shape_string(x.value()) + " for " +
                     std::to_string(graph.num_nodes()) + " nodes of width " + std::to_string(model.config.dim));
  const T slope = model.slope();
  AssimilationTrace<T> trace;
  trace.features = x;
  Var<T> z = contextualize(tape, model.stack, x, graph, slope);
  trace.states.push_back(z);
  trace.steps.push_back(classify(tape, z, model.bank, graph.num_objects));
  for (std::size_t t = 0; t < assimilations; ++t) {
    Classification<T> alpha = hook ? hook(t, trace.steps.back()) : trace.steps.back();
    Var<T> delta = schema_message(tape, alpha, model.bank);
    Var<T> z0 = inject(tape, x, delta, model.injection, slope);
    z = contextualize(tape, model.stack, z0, graph, slope);
    trace.states.push_back(z);
    trace.steps.push_back(classify(tape, z, model.bank, graph.num_objects));
  }
  return trace;
}

SceneRepGraph kb_graph(std::span<const ClassPair> pairs, std::size_t dim) {
  const std::size_t b = pairs.size();
  std::vector<std::size_t> heads(b), tails(b), labels(2 * b);
  for (std::size_t i = 0; i < b; ++i) {
    heads[i] = 2 * i;
    tails[i] = 2 * i + 1;
    labels[2 * i] = pairs[i].head;
    labels[2 * i + 1] = pairs[i].tail;
  }
  SceneRepGraph g = make_graph(dim, Tensor<float>(2 * b, dim), {}, heads, tails);
  g.object_labels = std::move(labels);
  g.object_offsets.clear();
  g.predicate_offsets.clear();
  for (std::size_t i = 0; i <= b; ++i) {
    g.object_offsets.push_back(2 * i);
    g.predicate_offsets.push_back(i);
  }
  return g;
}

template <typename T>
Tensor<T> one_hot_rows(std::span<const std::size_t> classes, std::size_t num_classes) {
  Tensor<T> out(classes.size(), num_classes);
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i] >= num_classes)
      throw std::out_of_range("unknown class id " + std::to_string(classes[i]));
    out(i, classes[i]) = T(1);
  }
  return out;
}

template <typename T>
Var<T> kb_assimilate(Tape<T>& tape, const ModelParams<T>& model, std::span<const ClassPair> pairs) {
  const auto& cfg = model.config;
  for (const auto& p : pairs) {
    if (p.head >= cfg.num_object_classes || p.tail >= cfg.num_object_classes)
      throw std::out_of_range("kb_assimilate: unknown object class id");
  }
  const SceneRepGraph graph = kb_graph(pairs, cfg.dim);
  Var<T> x = tape.constant(Tensor<T>(graph.num_nodes(), cfg.dim));
  Classification<T> seed{
      tape.constant(one_hot_rows<T>(graph.object_labels, cfg.num_object_classes)),
      tape.constant(Tensor<T>(graph.num_predicates, cfg.num_predicate_classes,
                              T(1) / static_cast<T>(cfg.num_predicate_classes)))};
  const T slope = model.slope();
  Var<T> z0 = inject(tape, x, schema_message(tape, seed, model.bank), model.injection, slope);
  Var<T> z = contextualize(tape, model.stack, z0, graph, slope);
  return classify(tape, z, model.bank, graph.num_objects).predicates;
}

#define SCHEMANET_INSTANTIATE_SCHEMA(T)                                                                    \
  template Classification<T> classify<T>(Tape<T>&, Var<T>, const SchemaBank<T>&, std::size_t);            \
  template Var<T> schema_message<T>(Tape<T>&, const Classification<T>&, const SchemaBank<T>&);            \
  template Var<T> inject<T>(Tape<T>&, Var<T>, Var<T>, const InjectionNet<T>&, T);                         \
  template AssimilationTrace<T> assimilate<T>(Tape<T>&, const ModelParams<T>&, const SceneRepGraph&,      \
                                              Var<T>, std::size_t, const AlphaHook<T>&);                  \
  template Tensor<T> one_hot_rows<T>(std::span<const std::size_t>, std::size_t);                           \
  template Var<T> kb_assimilate<T>(Tape<T>&, const ModelParams<T>&, std::span<const ClassPair>);

SCHEMANET_INSTANTIATE_SCHEMA(float)
SCHEMANET_INSTANTIATE_SCHEMA(double)

}  // namespace schemanet
