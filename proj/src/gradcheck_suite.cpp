#include <random>

#include "schemanet/gradcheck.hpp"
#include "schemanet/training.hpp"

namespace schemanet {
namespace {

using D = double;
using Inputs = std::span<const Var<D>>;

Tensor<D> random_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double lo = -1.0,
                        double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<D> t(rows, cols);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

// Weighted sum with fixed random weights so every output entry matters.
Var<D> probe(Tape<D>& tape, Var<D> out, const Tensor<D>& weights) {
  return sum(mul(out, tape.constant(weights)));
}

}  // namespace

std::vector<GradCheckEntry> gradcheck_suite(std::uint64_t seed, bool tamper) {
  std::mt19937_64 rng(seed);
  GradCheckOptions options;
  if (tamper) {
    options.tamper = [](std::vector<Tensor<D>>& grads) {
      for (auto& g : grads)
        if (g.size() > 0) g[0] += 0.1 + 0.1 * std::abs(g[0]);
    };
  }
  std::vector<GradCheckEntry> out;
  auto check = [&](std::string name, std::vector<Tensor<D>> inputs, std::size_t out_rows, std::size_t out_cols,
                   std::function<Var<D>(Tape<D>&, Inputs)> f) {
    const Tensor<D> w = random_tensor(out_rows, out_cols, rng);
    GradCheckFn fn = [f, w](Tape<D>& tape, Inputs in) { return probe(tape, f(tape, in), w); };
    out.push_back({std::move(name), grad_check(fn, inputs, options)});
  };

  check("matmul", {random_tensor(5, 7, rng), random_tensor(7, 3, rng)}, 5, 3,
        [](Tape<D>&, Inputs in) { return matmul(in[0], in[1]); });
  check("transpose", {random_tensor(3, 4, rng)}, 4, 3, [](Tape<D>&, Inputs in) { return transpose(in[0]); });
  check("add", {random_tensor(3, 4, rng), random_tensor(3, 4, rng)}, 3, 4,
        [](Tape<D>&, Inputs in) { return add(in[0], in[1]); });
  check("sub", {random_tensor(3, 4, rng), random_tensor(3, 4, rng)}, 3, 4,
        [](Tape<D>&, Inputs in) { return sub(in[0], in[1]); });
  check("mul", {random_tensor(3, 4, rng), random_tensor(3, 4, rng)}, 3, 4,
        [](Tape<D>&, Inputs in) { return mul(in[0], in[1]); });
  check("add_row", {random_tensor(3, 4, rng), random_tensor(1, 4, rng)}, 3, 4,
        [](Tape<D>&, Inputs in) { return add_row(in[0], in[1]); });
  check("mul_col", {random_tensor(3, 4, rng), random_tensor(3, 1, rng)}, 3, 4,
        [](Tape<D>&, Inputs in) { return mul_col(in[0], in[1]); });
  check("scale", {random_tensor(3, 4, rng)}, 3, 4, [](Tape<D>&, Inputs in) { return scale(in[0], 0.7); });
  check("leaky_relu", {random_tensor(4, 5, rng)}, 4, 5,
        [](Tape<D>&, Inputs in) { return leaky_relu(in[0], 0.2); });
  check("layer_norm", {random_tensor(3, 6, rng), random_tensor(1, 6, rng), random_tensor(1, 6, rng)}, 3, 6,
        [](Tape<D>&, Inputs in) { return layer_norm(in[0], in[1], in[2]); });
  check("softmax_rows", {random_tensor(3, 5, rng, -2, 2)}, 3, 5,
        [](Tape<D>&, Inputs in) { return softmax(in[0], 1); });
  check("softmax_cols", {random_tensor(4, 3, rng, -2, 2)}, 4, 3,
        [](Tape<D>&, Inputs in) { return softmax(in[0], 0); });
  check("dropout", {random_tensor(4, 6, rng)}, 4, 6, [](Tape<D>&, Inputs in) {
    std::mt19937_64 mask_rng(7);
    return dropout(in[0], 0.3, true, mask_rng);
  });
  {
    std::vector<std::size_t> targets{0, 2, 1, 2};
    check("cross_entropy", {random_tensor(4, 3, rng, 0.1, 1.0)}, 4, 1,
          [targets](Tape<D>&, Inputs in) { return cross_entropy(in[0], targets); });
  }
  check("sum", {random_tensor(3, 4, rng)}, 1, 1, [](Tape<D>&, Inputs in) { return sum(in[0]); });
  check("mean", {random_tensor(3, 4, rng)}, 1, 1, [](Tape<D>&, Inputs in) { return mean(in[0]); });
  {
    std::vector<std::size_t> index{2, 0, 2, 1, 3};
    check("gather_rows", {random_tensor(4, 3, rng)}, 5, 3,
          [index](Tape<D>&, Inputs in) { return gather_rows(in[0], index); });
    check("scatter_add_rows", {random_tensor(5, 3, rng)}, 4, 3,
          [index](Tape<D>&, Inputs in) { return scatter_add_rows(in[0], index, 4); });
    check("segment_softmax", {random_tensor(5, 1, rng, -2, 2)}, 5, 1,
          [index](Tape<D>&, Inputs in) { return segment_softmax(in[0], index, 4); });
  }
  check("slice_rows", {random_tensor(5, 3, rng)}, 2, 3,
        [](Tape<D>&, Inputs in) { return slice_rows(in[0], 1, 3); });
  check("concat_rows", {random_tensor(2, 3, rng), random_tensor(3, 3, rng)}, 5, 3,
        [](Tape<D>&, Inputs in) { return concat_rows(in[0], in[1]); });
  {
    const Tensor<D> replacement = random_tensor(2, 3, rng);
    std::vector<std::size_t> rows{0, 3};
    check("replace_rows", {random_tensor(4, 3, rng)}, 4, 3,
          [rows, replacement](Tape<D>&, Inputs in) { return replace_rows(in[0], rows, replacement); });
  }
  check("softmax_matmul_chain", {random_tensor(3, 4, rng), random_tensor(4, 5, rng)}, 3, 5,
        [](Tape<D>&, Inputs in) { return softmax(matmul(in[0], in[1]), 1); });

  // Composites over a small model and a 3-object / 2-predicate graph.
  ModelConfig config;
  config.dim = 8;
  config.layers = 2;
  config.heads = 2;
  config.ffn_hidden = 8;
  config.inject_hidden = 8;
  config.predicate_hidden = 8;
  config.num_object_classes = 4;
  config.num_predicate_classes = 3;
  auto model = ModelParams<D>::init(config, rng);
  std::vector<BoundingBox> boxes{{0, 0, 2, 3}, {3, 1, 4, 2}, {1, 5, 1, 1}};
  const std::vector<std::size_t> heads{0, 1}, tails{1, 2};
  Tensor<float> features = random_tensor(3, config.dim, rng).cast<float>();
  SceneRepGraph graph = make_graph(config.dim, features, boxes, heads, tails);
  graph.object_labels = {1, 3, 0};
  graph.predicate_labels = {2, 0};
  const D slope = model.slope();
  const auto& layer = model.stack.layers.front();

  check("attention_message", {random_tensor(graph.num_nodes(), config.dim, rng)}, graph.num_nodes(), config.dim,
        [&](Tape<D>& tape, Inputs in) {
          return directional_message(tape, layer, in[0], graph.in_edges, Direction::In, slope);
        });
  check("transformer_layer", {random_tensor(graph.num_nodes(), config.dim, rng)}, graph.num_nodes(), config.dim,
        [&](Tape<D>& tape, Inputs in) { return transformer_layer(tape, layer, in[0], graph, slope); });
  check("inject", {random_tensor(graph.num_nodes(), config.dim, rng), random_tensor(graph.num_nodes(), config.dim, rng)},
        graph.num_nodes(), config.dim,
        [&](Tape<D>& tape, Inputs in) { return inject(tape, in[0], in[1], model.injection, slope); });

  auto params = model.parameters();
  {
    std::mt19937_64 unused(0);
    auto loss = [&](Tape<D>& tape) {
      Var<D> x = initial_features(tape, model, graph, false, unused);
      const auto trace = assimilate(tape, model, graph, x, 1);
      return multi_task_loss(tape, trace, graph).total;
    };
    out.push_back({"assimilation_loss", grad_check_params(loss, params, options)});
  }
  {
    const std::vector<KbTriple> triples{{0, 2, 1, 3}, {3, 1, 2, 1}};
    auto loss = [&](Tape<D>& tape) { return kb_loss(tape, model, triples); };
    out.push_back({"kb_loss", grad_check_params(loss, params, options)});
  }
  return out;
}

}  // namespace schemanet
