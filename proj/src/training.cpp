#include "schemanet/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"

namespace schemanet {

template <typename T>
Var<T> classification_loss(Tape<T>& tape, const Classification<T>& alpha, const SceneRepGraph& graph) {
  if (!graph.labeled()) throw std::invalid_argument("classification loss: graph is missing labels");
  if (graph.num_nodes() == 0) throw std::invalid_argument("classification loss: empty graph");
  (void)tape;
  Var<T> obj = cross_entropy(alpha.objects, std::span<const std::size_t>(graph.object_labels));
  Var<T> pred = cross_entropy(alpha.predicates, std::span<const std::size_t>(graph.predicate_labels));
  return mean(concat_rows(obj, pred));
}

template <typename T>
Var<T> ic_loss(Tape<T>& tape, const AssimilationTrace<T>& trace, const SceneRepGraph& graph) {
  if (trace.size() == 0) throw std::invalid_argument("ic_loss: empty trace");
  return classification_loss(tape, trace.steps.front(), graph);
}

namespace {

template <typename T>
double mean_of(const Tensor<T>& column) {
  if (column.size() == 0) return 0.0;
  double total = 0;
  for (T v : column.values()) total += v;
  return total / static_cast<double>(column.size());
}

template <typename T>
Tensor<T> per_row_ce(const Tensor<T>& probs, std::span<const std::size_t> labels) {
  Tensor<T> out(probs.rows(), 1);
  for (std::size_t i = 0; i < probs.rows(); ++i)
    out[i] = -std::log(std::max(probs(i, labels[i]), static_cast<T>(1e-12)));
  return out;
}

}  // namespace

template <typename T>
MultiTaskLoss<T> multi_task_loss(Tape<T>& tape, const AssimilationTrace<T>& trace, const SceneRepGraph& graph,
                                 std::span<const double> step_weights) {
  if (trace.size() == 0) throw std::invalid_argument("multi_task_loss: empty trace");
  MultiTaskLoss<T> out;
  for (std::size_t t = 0; t < trace.size(); ++t) {
    Var<T> step = classification_loss(tape, trace.steps[t], graph);
    const double w = t < step_weights.size() ? step_weights[t] : 1.0;
    Var<T> weighted = w == 1.0 ? step : scale(step, static_cast<T>(w));
    out.total = t == 0 ? weighted : add(out.total, weighted);
    out.report.step_loss.push_back(step.value()[0]);
    out.report.object_loss.push_back(mean_of(per_row_ce(trace.steps[t].objects.value(), graph.object_labels)));
    out.report.predicate_loss.push_back(
        mean_of(per_row_ce(trace.steps[t].predicates.value(), graph.predicate_labels)));
  }
  out.report.total = out.total.value()[0];
  return out;
}

std::size_t replacement_cap(double rate, std::size_t node_count) {
  if (rate <= 0.0) return 0;
  // Guards against representation error such as 0.1 * 30 = 3.0000000000000004.
  return static_cast<std::size_t>(std::ceil(rate * static_cast<double>(node_count) - 1e-9));
}

std::vector<std::size_t> select_replacements(std::span<const std::size_t> predicted,
                                             std::span<const std::size_t> labels, double rate,
                                             std::mt19937_64& rng) {
  if (predicted.size() != labels.size()) throw std::invalid_argument("select_replacements: length mismatch");
  std::vector<std::size_t> wrong;
  for (std::size_t i = 0; i < predicted.size(); ++i)
    if (predicted[i] != labels[i]) wrong.push_back(i);
  const std::size_t k = std::min(replacement_cap(rate, predicted.size()), wrong.size());
  if (k == 0) return {};
  std::vector<std::size_t> chosen;
  std::sample(wrong.begin(), wrong.end(), std::back_inserter(chosen), k, rng);
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

template <typename T>
std::vector<std::size_t> row_argmax(const Tensor<T>& probs) {
  std::vector<std::size_t> out(probs.rows(), 0);
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    auto r = probs.row(i);
    out[i] = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

template <typename T>
Tensor<T> scheduled_replace(const Tensor<T>& alpha, std::span<const std::size_t> labels, double rate,
                            std::mt19937_64& rng, std::size_t* replaced) {
  const auto rows = select_replacements(row_argmax(alpha), labels, rate, rng);
  Tensor<T> out = alpha;
  for (std::size_t r : rows) {
    auto row = out.row(r);
    std::fill(row.begin(), row.end(), T(0));
    row[labels[r]] = T(1);
  }
  if (replaced) *replaced += rows.size();
  return out;
}

template <typename T>
Classification<T> scheduled_replace(Tape<T>& tape, const Classification<T>& alpha, const SceneRepGraph& graph,
                                    double rate, std::mt19937_64& rng, std::size_t* replaced) {
  (void)tape;
  const std::size_t n = graph.num_objects;
  std::vector<std::size_t> predicted = row_argmax(alpha.objects.value());
  const auto pred_argmax = row_argmax(alpha.predicates.value());
  predicted.insert(predicted.end(), pred_argmax.begin(), pred_argmax.end());
  const std::vector<std::size_t> labels = graph.node_labels();
  const auto rows = select_replacements(predicted, labels, rate, rng);
  if (rows.empty()) return alpha;
  std::vector<std::size_t> obj_rows, obj_labels, pred_rows, pred_labels;
  for (std::size_t r : rows) {
    if (r < n) {
      obj_rows.push_back(r);
      obj_labels.push_back(labels[r]);
    } else {
      pred_rows.push_back(r - n);
      pred_labels.push_back(labels[r]);
    }
  }
  if (replaced) *replaced += rows.size();
  return {replace_rows(alpha.objects, obj_rows, one_hot_rows<T>(obj_labels, alpha.objects.cols())),
          replace_rows(alpha.predicates, pred_rows, one_hot_rows<T>(pred_labels, alpha.predicates.cols()))};
}

double ramp(std::size_t epoch, const TrainConfig& config) {
  const std::size_t end =
      config.ramp_end_epoch > 0 ? config.ramp_end_epoch : std::max<std::size_t>(1, config.epochs / 3);
  if (epoch >= end) return config.max_replace_rate;
  return config.max_replace_rate * static_cast<double>(epoch) / static_cast<double>(end);
}

template <typename T>
Var<T> kb_loss(Tape<T>& tape, const ModelParams<T>& model, std::span<const KbTriple> triples) {
  if (triples.empty()) throw std::invalid_argument("kb_loss: empty batch");
  std::vector<ClassPair> pairs;
  std::vector<std::size_t> targets;
  Tensor<T> weights(triples.size(), 1);
  double total = 0;
  for (const auto& t : triples) total += static_cast<double>(t.count);
  for (std::size_t i = 0; i < triples.size(); ++i) {
    pairs.push_back({triples[i].head, triples[i].tail});
    if (triples[i].predicate >= model.config.num_predicate_classes)
      throw std::out_of_range("kb_loss: unknown predicate class id");
    targets.push_back(triples[i].predicate);
    weights[i] = static_cast<T>(static_cast<double>(triples[i].count) / total);
  }
  Var<T> probs = kb_assimilate(tape, model, pairs);
  return sum(mul(cross_entropy(probs, std::span<const std::size_t>(targets)), tape.constant(std::move(weights))));
}

Trainer::Trainer(ModelParams<float>& model, TrainConfig config)
    : model_(model), config_(std::move(config)), adam_(AdamConfig{config_.lr}), rng_(config_.seed) {
  auto params = model_.parameters();
  zero_grads<float>(params);
}

void Trainer::apply_update() {
  auto params = model_.parameters();
  if (config_.optimizer == OptimizerKind::Adam) {
    adam_.step(params);
  } else {
    sgd_step<float>(params, config_.lr);
  }
  zero_grads<float>(params);
  ++step_;
}

namespace {

void require_finite(double loss, const char* what) {
  if (!std::isfinite(loss)) throw NumericError(std::string("non-finite ") + what + " loss");
}

}  // namespace

LossReport Trainer::train_image_batch(const SceneRepGraph& batch, double rate) {
  Tape<float> tape;
  Var<float> x = initial_features(tape, model_, batch, true, rng_);
  std::size_t replaced = 0;
  AlphaHook<float> hook;
  if (rate > 0.0) {
    hook = [&](std::size_t, const Classification<float>& alpha) {
      return scheduled_replace(tape, alpha, batch, rate, rng_, &replaced);
    };
  }
  const AssimilationTrace<float> trace = assimilate(tape, model_, batch, x, config_.assimilations, hook);
  MultiTaskLoss<float> loss = multi_task_loss(tape, trace, batch, config_.step_weights);
  require_finite(loss.report.total, "image");
  tape.backward(loss.total);
  apply_update();
  loss.report.replaced = replaced;
  loss.report.rate = rate;
  loss.report.image_batches = 1;
  return loss.report;
}

LossReport Trainer::train_kb_batch(std::span<const KbTriple> batch) {
  Tape<float> tape;
  Var<float> loss = kb_loss(tape, model_, batch);
  if (config_.kb_weight != 1.0) loss = scale(loss, static_cast<float>(config_.kb_weight));
  require_finite(loss.value()[0], "kb");
  tape.backward(loss);
  apply_update();
  LossReport report;
  report.kb_loss = loss.value()[0];
  report.total = report.kb_loss;
  report.kb_batches = 1;
  return report;
}

namespace {

void accumulate(LossReport& acc, const LossReport& r) {
  auto add_vec = [](std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() < b.size()) a.resize(b.size(), 0.0);
    for (std::size_t i = 0; i < b.size(); ++i) a[i] += b[i];
  };
  add_vec(acc.object_loss, r.object_loss);
  add_vec(acc.predicate_loss, r.predicate_loss);
  add_vec(acc.step_loss, r.step_loss);
  acc.kb_loss += r.kb_loss;
  acc.total += r.total;
  acc.replaced += r.replaced;
  acc.image_batches += r.image_batches;
  acc.kb_batches += r.kb_batches;
}

}  // namespace

LossReport Trainer::train_epoch(std::span<const SceneRepGraph> dataset, std::span<const KbTriple> kb) {
  if (dataset.empty() && kb.empty()) throw std::invalid_argument("train_epoch: no images and no triples");
  if (config_.batch_size == 0 || config_.kb_batch_size == 0) throw std::invalid_argument("train_epoch: empty batch");
  const double rate = ramp(epoch_, config_);

  std::vector<std::size_t> image_order(dataset.size());
  std::iota(image_order.begin(), image_order.end(), 0);
  if (!image_order.empty()) std::shuffle(image_order.begin(), image_order.end(), rng_);
  std::vector<std::size_t> kb_order(kb.size());
  std::iota(kb_order.begin(), kb_order.end(), 0);
  if (!kb_order.empty()) std::shuffle(kb_order.begin(), kb_order.end(), rng_);

  const std::size_t n_image = (dataset.size() + config_.batch_size - 1) / config_.batch_size;
  const std::size_t n_kb = (kb.size() + config_.kb_batch_size - 1) / config_.kb_batch_size;

  LossReport acc;
  std::size_t done_image = 0, done_kb = 0;
  while (done_image < n_image || done_kb < n_kb) {
    // Fixed interleaving: take whichever stream is behind its share.
    const bool take_image =
        done_kb >= n_kb ||
        (done_image < n_image && (2 * done_image + 1) * n_kb <= (2 * done_kb + 1) * n_image);
    if (take_image) {
      const std::size_t begin = done_image * config_.batch_size;
      const std::size_t end = std::min(dataset.size(), begin + config_.batch_size);
      std::vector<const SceneRepGraph*> members;
      for (std::size_t i = begin; i < end; ++i) members.push_back(&dataset[image_order[i]]);
      const SceneRepGraph batch = merge_graphs(std::span<const SceneRepGraph* const>(members));
      accumulate(acc, train_image_batch(batch, rate));
      ++done_image;
    } else {
      const std::size_t begin = done_kb * config_.kb_batch_size;
      const std::size_t end = std::min(kb.size(), begin + config_.kb_batch_size);
      std::vector<KbTriple> batch;
      for (std::size_t i = begin; i < end; ++i) batch.push_back(kb[kb_order[i]]);
      accumulate(acc, train_kb_batch(batch));
      ++done_kb;
    }
  }
  auto average = [](std::vector<double>& v, std::size_t n) {
    if (n == 0) return;
    for (auto& x : v) x /= static_cast<double>(n);
  };
  average(acc.object_loss, acc.image_batches);
  average(acc.predicate_loss, acc.image_batches);
  average(acc.step_loss, acc.image_batches);
  if (acc.kb_batches > 0) acc.kb_loss /= static_cast<double>(acc.kb_batches);
  const std::size_t batches = acc.image_batches + acc.kb_batches;
  if (batches > 0) acc.total /= static_cast<double>(batches);
  acc.rate = rate;
  ++epoch_;
  return acc;
}

void write_epoch_log(std::ostream& out, std::size_t epoch, const LossReport& report) {
  nlohmann::json j;
  j["epoch"] = epoch;
  j["step_loss"] = report.step_loss;
  j["object_loss"] = report.object_loss;
  j["predicate_loss"] = report.predicate_loss;
  j["kb_loss"] = report.kb_loss;
  j["total"] = report.total;
  j["replaced"] = report.replaced;
  j["rate"] = report.rate;
  j["image_batches"] = report.image_batches;
  j["kb_batches"] = report.kb_batches;
  out << j.dump() << '\n';
}

#define SCHEMANET_INSTANTIATE_TRAINING(T)                                                                      \
  template Var<T> classification_loss<T>(Tape<T>&, const Classification<T>&, const SceneRepGraph&);           \
  template Var<T> ic_loss<T>(Tape<T>&, const AssimilationTrace<T>&, const SceneRepGraph&);                    \
  template MultiTaskLoss<T> multi_task_loss<T>(Tape<T>&, const AssimilationTrace<T>&, const SceneRepGraph&,   \
                                               std::span<const double>);                                      \
  template std::vector<std::size_t> row_argmax<T>(const Tensor<T>&);                                          \
  template Tensor<T> scheduled_replace<T>(const Tensor<T>&, std::span<const std::size_t>, double,             \
                                          std::mt19937_64&, std::size_t*);                                    \
  template Classification<T> scheduled_replace<T>(Tape<T>&, const Classification<T>&, const SceneRepGraph&,   \
                                                  double, std::mt19937_64&, std::size_t*);                    \
  template Var<T> kb_loss<T>(Tape<T>&, const ModelParams<T>&, std::span<const KbTriple>);

SCHEMANET_INSTANTIATE_TRAINING(float)
SCHEMANET_INSTANTIATE_TRAINING(double)

}  // namespace schemanet
