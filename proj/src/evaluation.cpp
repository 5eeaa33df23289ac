#include "schemanet/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>
#include <cctype>
#include <set>
#include <stdexcept>
#include <tuple>

#include "schemanet/training.hpp"

namespace schemanet {

std::string task_name(Task task) { return task == Task::SGCls ? "sgcls" : "predcls"; }

Task parse_task(const std::string& name) {
  std::string lower = name;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "sgcls") return Task::SGCls;
  if (lower == "predcls") return Task::PredCls;
  throw std::invalid_argument("unknown task '" + name + "' (expected sgcls or predcls)");
}

void sort_triples(std::vector<ScoredTriple>& triples) {
  std::sort(triples.begin(), triples.end(), [](const ScoredTriple& a, const ScoredTriple& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.pair_index != b.pair_index) return a.pair_index < b.pair_index;
    return a.predicate < b.predicate;
  });
}

std::vector<ScoredTriple> score_triples(const Tensor<float>& object_probs, const Tensor<float>& predicate_probs,
                                        std::span<const std::size_t> heads, std::span<const std::size_t> tails,
                                        Task task) {
  if (heads.size() != tails.size() || heads.size() != predicate_probs.rows())
    throw ShapeError("score_triples: one head, tail and predicate row per pair expected");
  const std::vector<std::size_t> labels = row_argmax(object_probs);
  std::vector<ScoredTriple> out;
  out.reserve(heads.size() * predicate_probs.cols());
  for (std::size_t r = 0; r < heads.size(); ++r) {
    const std::size_t h = heads[r], t = tails[r];
    if (h >= object_probs.rows() || t >= object_probs.rows())
      throw std::out_of_range("score_triples: pair index outside the scene");
    double factor = 1.0;
    if (task == Task::SGCls)
      factor = static_cast<double>(object_probs(h, labels[h])) * static_cast<double>(object_probs(t, labels[t]));
    for (std::size_t c = 0; c < predicate_probs.cols(); ++c) {
      out.push_back({h, t, c, factor * static_cast<double>(predicate_probs(r, c)), r, labels[h], labels[t]});
    }
  }
  sort_triples(out);
  return out;
}

std::vector<ScoredTriple> apply_graph_constraint(std::span<const ScoredTriple> ranked, bool constrained) {
  if (!constrained) return {ranked.begin(), ranked.end()};
  std::vector<ScoredTriple> sorted(ranked.begin(), ranked.end());
  sort_triples(sorted);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  std::vector<ScoredTriple> out;
  for (const auto& t : sorted)
    if (seen.insert({t.head, t.tail}).second) out.push_back(t);
  return out;
}

std::vector<bool> ground_truth_hits(const ImageRanking& image, std::size_t k, Task task) {
  if (k == 0) throw std::invalid_argument("recall: K must be at least 1");
  const std::size_t top = std::min(k, image.candidates.size());
  std::vector<bool> hits(image.ground_truth.size(), false);
  for (std::size_t g = 0; g < image.ground_truth.size(); ++g) {
    const auto& gt = image.ground_truth[g];
    for (std::size_t i = 0; i < top && !hits[g]; ++i) {
      const auto& c = image.candidates[i];
      bool match = c.head == gt.head && c.tail == gt.tail && c.predicate == gt.predicate;
      if (task == Task::SGCls) match = match && c.head_class == gt.head_class && c.tail_class == gt.tail_class;
      hits[g] = match;
    }
  }
  return hits;
}

double recall_at_k(std::span<const ImageRanking> images, std::size_t k, Task task) {
  double total = 0.0;
  std::size_t counted = 0;
  for (const auto& image : images) {
    if (image.ground_truth.empty()) continue;
    const auto hits = ground_truth_hits(image, k, task);
    total += static_cast<double>(std::count(hits.begin(), hits.end(), true)) / static_cast<double>(hits.size());
    ++counted;
  }
  return counted == 0 ? 0.0 : total / static_cast<double>(counted);
}

MeanRecall mean_recall_at_k(std::span<const ImageRanking> images, std::size_t k, Task task) {
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> counts;  // class -> (hits, total)
  for (const auto& image : images) {
    const auto hits = ground_truth_hits(image, k, task);
    for (std::size_t g = 0; g < hits.size(); ++g) {
      auto& c = counts[image.ground_truth[g].predicate];
      c.first += hits[g] ? 1 : 0;
      c.second += 1;
    }
  }
  MeanRecall out;
  if (counts.empty()) return out;
  for (const auto& [cls, c] : counts) {
    const double r = static_cast<double>(c.first) / static_cast<double>(c.second);
    out.per_predicate[cls] = r;
    out.value += r;
  }
  out.value /= static_cast<double>(counts.size());
  return out;
}

namespace {

void check_labels(const ModelParams<float>& model, const SceneRepGraph& g) {
  if (!g.labeled()) throw DataError("evaluate: scene without labels");
  for (std::size_t c : g.object_labels)
    if (c >= model.config.num_object_classes)
      throw DataError("evaluate: object class " + std::to_string(c) + " outside the model vocabulary");
  for (std::size_t c : g.predicate_labels)
    if (c >= model.config.num_predicate_classes)
      throw DataError("evaluate: predicate class " + std::to_string(c) + " outside the model vocabulary");
  if (g.dim != model.config.dim)
    throw DataError("evaluate: feature width " + std::to_string(g.dim) + " but the model expects " +
                    std::to_string(model.config.dim));
}

Tensor<float> slice(const Tensor<float>& t, std::size_t begin, std::size_t end) {
  Tensor<float> out(end - begin, t.cols());
  std::copy(t.data() + begin * t.cols(), t.data() + end * t.cols(), out.data());
  return out;
}

struct StepAccumulator {
  std::vector<ImageRanking> images;
  std::size_t object_correct = 0, objects = 0, predicate_correct = 0, predicates = 0;

  void append(StepAccumulator&& other) {
    for (auto& image : other.images) images.push_back(std::move(image));
    object_correct += other.object_correct;
    objects += other.objects;
    predicate_correct += other.predicate_correct;
    predicates += other.predicates;
  }
};

std::vector<StepAccumulator> evaluate_chunk(const ModelParams<float>& model,
                                            std::span<const SceneRepGraph> scenes, const EvalOptions& options,
                                            std::size_t max_k) {
  const std::size_t steps = options.assimilations + 1;
  std::vector<StepAccumulator> acc(steps);
  std::vector<const SceneRepGraph*> members;
  for (const auto& g : scenes) members.push_back(&g);
  const SceneRepGraph batch = merge_graphs(std::span<const SceneRepGraph* const>(members));

  std::mt19937_64 unused_rng(0);
  Tape<float> tape(false);
  Var<float> x = initial_features(tape, model, batch, false, unused_rng);
  Tensor<float> gt_objects = one_hot_rows<float>(batch.object_labels, model.config.num_object_classes);
  AlphaHook<float> hook;
  if (options.task == Task::PredCls) {
    Var<float> fixed = tape.constant(gt_objects);
    hook = [fixed](std::size_t, const Classification<float>& alpha) {
      return Classification<float>{fixed, alpha.predicates};
    };
  }
  const AssimilationTrace<float> trace = assimilate(tape, model, batch, x, options.assimilations, hook);

  for (std::size_t t = 0; t < steps; ++t) {
    const Tensor<float>& obj_pred = trace.steps[t].objects.value();
    const Tensor<float>& pred_pred = trace.steps[t].predicates.value();
    const Tensor<float>& obj_probs = options.task == Task::PredCls ? gt_objects : obj_pred;
    const auto obj_argmax = row_argmax(obj_pred);
    const auto pred_argmax = row_argmax(pred_pred);
    auto& a = acc[t];
    for (std::size_t i = 0; i < batch.num_objects; ++i) a.object_correct += obj_argmax[i] == batch.object_labels[i];
    for (std::size_t r = 0; r < batch.num_predicates; ++r)
      a.predicate_correct += pred_argmax[r] == batch.predicate_labels[r];
    a.objects += batch.num_objects;
    a.predicates += batch.num_predicates;

    for (std::size_t s = 0; s < batch.num_scenes(); ++s) {
      const std::size_t o0 = batch.object_offsets[s], o1 = batch.object_offsets[s + 1];
      const std::size_t p0 = batch.predicate_offsets[s], p1 = batch.predicate_offsets[s + 1];
      std::vector<std::size_t> heads, tails;
      ImageRanking image;
      for (std::size_t r = p0; r < p1; ++r) {
        heads.push_back(batch.heads[r] - o0);
        tails.push_back(batch.tails[r] - o0);
        image.ground_truth.push_back({heads.back(), batch.predicate_labels[r], tails.back(),
                                      batch.object_labels[batch.heads[r]], batch.object_labels[batch.tails[r]]});
      }
      auto ranked = score_triples(slice(obj_probs, o0, o1), slice(pred_pred, p0, p1), heads, tails, options.task);
      image.candidates = apply_graph_constraint(ranked, options.constrained);
      if (image.candidates.size() > max_k) image.candidates.resize(max_k);
      a.images.push_back(std::move(image));
    }
  }
  return acc;
}

}  // namespace

std::vector<RecallReport> evaluate(const ModelParams<float>& model, std::span<const SceneRepGraph> scenes,
                                   const EvalOptions& options) {
  if (options.ks.empty()) throw std::invalid_argument("evaluate: no K values");
  for (std::size_t k : options.ks)
    if (k == 0) throw std::invalid_argument("evaluate: K must be at least 1");
  for (const auto& g : scenes) check_labels(model, g);
  const std::size_t max_k = *std::max_element(options.ks.begin(), options.ks.end());
  const std::size_t chunk = std::max<std::size_t>(1, options.chunk);
  const std::size_t steps = options.assimilations + 1;

  const std::size_t chunks = (scenes.size() + chunk - 1) / chunk;
  std::vector<std::vector<StepAccumulator>> results(chunks);
  std::vector<std::exception_ptr> errors(chunks);
  auto run = [&](std::size_t c) {
    try {
      const std::size_t begin = c * chunk, end = std::min(scenes.size(), begin + chunk);
      results[c] = evaluate_chunk(model, scenes.subspan(begin, end - begin), options, max_k);
    } catch (...) {
      errors[c] = std::current_exception();
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(options.workers, 1, std::max<std::size_t>(1, chunks));
  if (workers == 1) {
    for (std::size_t c = 0; c < chunks; ++c) run(c);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t c = next++; c < chunks; c = next++) run(c);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<StepAccumulator> acc(steps);
  for (auto& r : results)
    for (std::size_t t = 0; t < steps; ++t) acc[t].append(std::move(r[t]));

  std::vector<RecallReport> reports;
  for (std::size_t t = 0; t < steps; ++t) {
    const auto& a = acc[t];
    RecallReport r;
    r.task = options.task;
    r.constrained = options.constrained;
    r.step = t;
    r.ks = options.ks;
    for (std::size_t k : options.ks) {
      r.recall.push_back(recall_at_k(a.images, k, options.task));
      MeanRecall m = mean_recall_at_k(a.images, k, options.task);
      r.mean_recall.push_back(m.value);
      r.per_predicate.push_back(std::move(m.per_predicate));
    }
    auto ratio = [](std::size_t num, std::size_t den) {
      return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
    };
    r.object_accuracy = ratio(a.object_correct, a.objects);
    r.predicate_accuracy = ratio(a.predicate_correct, a.predicates);
    r.node_accuracy = ratio(a.object_correct + a.predicate_correct, a.objects + a.predicates);
    reports.push_back(std::move(r));
  }
  return reports;
}

std::vector<std::vector<RankedPredicate>> pkg_link_predict(const ModelParams<float>& model,
                                                           std::span<const ClassPair> pairs, std::size_t top_n) {
  if (pairs.empty()) return {};
  Tape<float> tape(false);
  const Tensor<float> probs = kb_assimilate(tape, model, pairs).value();
  std::vector<std::vector<RankedPredicate>> out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    std::vector<RankedPredicate> row;
    for (std::size_t c = 0; c < probs.cols(); ++c) row.push_back({c, static_cast<double>(probs(i, c))});
    std::stable_sort(row.begin(), row.end(),
                     [](const RankedPredicate& a, const RankedPredicate& b) { return a.probability > b.probability; });
    if (row.size() > top_n) row.resize(top_n);
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<RankedPredicate> pkg_link_predict(const ModelParams<float>& model, std::size_t head, std::size_t tail,
                                              std::size_t top_n) {
  const ClassPair pair{head, tail};
  return pkg_link_predict(model, std::span<const ClassPair>(&pair, 1), top_n).front();
}

}  // namespace schemanet
