#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "schemanet/schema.hpp"

namespace schemanet {

enum class Task { SGCls, PredCls };

std::string task_name(Task task);
/// "sgcls" / "predcls", case-insensitive. Throws std::invalid_argument.
Task parse_task(const std::string& name);

struct ScoredTriple {
  std::size_t head = 0;  // object index within the scene
  std::size_t tail = 0;
  std::size_t predicate = 0;  // class
  double score = 0.0;
  std::size_t pair_index = 0;  // predicate node the candidate came from
  std::size_t head_class = 0;
  std::size_t tail_class = 0;
};

struct GroundTruthTriple {
  std::size_t head = 0;
  std::size_t predicate = 0;
  std::size_t tail = 0;
  std::size_t head_class = 0;
  std::size_t tail_class = 0;
};

/// Candidates of one scene: every predicate node r (pair heads[r] ->
/// tails[r]) times every predicate class, scored
/// P(head class) * P(predicate) * P(tail class) with object classes fixed
/// to their argmax. PredCls uses object factors of 1. Returned sorted.
std::vector<ScoredTriple> score_triples(const Tensor<float>& object_probs, const Tensor<float>& predicate_probs,
                                        std::span<const std::size_t> heads, std::span<const std::size_t> tails,
                                        Task task);

/// Score descending, ties by (pair_index, predicate) ascending.
void sort_triples(std::vector<ScoredTriple>& triples);

/// Constrained: the best candidate per ordered (head, tail) pair, in ranked
/// order. Unconstrained: the input unchanged.
std::vector<ScoredTriple> apply_graph_constraint(std::span<const ScoredTriple> ranked, bool constrained);

/// Ranked candidates and ground truth of one scene.
struct ImageRanking {
  std::vector<ScoredTriple> candidates;
  std::vector<GroundTruthTriple> ground_truth;
};

/// Per ground-truth triple, whether the top-k candidates contain it. SGCls
/// matches also require the head and tail classes.
std::vector<bool> ground_truth_hits(const ImageRanking& image, std::size_t k, Task task);

/// Mean over images with nonempty ground truth of |top-k ∩ GT| / |GT|.
/// Returns 0 when no image has ground truth.
double recall_at_k(std::span<const ImageRanking> images, std::size_t k, Task task);

struct MeanRecall {
  double value = 0.0;
  std::map<std::size_t, double> per_predicate;  // classes present in GT
};

/// Recall per predicate class over all its GT triples, then the unweighted
/// mean over classes present in GT.
MeanRecall mean_recall_at_k(std::span<const ImageRanking> images, std::size_t k, Task task);

struct EvalOptions {
  Task task = Task::SGCls;
  bool constrained = true;
  std::vector<std::size_t> ks{20, 50, 100};
  std::size_t assimilations = 0;
  /// Scenes per forward pass.
  std::size_t chunk = 32;
  /// Threads evaluating chunks; results are merged in scene order.
  std::size_t workers = 1;
};

struct RecallReport {
  Task task = Task::SGCls;
  bool constrained = true;
  std::size_t step = 0;
  std::vector<std::size_t> ks;
  std::vector<double> recall;
  std::vector<double> mean_recall;
  std::vector<std::map<std::size_t, double>> per_predicate;
  double object_accuracy = 0.0;
  double predicate_accuracy = 0.0;
  /// Argmax accuracy pooled over object and predicate nodes.
  double node_accuracy = 0.0;
};

/// Runs assimilation in eval mode on every labeled scene and reports each
/// step 0..assimilations. PredCls feeds one-hot ground-truth object rows
/// into the schema messages and scores with them. Throws DataError when a
/// label does not fit the model's class counts.
std::vector<RecallReport> evaluate(const ModelParams<float>& model, std::span<const SceneRepGraph> scenes,
                                   const EvalOptions& options);

struct RankedPredicate {
  std::size_t predicate = 0;
  double probability = 0.0;
};

/// Predicate distribution for a class pair without image evidence, top
/// `top_n` by probability (ties by class index).
std::vector<RankedPredicate> pkg_link_predict(const ModelParams<float>& model, std::size_t head, std::size_t tail,
                                              std::size_t top_n);
std::vector<std::vector<RankedPredicate>> pkg_link_predict(const ModelParams<float>& model,
                                                           std::span<const ClassPair> pairs, std::size_t top_n);

}  // namespace schemanet
