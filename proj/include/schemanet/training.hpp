#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "schemanet/optim.hpp"
#include "schemanet/records.hpp"
#include "schemanet/schema.hpp"

namespace schemanet {

enum class OptimizerKind { Adam, Sgd };

struct TrainConfig {
  std::size_t assimilations = 4;
  double lr = 1e-5;
  std::size_t batch_size = 14;
  std::size_t kb_batch_size = 64;
  std::size_t epochs = 24;
  double max_replace_rate = 0.10;
  /// Epoch at which the replacement rate reaches its maximum; 0 means a
  /// third of `epochs`.
  std::size_t ramp_end_epoch = 0;
  /// Loss weight per assimilation step; missing entries weigh 1.
  std::vector<double> step_weights;
  double kb_weight = 1.0;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::uint64_t seed = 0;
};

/// Loss bookkeeping for one batch or an epoch average.
struct LossReport {
  std::vector<double> object_loss;     // mean cross-entropy per step
  std::vector<double> predicate_loss;  // mean cross-entropy per step
  std::vector<double> step_loss;       // pooled per-node mean per step
  double kb_loss = 0.0;
  double total = 0.0;
  std::size_t replaced = 0;
  double rate = 0.0;
  std::size_t image_batches = 0;
  std::size_t kb_batches = 0;
};

/// Mean cross-entropy of one classification against the graph labels,
/// objects and predicates pooled with equal per-node weight.
template <typename T>
Var<T> classification_loss(Tape<T>& tape, const Classification<T>& alpha, const SceneRepGraph& graph);

/// IC loss: `classification_loss` of trace step 0.
template <typename T>
Var<T> ic_loss(Tape<T>& tape, const AssimilationTrace<T>& trace, const SceneRepGraph& graph);

template <typename T>
struct MultiTaskLoss {
  Var<T> total;
  LossReport report;
};

/// Weighted sum over all trace steps of the per-step pooled cross-entropy.
template <typename T>
MultiTaskLoss<T> multi_task_loss(Tape<T>& tape, const AssimilationTrace<T>& trace, const SceneRepGraph& graph,
                                 std::span<const double> step_weights = {});

/// Number of rows a rate may replace: ceil(rate * node_count).
std::size_t replacement_cap(double rate, std::size_t node_count);

/// Picks rows to replace: uniformly among false negatives (predicted !=
/// label), at most replacement_cap(rate, predicted.size()) of them.
/// Returned indices are sorted.
std::vector<std::size_t> select_replacements(std::span<const std::size_t> predicted,
                                             std::span<const std::size_t> labels, double rate,
                                             std::mt19937_64& rng);

/// Row argmax, lowest index on ties.
template <typename T>
std::vector<std::size_t> row_argmax(const Tensor<T>& probs);

/// Replaces sampled misclassified rows of `alpha` with one-hot labels and
/// adds their number to `*replaced`.
template <typename T>
Tensor<T> scheduled_replace(const Tensor<T>& alpha, std::span<const std::size_t> labels, double rate,
                            std::mt19937_64& rng, std::size_t* replaced = nullptr);

/// Same over the pooled object+predicate node set of a classification.
template <typename T>
Classification<T> scheduled_replace(Tape<T>& tape, const Classification<T>& alpha, const SceneRepGraph& graph,
                                    double rate, std::mt19937_64& rng, std::size_t* replaced = nullptr);

/// Linear from 0 at epoch 0 to max_replace_rate at the ramp end, then flat.
double ramp(std::size_t epoch, const TrainConfig& config);

/// Count-weighted predicate cross-entropy of a KB batch.
template <typename T>
Var<T> kb_loss(Tape<T>& tape, const ModelParams<T>& model, std::span<const KbTriple> triples);

/// Owns the optimizer state and the random stream of one training run.
class Trainer {
 public:
  Trainer(ModelParams<float>& model, TrainConfig config);

  /// One pass over shuffled image batches and KB batches, interleaved in
  /// proportion to their counts. Parameters are stepped per batch.
  /// Throws NumericError on a non-finite loss.
  LossReport train_epoch(std::span<const SceneRepGraph> dataset, std::span<const KbTriple> kb);

  /// Single optimizer step on one image batch (merged graph).
  LossReport train_image_batch(const SceneRepGraph& batch, double rate);
  LossReport train_kb_batch(std::span<const KbTriple> batch);

  std::size_t epoch() const { return epoch_; }
  std::uint64_t step() const { return step_; }
  const TrainConfig& config() const { return config_; }
  std::mt19937_64& rng() { return rng_; }

 private:
  void apply_update();

  ModelParams<float>& model_;
  TrainConfig config_;
  AdamState<float> adam_;
  std::mt19937_64 rng_;
  std::size_t epoch_ = 0;
  std::uint64_t step_ = 0;
};

/// One JSON object per line: epoch, per-step losses, replaced count, rate.
void write_epoch_log(std::ostream& out, std::size_t epoch, const LossReport& report);

}  // namespace schemanet
