#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "schemanet/srg.hpp"
#include "schemanet/tape.hpp"

namespace schemanet {

/// Architecture hyperparameters. Defaults are the full-scale configuration.
struct ModelConfig {
  std::size_t dim = 512;
  std::size_t layers = 4;
  std::size_t heads = 5;
  std::size_t ffn_hidden = 2048;
  std::size_t inject_hidden = 512;
  std::size_t predicate_hidden = 512;
  double object_dropout = 0.8;
  double predicate_dropout = 0.1;
  double leaky_slope = 0.2;
  std::size_t num_object_classes = 150;
  std::size_t num_predicate_classes = 50;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename T>
struct Affine {
  Parameter<T> weight;  // in x out
  Parameter<T> bias;    // 1 x out
};

template <typename T>
struct LayerNormParams {
  Parameter<T> gain;
  Parameter<T> bias;
};

/// affine -> leaky relu -> affine
template <typename T>
struct FeedForward {
  Affine<T> first;
  Affine<T> second;
};

template <typename T>
struct PredicateInitNet {
  FeedForward<T> mlp;  // 4 -> hidden -> dim
};

/// One attention head. Messages from in- and out-neighbors use separate
/// projections; the attention vector (2*dim x 1) scores [z_i || W z_j].
template <typename T>
struct AttentionHead {
  Parameter<T> proj_in;
  Parameter<T> proj_out;
  Parameter<T> attention;
};

template <typename T>
struct TransformerLayerParams {
  std::vector<AttentionHead<T>> heads;
  FeedForward<T> ffn;
  LayerNormParams<T> message_norm;
  LayerNormParams<T> output_norm;
};

template <typename T>
struct TransformerStack {
  std::vector<TransformerLayerParams<T>> layers;
};

template <typename T>
struct InjectionNet {
  FeedForward<T> g;
  LayerNormParams<T> fuse_norm;
  LayerNormParams<T> output_norm;
};

/// Per-class embeddings used both as classifier weights and as messages.
template <typename T>
struct SchemaBank {
  Parameter<T> objects;     // |C_o| x dim
  Parameter<T> predicates;  // |C_p| x dim
};

/// All trainable tensors. `parameters()` lists them in the fixed order
/// used by checkpoints and optimizers.
template <typename T>
struct ModelParams {
  ModelConfig config;
  PredicateInitNet<T> predicate_init;
  TransformerStack<T> stack;
  InjectionNet<T> injection;
  SchemaBank<T> bank;

  /// Glorot weights, zero biases, unit LN gains.
  static ModelParams init(const ModelConfig& config, std::mt19937_64& rng);

  std::vector<Parameter<T>*> parameters();
  std::vector<const Parameter<T>*> parameters() const;

  template <typename U>
  ModelParams<U> cast() const;

  T slope() const { return static_cast<T>(config.leaky_slope); }
};

// Building blocks shared by the modules.

template <typename T>
Var<T> apply_affine(Tape<T>& tape, const Affine<T>& layer, Var<T> x);

template <typename T>
Var<T> apply_feed_forward(Tape<T>& tape, const FeedForward<T>& net, Var<T> x, T slope);

template <typename T>
Var<T> apply_layer_norm(Tape<T>& tape, const LayerNormParams<T>& norm, Var<T> x);

/// Predicate features from the relative geometry (m x 4 -> m x dim), with
/// dropout at `predicate_dropout` in training mode.
template <typename T>
Var<T> predicate_features(Tape<T>& tape, const ModelParams<T>& model, Var<T> geometry, bool training,
                          std::mt19937_64& rng);

/// Single-vector form of `predicate_features`.
template <typename T>
Tensor<T> init_predicate_feature(const RelPositionVector& t, const ModelParams<T>& model, bool training,
                                 std::mt19937_64& rng);

/// Node features x at assimilation step 0: ingested object vectors (with
/// `object_dropout` in training mode) followed by predicate features.
template <typename T>
Var<T> initial_features(Tape<T>& tape, const ModelParams<T>& model, const SceneRepGraph& graph, bool training,
                        std::mt19937_64& rng);

}  // namespace schemanet
