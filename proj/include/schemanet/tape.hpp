#pragma once

#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <unordered_map>
#include <vector>

#include "schemanet/tensor.hpp"

namespace schemanet {

template <typename T>
class Tape;

/// Handle to a value recorded on a tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Reverse-mode tape. Records are appended in evaluation order and
/// `backward` visits each one once, newest first. Not thread-safe; one
/// tape per forward pass.
template <typename T>
class Tape {
 public:
  /// Receives the gradient flowing into a record's output.
  using Backward = std::function<void(Tape&, const Tensor<T>& out_grad)>;

  /// With `track_params` false, bound parameters act as constants and
  /// backward never writes their gradients (inference tapes).
  explicit Tape(bool track_params = true) : track_params_(track_params) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, {}); }

  /// Leaf whose gradient is kept on the tape (see `grad`).
  Var<T> variable(Tensor<T> value) { return push(std::move(value), true, {}); }

  /// Leaf bound to a parameter. On a tracking tape, gradients are added
  /// into `p.grad` by `backward`, so the parameter must not be a const
  /// object. Binding the same parameter twice returns the same record.
  Var<T> param(const Parameter<T>& p) {
    auto it = param_ids_.find(&p);
    if (it != param_ids_.end()) return {this, it->second};
    Record r;
    r.external = &p.value;
    r.requires_grad = track_params_;
    r.param = track_params_ ? const_cast<Parameter<T>*>(&p) : nullptr;
    records_.push_back(std::move(r));
    const std::size_t id = records_.size() - 1;
    param_ids_.emplace(&p, id);
    return {this, id};
  }

  /// Appends the result of a primitive. Throws NumericError on non-finite output.
  Var<T> record(Tensor<T> value, bool requires_grad, Backward backward) {
    if (!value.all_finite()) throw NumericError("non-finite value produced by primitive");
    return push(std::move(value), requires_grad, std::move(backward));
  }

  const Tensor<T>& value(std::size_t id) const {
    const Record& r = records_[id];
    return r.external ? *r.external : r.value;
  }
  bool requires_grad(std::size_t id) const { return records_[id].requires_grad; }
  bool requires_grad(Var<T> v) const { return requires_grad(v.id); }

  /// Gradient buffer of a record, allocated on first use.
  Tensor<T>& grad_buffer(std::size_t id) {
    Record& r = records_[id];
    const Tensor<T>& v = value(id);
    if (!r.grad.same_shape(v)) r.grad = Tensor<T>(v.rows(), v.cols());
    return r.grad;
  }

  /// Gradient of the last backward root with respect to `v` (zeros when unreached).
  Tensor<T> grad(Var<T> v) const {
    const Record& r = records_[v.id];
    const Tensor<T>& val = value(v.id);
    if (!r.grad.same_shape(val)) return Tensor<T>(val.rows(), val.cols());
    return r.grad;
  }

  /// Seeds d(root)/d(root) = 1 and runs the reverse sweep. Root must be 1x1.
  void backward(Var<T> root) {
    if (value(root.id).size() != 1) throw ShapeError("backward: root must be a 1x1 scalar");
    for (auto& r : records_) {
      if (!r.grad.empty()) r.grad.fill(T(0));
    }
    grad_buffer(root.id)[0] = T(1);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Record& r = records_[i];
      if (!r.requires_grad || r.grad.empty()) continue;
      if (r.backward) r.backward(*this, r.grad);
      if (r.param) {
        Parameter<T>& p = *r.param;
        if (!p.grad.same_shape(p.value)) p.zero_grad();
        auto dst = p.grad.values();
        auto src = r.grad.values();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
  }

  std::size_t size() const { return records_.size(); }
  bool tracks_params() const { return track_params_; }

 private:
  struct Record {
    Tensor<T> value;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    Backward backward;
    Parameter<T>* param = nullptr;
  };

  Var<T> push(Tensor<T> value, bool requires_grad, Backward backward) {
    Record r;
    r.value = std::move(value);
    r.requires_grad = requires_grad;
    r.backward = std::move(backward);
    records_.push_back(std::move(r));
    return {this, records_.size() - 1};
  }

  bool track_params_ = true;
  std::vector<Record> records_;
  std::unordered_map<const Parameter<T>*, std::size_t> param_ids_;
};

// ---------------------------------------------------------------------------
// Primitives. Each records its output and, when any input requires grad,
// a backward closure.

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
template <typename T> Var<T> transpose(Var<T> a);
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
/// Elementwise product.
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
/// a (r x c) + bias (1 x c) added to every row.
template <typename T> Var<T> add_row(Var<T> a, Var<T> bias);
/// Scales row i of a (r x c) by w(i, 0), w is r x 1.
template <typename T> Var<T> mul_col(Var<T> a, Var<T> w);
template <typename T> Var<T> scale(Var<T> a, T factor);
template <typename T> Var<T> leaky_relu(Var<T> a, T slope);
/// Per-row normalization with learned affine; gain and bias are 1 x cols.
template <typename T> Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-5));
/// axis 1: normalize each row; axis 0: normalize each column.
template <typename T> Var<T> softmax(Var<T> x, int axis = 1);
/// Inverted dropout; identity when !training or rate == 0.
template <typename T> Var<T> dropout(Var<T> x, T rate, bool training, std::mt19937_64& rng);
/// -log(max(probs(i, target_i), 1e-12)) per row, returned as n x 1.
template <typename T> Var<T> cross_entropy(Var<T> probs, std::span<const std::size_t> targets);
template <typename T> Var<T> sum(Var<T> a);
template <typename T> Var<T> mean(Var<T> a);
/// out row e = a row index[e].
template <typename T> Var<T> gather_rows(Var<T> a, std::span<const std::size_t> index);
/// out row index[e] += a row e; out has out_rows rows.
template <typename T>
Var<T> scatter_add_rows(Var<T> a, std::span<const std::size_t> index, std::size_t out_rows);
/// Softmax of an E x 1 score column within groups sharing a segment id.
template <typename T>
Var<T> segment_softmax(Var<T> scores, std::span<const std::size_t> segment,
                       std::size_t num_segments);
template <typename T> Var<T> slice_rows(Var<T> a, std::size_t begin, std::size_t end);
template <typename T> Var<T> concat_rows(Var<T> a, Var<T> b);
/// Overwrites the listed rows with rows of `replacement`; no gradient flows
/// into overwritten rows.
template <typename T>
Var<T> replace_rows(Var<T> a, std::span<const std::size_t> rows, const Tensor<T>& replacement);

/// Plain matrix product without a tape.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace schemanet
