#include <algorithm>
#include <cmath>
#include <limits>

#include "schemanet/tape.hpp"

namespace schemanet {
namespace {

// C (n x m) += A (n x k) * B (k x m)
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    T* ci = c + i * m;
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      if (av == T(0)) continue;
      const T* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

// C (k x m) += A^T * B, A is n x k, B is n x m
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* ai = a + i * k;
    const T* bi = b + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      if (av == T(0)) continue;
      T* cp = c + p * m;
      for (std::size_t j = 0; j < m; ++j) cp[j] += av * bi[j];
    }
  }
}

template <typename T>
Tensor<T> transposed(const Tensor<T>& a) {
  Tensor<T> out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

// C (n x k) += A (n x m) * B^T, B is k x m
template <typename T>
void gemm_nt(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c) {
  const Tensor<T> bt = transposed(b);
  gemm_nn(a.data(), bt.data(), c.data(), a.rows(), a.cols(), b.rows());
}

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  auto d = dst.values();
  auto s = src.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

template <typename T>
bool any_grad(Var<T> a) {
  return a.tape->requires_grad(a.id);
}

template <typename T>
bool any_grad(Var<T> a, Var<T> b) {
  return any_grad(a) || any_grad(b);
}

template <typename T>
void same_tape(Var<T> a, Var<T> b, const char* op) {
  if (a.tape != b.tape) throw std::invalid_argument(std::string(op) + ": operands on different tapes");
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                     shape_string(b));
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner dimensions differ (" + shape_string(a) + " x " +
                     shape_string(b) + ")");
  Tensor<T> out(a.rows(), b.cols());
  gemm_nn(a.data(), b.data(), out.data(), a.rows(), a.cols(), b.cols());
  return out;
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  same_tape(a, b, "matmul");
  Tape<T>& tape = *a.tape;
  Tensor<T> out = matmul(a.value(), b.value());
  const std::size_t ia = a.id, ib = b.id;
  return tape.record(std::move(out), any_grad(a, b), [ia, ib](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& av = t.value(ia);
    const Tensor<T>& bv = t.value(ib);
    if (t.requires_grad(ia)) gemm_nt(g, bv, t.grad_buffer(ia));
    if (t.requires_grad(ib))
      gemm_tn(av.data(), g.data(), t.grad_buffer(ib).data(), av.rows(), av.cols(), g.cols());
  });
}

template <typename T>
Var<T> transpose(Var<T> a) {
  const std::size_t ia = a.id;
  return a.tape->record(transposed(a.value()), any_grad(a),
                        [ia](Tape<T>& t, const Tensor<T>& g) { add_into(t.grad_buffer(ia), transposed(g)); });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  same_tape(a, b, "add");
  require_same_shape(a.value(), b.value(), "add");
  Tensor<T> out = a.value();
  add_into(out, b.value());
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), any_grad(a, b), [ia, ib](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(ia)) add_into(t.grad_buffer(ia), g);
    if (t.requires_grad(ib)) add_into(t.grad_buffer(ib), g);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  same_tape(a, b, "sub");
  require_same_shape(a.value(), b.value(), "sub");
  Tensor<T> out = a.value();
  auto o = out.values();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), any_grad(a, b), [ia, ib](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(ia)) add_into(t.grad_buffer(ia), g);
    if (t.requires_grad(ib)) {
      auto d = t.grad_buffer(ib).values();
      auto gv = g.values();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= gv[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  same_tape(a, b, "mul");
  require_same_shape(a.value(), b.value(), "mul");
  Tensor<T> out = a.value();
  auto o = out.values();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), any_grad(a, b), [ia, ib](Tape<T>& t, const Tensor<T>& g) {
    auto gv = g.values();
    if (t.requires_grad(ia)) {
      auto d = t.grad_buffer(ia).values();
      auto other = t.value(ib).values();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += gv[i] * other[i];
    }
    if (t.requires_grad(ib)) {
      auto d = t.grad_buffer(ib).values();
      auto other = t.value(ia).values();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += gv[i] * other[i];
    }
  });
}

template <typename T>
Var<T> add_row(Var<T> a, Var<T> bias) {
  same_tape(a, bias, "add_row");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != av.cols())
    throw ShapeError("add_row: bias " + shape_string(bv) + " does not match " + shape_string(av));
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bv[j];
  }
  const std::size_t ia = a.id, ib = bias.id;
  return a.tape->record(std::move(out), any_grad(a, bias), [ia, ib](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(ia)) add_into(t.grad_buffer(ia), g);
    if (t.requires_grad(ib)) {
      Tensor<T>& d = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.rows(); ++i) {
        auto r = g.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) d[j] += r[j];
      }
    }
  });
}

template <typename T>
Var<T> mul_col(Var<T> a, Var<T> w) {
  same_tape(a, w, "mul_col");
  const Tensor<T>& av = a.value();
  const Tensor<T>& wv = w.value();
  if (wv.cols() != 1 || wv.rows() != av.rows())
    throw ShapeError("mul_col: weights " + shape_string(wv) + " do not match " + shape_string(av));
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (auto& v : out.row(i)) v *= wv[i];
  const std::size_t ia = a.id, iw = w.id;
  return a.tape->record(std::move(out), any_grad(a, w), [ia, iw](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& av = t.value(ia);
    const Tensor<T>& wv = t.value(iw);
    if (t.requires_grad(ia)) {
      Tensor<T>& d = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.rows(); ++i) {
        auto gr = g.row(i);
        auto dr = d.row(i);
        for (std::size_t j = 0; j < gr.size(); ++j) dr[j] += gr[j] * wv[i];
      }
    }
    if (t.requires_grad(iw)) {
      Tensor<T>& d = t.grad_buffer(iw);
      for (std::size_t i = 0; i < g.rows(); ++i) {
        auto gr = g.row(i);
        auto ar = av.row(i);
        T acc = 0;
        for (std::size_t j = 0; j < gr.size(); ++j) acc += gr[j] * ar[j];
        d[i] += acc;
      }
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= factor;
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), any_grad(a), [ia, factor](Tape<T>& t, const Tensor<T>& g) {
    auto d = t.grad_buffer(ia).values();
    auto gv = g.values();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * gv[i];
  });
}

template <typename T>
Var<T> leaky_relu(Var<T> a, T slope) {
  if (!(slope > T(0) && slope < T(1))) throw std::invalid_argument("leaky_relu: slope must be in (0,1)");
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = v >= T(0) ? v : slope * v;
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), any_grad(a), [ia, slope](Tape<T>& t, const Tensor<T>& g) {
    auto d = t.grad_buffer(ia).values();
    auto x = t.value(ia).values();
    auto gv = g.values();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += x[i] >= T(0) ? gv[i] : slope * gv[i];
  });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps) {
  same_tape(x, gain, "layer_norm");
  same_tape(x, bias, "layer_norm");
  const Tensor<T>& xv = x.value();
  const std::size_t n = xv.rows(), c = xv.cols();
  if (gain.value().rows() != 1 || gain.value().cols() != c || !bias.value().same_shape(gain.value()))
    throw ShapeError("layer_norm: gain/bias must be 1x" + std::to_string(c));
  // Normalized values and inverse std are kept for backward.
  Tensor<T> xhat(n, c);
  std::vector<T> inv_std(n);
  Tensor<T> out(n, c);
  const Tensor<T>& gv = gain.value();
  const Tensor<T>& bv = bias.value();
  for (std::size_t i = 0; i < n; ++i) {
    auto r = xv.row(i);
    T mu = 0;
    for (T v : r) mu += v;
    mu /= T(c);
    T var = 0;
    for (T v : r) var += (v - mu) * (v - mu);
    var /= T(c);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[i] = is;
    auto h = xhat.row(i);
    auto o = out.row(i);
    for (std::size_t j = 0; j < c; ++j) {
      h[j] = (r[j] - mu) * is;
      o[j] = h[j] * gv[j] + bv[j];
    }
  }
  const std::size_t ix = x.id, ig = gain.id, ib = bias.id;
  return x.tape->record(
      std::move(out), any_grad(x) || any_grad(gain) || any_grad(bias),
      [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& t, const Tensor<T>& g) {
        const std::size_t n = g.rows(), c = g.cols();
        const Tensor<T>& gv = t.value(ig);
        if (t.requires_grad(ig) || t.requires_grad(ib)) {
          for (std::size_t i = 0; i < n; ++i) {
            auto gr = g.row(i);
            auto h = xhat.row(i);
            if (t.requires_grad(ig)) {
              Tensor<T>& dg = t.grad_buffer(ig);
              for (std::size_t j = 0; j < c; ++j) dg[j] += gr[j] * h[j];
            }
            if (t.requires_grad(ib)) {
              Tensor<T>& db = t.grad_buffer(ib);
              for (std::size_t j = 0; j < c; ++j) db[j] += gr[j];
            }
          }
        }
        if (t.requires_grad(ix)) {
          Tensor<T>& dx = t.grad_buffer(ix);
          std::vector<T> dh(c);
          for (std::size_t i = 0; i < n; ++i) {
            auto gr = g.row(i);
            auto h = xhat.row(i);
            T sum_dh = 0, sum_dh_h = 0;
            for (std::size_t j = 0; j < c; ++j) {
              dh[j] = gr[j] * gv[j];
              sum_dh += dh[j];
              sum_dh_h += dh[j] * h[j];
            }
            auto d = dx.row(i);
            const T inv_c = T(1) / T(c);
            for (std::size_t j = 0; j < c; ++j)
              d[j] += inv_std[i] * (dh[j] - inv_c * sum_dh - h[j] * inv_c * sum_dh_h);
          }
        }
      });
}

namespace {

template <typename T>
void softmax_rows_inplace(Tensor<T>& x) {
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    if (r.empty()) continue;
    const T mx = *std::max_element(r.begin(), r.end());
    T total = 0;
    for (auto& v : r) {
      v = std::exp(v - mx);
      total += v;
    }
    for (auto& v : r) v /= total;
  }
}

}  // namespace

template <typename T>
Var<T> softmax(Var<T> x, int axis) {
  if (axis != 0 && axis != 1) throw std::invalid_argument("softmax: axis must be 0 or 1");
  const Tensor<T>& xv = x.value();
  if ((axis == 1 && xv.cols() == 0) || (axis == 0 && xv.rows() == 0))
    throw ShapeError("softmax: empty axis");
  Tensor<T> out = axis == 1 ? xv : transposed(xv);
  softmax_rows_inplace(out);
  if (axis == 0) out = transposed(out);
  const std::size_t ix = x.id;
  Tensor<T> saved = out;
  return x.tape->record(std::move(out), any_grad(x),
                        [ix, axis, saved = std::move(saved)](Tape<T>& t, const Tensor<T>& g) {
                          const Tensor<T> y = axis == 1 ? saved : transposed(saved);
                          const Tensor<T> gg = axis == 1 ? g : transposed(g);
                          Tensor<T> dx(y.rows(), y.cols());
                          for (std::size_t i = 0; i < y.rows(); ++i) {
                            auto yr = y.row(i);
                            auto gr = gg.row(i);
                            T dot = 0;
                            for (std::size_t j = 0; j < yr.size(); ++j) dot += yr[j] * gr[j];
                            auto d = dx.row(i);
                            for (std::size_t j = 0; j < yr.size(); ++j) d[j] = yr[j] * (gr[j] - dot);
                          }
                          add_into(t.grad_buffer(ix), axis == 1 ? dx : transposed(dx));
                        });
}

template <typename T>
Var<T> dropout(Var<T> x, T rate, bool training, std::mt19937_64& rng) {
  if (!(rate >= T(0) && rate < T(1))) throw std::invalid_argument("dropout: rate must be in [0,1)");
  if (!training || rate == T(0)) return x;
  Tensor<T> mask(x.rows(), x.cols());
  std::bernoulli_distribution keep(1.0 - static_cast<double>(rate));
  const T factor = T(1) / (T(1) - rate);
  for (auto& m : mask.values()) m = keep(rng) ? factor : T(0);
  Tensor<T> out = x.value();
  auto o = out.values();
  auto mv = mask.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= mv[i];
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), any_grad(x), [ix, mask = std::move(mask)](Tape<T>& t, const Tensor<T>& g) {
    auto d = t.grad_buffer(ix).values();
    auto gv = g.values();
    auto mv = mask.values();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += gv[i] * mv[i];
  });
}

template <typename T>
Var<T> cross_entropy(Var<T> probs, std::span<const std::size_t> targets) {
  const Tensor<T>& p = probs.value();
  if (targets.size() != p.rows())
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(p.rows()) + " rows");
  constexpr T floor = T(1e-12);
  Tensor<T> out(p.rows(), 1);
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  for (std::size_t i = 0; i < p.rows(); ++i) {
    if (tgt[i] >= p.cols())
      throw std::out_of_range("cross_entropy: target " + std::to_string(tgt[i]) + " out of range for " +
                              std::to_string(p.cols()) + " classes");
    out[i] = -std::log(std::max(p(i, tgt[i]), floor));
  }
  const std::size_t ip = probs.id;
  return probs.tape->record(std::move(out), any_grad(probs), [ip, tgt = std::move(tgt)](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& p = t.value(ip);
    Tensor<T>& d = t.grad_buffer(ip);
    for (std::size_t i = 0; i < tgt.size(); ++i) {
      const T v = p(i, tgt[i]);
      if (v > floor) d(i, tgt[i]) -= g[i] / v;
    }
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  T total = 0;
  for (T v : a.value().values()) total += v;
  const std::size_t ia = a.id;
  return a.tape->record(Tensor<T>(1, 1, total), any_grad(a), [ia](Tape<T>& t, const Tensor<T>& g) {
    for (auto& v : t.grad_buffer(ia).values()) v += g[0];
  });
}

template <typename T>
Var<T> mean(Var<T> a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), T(1) / T(n));
}

template <typename T>
Var<T> gather_rows(Var<T> a, std::span<const std::size_t> index) {
  const Tensor<T>& av = a.value();
  Tensor<T> out(index.size(), av.cols());
  for (std::size_t e = 0; e < index.size(); ++e) {
    if (index[e] >= av.rows()) throw std::out_of_range("gather_rows: index out of range");
    std::copy(av.row(index[e]).begin(), av.row(index[e]).end(), out.row(e).begin());
  }
  const std::size_t ia = a.id;
  std::vector<std::size_t> idx(index.begin(), index.end());
  return a.tape->record(std::move(out), any_grad(a), [ia, idx = std::move(idx)](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& d = t.grad_buffer(ia);
    for (std::size_t e = 0; e < idx.size(); ++e) {
      auto dr = d.row(idx[e]);
      auto gr = g.row(e);
      for (std::size_t j = 0; j < gr.size(); ++j) dr[j] += gr[j];
    }
  });
}

template <typename T>
Var<T> scatter_add_rows(Var<T> a, std::span<const std::size_t> index, std::size_t out_rows) {
  const Tensor<T>& av = a.value();
  if (index.size() != av.rows()) throw ShapeError("scatter_add_rows: index length differs from rows");
  Tensor<T> out(out_rows, av.cols());
  for (std::size_t e = 0; e < index.size(); ++e) {
    if (index[e] >= out_rows) throw std::out_of_range("scatter_add_rows: index out of range");
    auto o = out.row(index[e]);
    auto r = av.row(e);
    for (std::size_t j = 0; j < r.size(); ++j) o[j] += r[j];
  }
  const std::size_t ia = a.id;
  std::vector<std::size_t> idx(index.begin(), index.end());
  return a.tape->record(std::move(out), any_grad(a), [ia, idx = std::move(idx)](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& d = t.grad_buffer(ia);
    for (std::size_t e = 0; e < idx.size(); ++e) {
      auto dr = d.row(e);
      auto gr = g.row(idx[e]);
      for (std::size_t j = 0; j < gr.size(); ++j) dr[j] += gr[j];
    }
  });
}

template <typename T>
Var<T> segment_softmax(Var<T> scores, std::span<const std::size_t> segment, std::size_t num_segments) {
  const Tensor<T>& s = scores.value();
  if (s.cols() != 1 || s.rows() != segment.size())
    throw ShapeError("segment_softmax: scores must be E x 1 matching segment ids");
  const T lowest = std::numeric_limits<T>::lowest();
  std::vector<T> mx(num_segments, lowest);
  for (std::size_t e = 0; e < segment.size(); ++e) {
    if (segment[e] >= num_segments) throw std::out_of_range("segment_softmax: segment id out of range");
    mx[segment[e]] = std::max(mx[segment[e]], s[e]);
  }
  std::vector<T> total(num_segments, T(0));
  Tensor<T> out(s.rows(), 1);
  for (std::size_t e = 0; e < segment.size(); ++e) {
    out[e] = std::exp(s[e] - mx[segment[e]]);
    total[segment[e]] += out[e];
  }
  for (std::size_t e = 0; e < segment.size(); ++e) out[e] /= total[segment[e]];
  const std::size_t is = scores.id;
  std::vector<std::size_t> seg(segment.begin(), segment.end());
  Tensor<T> saved = out;
  return scores.tape->record(
      std::move(out), any_grad(scores),
      [is, seg = std::move(seg), num_segments, saved = std::move(saved)](Tape<T>& t, const Tensor<T>& g) {
        std::vector<T> dot(num_segments, T(0));
        for (std::size_t e = 0; e < seg.size(); ++e) dot[seg[e]] += saved[e] * g[e];
        Tensor<T>& d = t.grad_buffer(is);
        for (std::size_t e = 0; e < seg.size(); ++e) d[e] += saved[e] * (g[e] - dot[seg[e]]);
      });
}

template <typename T>
Var<T> slice_rows(Var<T> a, std::size_t begin, std::size_t end) {
  const Tensor<T>& av = a.value();
  if (begin > end || end > av.rows()) throw ShapeError("slice_rows: bad range");
  Tensor<T> out(end - begin, av.cols());
  std::copy(av.data() + begin * av.cols(), av.data() + end * av.cols(), out.data());
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), any_grad(a), [ia, begin](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& d = t.grad_buffer(ia);
    T* dst = d.data() + begin * d.cols();
    auto gv = g.values();
    for (std::size_t i = 0; i < gv.size(); ++i) dst[i] += gv[i];
  });
}

template <typename T>
Var<T> concat_rows(Var<T> a, Var<T> b) {
  same_tape(a, b, "concat_rows");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  if (av.cols() != bv.cols() && av.rows() != 0 && bv.rows() != 0)
    throw ShapeError("concat_rows: column mismatch " + shape_string(av) + " vs " + shape_string(bv));
  const std::size_t cols = av.rows() != 0 ? av.cols() : bv.cols();
  Tensor<T> out(av.rows() + bv.rows(), cols);
  std::copy(av.values().begin(), av.values().end(), out.data());
  std::copy(bv.values().begin(), bv.values().end(), out.data() + av.size());
  const std::size_t ia = a.id, ib = b.id;
  const std::size_t split = av.size();
  return a.tape->record(std::move(out), any_grad(a, b), [ia, ib, split](Tape<T>& t, const Tensor<T>& g) {
    auto gv = g.values();
    if (t.requires_grad(ia)) {
      auto d = t.grad_buffer(ia).values();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += gv[i];
    }
    if (t.requires_grad(ib)) {
      auto d = t.grad_buffer(ib).values();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += gv[split + i];
    }
  });
}

template <typename T>
Var<T> replace_rows(Var<T> a, std::span<const std::size_t> rows, const Tensor<T>& replacement) {
  const Tensor<T>& av = a.value();
  if (replacement.rows() != rows.size() || (replacement.cols() != av.cols() && !rows.empty()))
    throw ShapeError("replace_rows: replacement " + shape_string(replacement) + " for " +
                     std::to_string(rows.size()) + " rows of " + shape_string(av));
  if (rows.empty()) return a;
  Tensor<T> out = av;
  std::vector<char> replaced(av.rows(), 0);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= av.rows()) throw std::out_of_range("replace_rows: row out of range");
    std::copy(replacement.row(k).begin(), replacement.row(k).end(), out.row(rows[k]).begin());
    replaced[rows[k]] = 1;
  }
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), any_grad(a), [ia, replaced = std::move(replaced)](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& d = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      if (replaced[i]) continue;
      auto dr = d.row(i);
      auto gr = g.row(i);
      for (std::size_t j = 0; j < gr.size(); ++j) dr[j] += gr[j];
    }
  });
}

#define SCHEMANET_INSTANTIATE_OPS(T)                                                           \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                            \
  template Var<T> matmul<T>(Var<T>, Var<T>);                                                   \
  template Var<T> transpose<T>(Var<T>);                                                        \
  template Var<T> add<T>(Var<T>, Var<T>);                                                      \
  template Var<T> sub<T>(Var<T>, Var<T>);                                                      \
  template Var<T> mul<T>(Var<T>, Var<T>);                                                      \
  template Var<T> add_row<T>(Var<T>, Var<T>);                                                  \
  template Var<T> mul_col<T>(Var<T>, Var<T>);                                                  \
  template Var<T> scale<T>(Var<T>, T);                                                         \
  template Var<T> leaky_relu<T>(Var<T>, T);                                                    \
  template Var<T> layer_norm<T>(Var<T>, Var<T>, Var<T>, T);                                    \
  template Var<T> softmax<T>(Var<T>, int);                                                     \
  template Var<T> dropout<T>(Var<T>, T, bool, std::mt19937_64&);                               \
  template Var<T> cross_entropy<T>(Var<T>, std::span<const std::size_t>);                      \
  template Var<T> sum<T>(Var<T>);                                                              \
  template Var<T> mean<T>(Var<T>);                                                             \
  template Var<T> gather_rows<T>(Var<T>, std::span<const std::size_t>);                        \
  template Var<T> scatter_add_rows<T>(Var<T>, std::span<const std::size_t>, std::size_t);      \
  template Var<T> segment_softmax<T>(Var<T>, std::span<const std::size_t>, std::size_t);       \
  template Var<T> slice_rows<T>(Var<T>, std::size_t, std::size_t);                             \
  template Var<T> concat_rows<T>(Var<T>, Var<T>);                                              \
  template Var<T> replace_rows<T>(Var<T>, std::span<const std::size_t>, const Tensor<T>&);

SCHEMANET_INSTANTIATE_OPS(float)
SCHEMANET_INSTANTIATE_OPS(double)

}  // namespace schemanet
