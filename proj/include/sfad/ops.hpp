#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "sfad/error.hpp"
#include "sfad/rng.hpp"
#include "sfad/tensor.hpp"

// Differentiable tensor operations. Each op computes its result eagerly and,
// when a tape is active and an input requires grad, records the local
// chain-rule step.

namespace sfad {

namespace detail {

template <typename T>
Tape<T>* recording(std::initializer_list<const Tensor<T>*> inputs) {
  Tape<T>* tape = Tape<T>::active();
  if (!tape) return nullptr;
  for (auto* t : inputs) {
    if (t->requires_grad()) return tape;
  }
  return nullptr;
}

template <typename T>
Tape<T>* recording(const std::vector<Tensor<T>>& inputs) {
  Tape<T>* tape = Tape<T>::active();
  if (!tape) return nullptr;
  for (const auto& t : inputs) {
    if (t.requires_grad()) return tape;
  }
  return nullptr;
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, Tape<T>* tape) {
  Tensor<T> out(std::move(shape), std::move(data));
  if (tape) out.set_requires_grad(true);
  return out;
}

inline Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da == db || db == 1) {
      out[i] = da;
    } else if (da == 1) {
      out[i] = db;
    } else {
      throw DimensionError(std::string(op) + ": shapes " + to_string(a) + " and " + to_string(b) +
                           " are not broadcastable");
    }
  }
  return out;
}

/// Strides of `in` laid over `out` (right-aligned), zero along broadcast axes.
inline std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  const std::size_t lead = out.size() - in.size();
  for (std::size_t i = in.size(); i-- > 0;) {
    if (in[i] != 1) strides[lead + i] = stride;
    stride *= in[i];
  }
  return strides;
}

/// Calls f(out_offset, a_offset, b_offset) for every element of `out`.
template <typename F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t n = numel(out);
  const std::size_t r = out.size();
  if (r == 0) {
    f(0, 0, 0);
    return;
  }
  const std::size_t inner = out[r - 1];
  const std::size_t ja = sa[r - 1];
  const std::size_t jb = sb[r - 1];
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0;
  std::size_t ib = 0;
  for (std::size_t o = 0; o < n; o += inner) {
    for (std::size_t j = 0; j < inner; ++j) f(o + j, ia + j * ja, ib + j * jb);
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

inline std::size_t normalize_axis(long axis, std::size_t rank, const char* op) {
  const long r = static_cast<long>(rank);
  if (axis < -r || axis >= r) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

struct AxisSplit {
  std::size_t outer;
  std::size_t len;
  std::size_t inner;
};

inline AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

// C[m,n] += A[m,k] B[k,n], four rows of C per pass over B. Narrow
// outputs get a compile-time width so the row loop fully vectorizes.
#if defined(__GNUC__) && !defined(__clang__)
#define SFAD_SLP_ONLY __attribute__((optimize("no-tree-loop-vectorize")))
#else
#define SFAD_SLP_ONLY
#endif

template <typename T, std::size_t N>
void gemm_nn_narrow(const T* __restrict a, const T* __restrict b, T* __restrict c, std::size_t m, std::size_t k) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const T* a0 = a + i * k;
    T* c0 = c + i * N;
    for (std::size_t p = 0; p < k; ++p) {
      const T x0 = a0[p], x1 = a0[k + p], x2 = a0[2 * k + p], x3 = a0[3 * k + p];
      const T* brow = b + p * N;
      for (std::size_t j = 0; j < N; ++j) {
        const T bv = brow[j];
        c0[j] += x0 * bv;
        c0[N + j] += x1 * bv;
        c0[2 * N + j] += x2 * bv;
        c0[3 * N + j] += x3 * bv;
      }
    }
  }
  for (; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * N;
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t j = 0; j < N; ++j) crow[j] += arow[p] * b[p * N + j];
  }
}

// Up to 8 columns the unrolled j loop is packed by the SLP vectorizer; loop
// vectorization would otherwise pick the k loop and gather.
template <typename T, std::size_t N>
SFAD_SLP_ONLY void gemm_nn_narrow_slp(const T* __restrict a, const T* __restrict b, T* __restrict c, std::size_t m, std::size_t k) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const T* a0 = a + i * k;
    T* c0 = c + i * N;
    for (std::size_t p = 0; p < k; ++p) {
      const T x0 = a0[p], x1 = a0[k + p], x2 = a0[2 * k + p], x3 = a0[3 * k + p];
      const T* brow = b + p * N;
      for (std::size_t j = 0; j < N; ++j) {
        const T bv = brow[j];
        c0[j] += x0 * bv;
        c0[N + j] += x1 * bv;
        c0[2 * N + j] += x2 * bv;
        c0[3 * N + j] += x3 * bv;
      }
    }
  }
  for (; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * N;
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t j = 0; j < N; ++j) crow[j] += arow[p] * b[p * N + j];
  }
}

template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  switch (n) {
    case 1:
      return gemm_nn_narrow_slp<T, 1>(a, b, c, m, k);
    case 4:
      return gemm_nn_narrow_slp<T, 4>(a, b, c, m, k);
    case 8:
      return gemm_nn_narrow_slp<T, 8>(a, b, c, m, k);
    case 12:
      return gemm_nn_narrow<T, 12>(a, b, c, m, k);
    case 16:
      return gemm_nn_narrow<T, 16>(a, b, c, m, k);
    default:
      break;
  }
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const T* a0 = a + i * k;
    T* c0 = c + i * n;
    T* c1 = c0 + n;
    T* c2 = c1 + n;
    T* c3 = c2 + n;
    for (std::size_t p = 0; p < k; ++p) {
      const T x0 = a0[p], x1 = a0[k + p], x2 = a0[2 * k + p], x3 = a0[3 * k + p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        const T bv = brow[j];
        c0[j] += x0 * bv;
        c1[j] += x1 * bv;
        c2[j] += x2 * bv;
        c3[j] += x3 * bv;
      }
    }
  }
  for (; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// dA[m,k] += dC[m,n] B[k,n]^T, as dC times a transposed copy of B.
template <typename T>
void gemm_nt(const T* dc, const T* b, T* da, std::size_t m, std::size_t k, std::size_t n) {
  thread_local std::vector<T> bt;
  bt.resize(n * k);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  gemm_nn(dc, bt.data(), da, m, n, k);
}

// dB[k,n] += A[m,k]^T dC[m,n], four rows of A per pass over dB.
template <typename T>
void gemm_tn(const T* a, const T* dc, T* db, std::size_t m, std::size_t k, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const T* a0 = a + i * k;
    const T* d0 = dc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T x0 = a0[p], x1 = a0[k + p], x2 = a0[2 * k + p], x3 = a0[3 * k + p];
      T* dbrow = db + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        dbrow[j] += x0 * d0[j] + x1 * d0[n + j] + x2 * d0[2 * n + j] + x3 * d0[3 * n + j];
      }
    }
  }
  for (; i < m; ++i) {
    const T* arow = a + i * k;
    const T* drow = dc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      T* dbrow = db + p * n;
      for (std::size_t j = 0; j < n; ++j) dbrow[j] += av * drow[j];
    }
  }
}

template <typename T, typename Fwd, typename Partials>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* name, Fwd fwd, Partials partials) {
  Tape<T>* tape = recording<T>({&a, &b});
  const bool same = a.shape() == b.shape();
  Shape out_shape = same ? a.shape() : broadcast_shapes(a.shape(), b.shape(), name);
  std::vector<T> out(numel(out_shape));
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<std::size_t> sa;
  std::vector<std::size_t> sb;
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
  } else {
    sa = broadcast_strides(a.shape(), out_shape);
    sb = broadcast_strides(b.shape(), out_shape);
    for_each_broadcast(out_shape, sa, sb,
                       [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = fwd(av[ia], bv[ib]); });
  }
  Tensor<T> result = make_result(out_shape, std::move(out), tape);
  if (tape) {
    tape->record([a, b, result, same, sa, sb, partials]() {
      auto on = result.node();
      if (on->grad.empty()) return;
      auto an = a.node();
      auto bn = b.node();
      const bool ga = an->requires_grad;
      const bool gb = bn->requires_grad;
      if (ga) an->ensure_grad();
      if (gb) bn->ensure_grad();
      auto step = [&](std::size_t o, std::size_t ia, std::size_t ib) {
        const auto [pa, pb] = partials(an->data[ia], bn->data[ib], on->data[o]);
        const T g = on->grad[o];
        if (ga) an->grad[ia] += g * pa;
        if (gb) bn->grad[ib] += g * pb;
      };
      if (same) {
        for (std::size_t i = 0; i < on->data.size(); ++i) step(i, i, i);
      } else {
        for_each_broadcast(on->shape, sa, sb, step);
      }
    });
  }
  return result;
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  Tape<T>* tape = recording<T>({&x});
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  Tensor<T> result = make_result(x.shape(), std::move(out), tape);
  if (tape) {
    tape->record([x, result, deriv]() {
      auto on = result.node();
      if (on->grad.empty()) return;
      auto xn = x.node();
      xn->ensure_grad();
      for (std::size_t i = 0; i < xn->data.size(); ++i) {
        xn->grad[i] += on->grad[i] * deriv(xn->data[i], on->data[i]);
      }
    });
  }
  return result;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      a, b, "add", [](T x, T y) { return x + y; },
      [](T, T, T) { return std::pair<T, T>{T(1), T(1)}; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      a, b, "sub", [](T x, T y) { return x - y; },
      [](T, T, T) { return std::pair<T, T>{T(1), T(-1)}; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      a, b, "mul", [](T x, T y) { return x * y; },
      [](T x, T y, T) { return std::pair<T, T>{y, x}; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      a, b, "div", [](T x, T y) { return x / y; },
      [](T x, T y, T) { return std::pair<T, T>{T(1) / y, -x / (y * y)}; });
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) {
  return add(a, b);
}
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) {
  return sub(a, b);
}
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) {
  return mul(a, b);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return detail::unary(x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return detail::unary(x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

/// 1 - x
template <typename T>
Tensor<T> one_minus(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return T(1) - v; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary(
      x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  Tape<T>* tape = detail::recording<T>({&x});
  T total = T(0);
  for (T v : x.data()) total += v;
  Tensor<T> result = detail::make_result<T>({1}, {total}, tape);
  if (tape) {
    tape->record([x, result]() {
      auto on = result.node();
      if (on->grad.empty()) return;
      auto xn = x.node();
      xn->ensure_grad();
      const T g = on->grad[0];
      for (auto& gv : xn->grad) gv += g;
    });
  }
  return result;
}

/// Sum along one axis.
template <typename T>
Tensor<T> sum(const Tensor<T>& x, long axis, bool keepdim = false) {
  const std::size_t ax = detail::normalize_axis(axis, x.rank(), "sum");
  const auto s = detail::split_at(x.shape(), ax);
  Tape<T>* tape = detail::recording<T>({&x});
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[ax] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<long>(ax));
    if (out_shape.empty()) out_shape = {1};
  }
  std::vector<T> out(s.outer * s.inner, T(0));
  const auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < s.len; ++l)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += xv[(o * s.len + l) * s.inner + i];
  Tensor<T> result = detail::make_result(out_shape, std::move(out), tape);
  if (tape) {
    tape->record([x, result, s]() {
      auto on = result.node();
      if (on->grad.empty()) return;
      auto xn = x.node();
      xn->ensure_grad();
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t l = 0; l < s.len; ++l)
          for (std::size_t i = 0; i < s.inner; ++i) xn->grad[(o * s.len + l) * s.inner + i] += on->grad[o * s.inner + i];
    });
  }
  return result;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, long axis, bool keepdim = false) {
  const std::size_t ax = detail::normalize_axis(axis, x.rank(), "mean");
  return scale(sum(x, axis, keepdim), T(1) / static_cast<T>(x.dim(ax)));
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  Tape<T>* tape = detail::recording<T>({&x});
  Tensor<T> result = detail::make_result(std::move(shape), x.values(), tape);
  if (tape) {
    tape->record([x, result]() {
      auto on = result.node();
      if (on->grad.empty()) return;
      auto xn = x.node();
      xn->ensure_grad();
      for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += on->grad[i];
    });
  }
  return result;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order) {
  const std::size_t r = x.rank();
  if (order.size() != r) throw DimensionError("permute: order rank mismatch for " + to_string(x.shape()));
  std::vector<bool> seen(r, false);
  for (auto o : order) {
    if (o >= r || seen[o]) throw DimensionError("permute: invalid axis order");
    seen[o] = true;
  }
  Shape out_shape(r);
  std::vector<std::size_t> in_strides(r);
  std::size_t stride = 1;
  for (std::size_t i = r; i-- > 0;) {
    in_strides[i] = stride;
    stride *= x.dim(i);
  }
  std::vector<std::size_t> gathered(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = x.dim(order[i]);
    gathered[i] = in_strides[order[i]];
  }
  // map[o] = input offset of output element o
  std::vector<std::size_t> map(x.numel());
  detail::for_each_broadcast(out_shape, gathered, gathered,
                             [&](std::size_t o, std::size_t ia, std::size_t) { map[o] = ia; });
  Tape<T>* tape = detail::recording<T>({&x});
  const auto xv = x.data();
  std::vector<T> out(map.size());
  for (std::size_t o = 0; o < map.size(); ++o) out[o] = xv[map[o]];
  Tensor<T> result = detail::make_result(out_shape, std::move(out), tape);
  if (tape) {
    tape->record([x, result, map = std::move(map)]() {
      auto on = result.node();
      if (on->grad.empty()) return;
      auto xn = x.node();
      xn->ensure_grad();
      for (std::size_t o = 0; o < map.size(); ++o) xn->grad[map[o]] += on->grad[o];
    });
  }
  return result;
}

/// Swaps the last two axes.
template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() < 2) throw DimensionError("transpose: rank < 2");
  std::vector<std::size_t> order(x.rank());
  std::iota(order.begin(), order.end(), 0);
  std::swap(order[x.rank() - 1], order[x.rank() - 2]);
  return permute(x, order);
}

/// Broadcasts `x` to `shape` (right-aligned, numpy rules).
template <typename T>
Tensor<T> expand(const Tensor<T>& x, const Shape& shape) {
  const Shape check = detail::broadcast_shapes(x.shape(), shape, "expand");
  if (check != shape) {
    throw DimensionError("expand: " + to_string(x.shape()) + " cannot expand to " + to_string(shape));
  }
  const auto sx = detail::broadcast_strides(x.shape(), shape);
  Tape<T>* tape = detail::recording<T>({&x});
  const auto xv = x.data();
  std::vector<T> out(numel(shape));
  detail::for_each_broadcast(shape, sx, sx, [&](std::size_t o, std::size_t ix, std::size_t) { out[o] = xv[ix]; });
  Tensor<T> result = detail::make_result(shape, std::move(out), tape);
  if (tape) {
    tape->record([x, result, sx]() {
      auto on = result.node();
      if (on->grad.empty()) return;
      auto xn = x.node();
      xn->ensure_grad();
      detail::for_each_broadcast(on->shape, sx, sx,
                                 [&](std::size_t o, std::size_t ix, std::size_t) { xn->grad[ix] += on->grad[o]; });
    });
  }
  return result;
}

/// Concatenation along `axis`; the backward pass routes gradient slices back
/// to each source.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, long axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const std::size_t ax = detail::normalize_axis(axis, parts[0].rank(), "concat");
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    if (p.rank() != parts[0].rank()) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < p.rank(); ++i) {
      if (i != ax && p.dim(i) != parts[0].dim(i)) {
        throw DimensionError("concat: shapes " + to_string(parts[0].shape()) + " and " + to_string(p.shape()) +
                             " differ off axis " + std::to_string(ax));
      }
    }
    out_shape[ax] += p.dim(ax);
  }
  const auto s = detail::split_at(out_shape, ax);
  Tape<T>* tape = detail::recording(parts);
  std::vector<T> out(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    const std::size_t chunk = p.dim(ax) * s.inner;
    const auto pv = p.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(pv.begin() + static_cast<long>(o * chunk), chunk,
                  out.begin() + static_cast<long>(o * s.len * s.inner + at * s.inner));
    }
    at += p.dim(ax);
  }
  Tensor<T> result = detail::make_result(out_shape, std::move(out), tape);
  if (tape) {
    tape->record([parts, result, offsets, s, ax]() {
      auto on = result.node();
      if (on->grad.empty()) return;
      for (std::size_t k = 0; k < parts.size(); ++k) {
        auto pn = parts[k].node();
        if (!pn->requires_grad) continue;
        pn->ensure_grad();
        const std::size_t chunk = pn->shape[ax] * s.inner;
        for (std::size_t o = 0; o < s.outer; ++o) {
          const T* src = on->grad.data() + o * s.len * s.inner + offsets[k] * s.inner;
          T* dst = pn->grad.data() + o * chunk;
          for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return result;
}

/// Elements [start, start + length) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, long axis, std::size_t start, std::size_t length) {
  const std::size_t ax = detail::normalize_axis(axis, x.rank(), "slice");
  if (length == 0 || start + length > x.dim(ax)) {
    throw DimensionError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") outside axis of size " + std::to_string(x.dim(ax)));
  }
  const auto s = detail::split_at(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape[ax] = length;
  Tape<T>* tape = detail::recording<T>({&x});
  const auto xv = x.data();
  const std::size_t chunk = length * s.inner;
  std::vector<T> out(s.outer * chunk);
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(xv.begin() + static_cast<long>((o * s.len + start) * s.inner), chunk,
                out.begin() + static_cast<long>(o * chunk));
  }
  Tensor<T> result = detail::make_result(out_shape, std::move(out), tape);
  if (tape) {
    tape->record([x, result, s, start, chunk]() {
      auto on = result.node();
      if (on->grad.empty()) return;
      auto xn = x.node();
      xn->ensure_grad();
      for (std::size_t o = 0; o < s.outer; ++o) {
        T* dst = xn->grad.data() + (o * s.len + start) * s.inner;
        const T* src = on->grad.data() + o * chunk;
        for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
      }
    });
  }
  return result;
}

/// Rows of `table` selected along axis 0; backward scatters into the table.
template <typename T>
Tensor<T> gather(const Tensor<T>& table, const std::vector<std::size_t>& rows) {
  if (rows.empty()) throw DimensionError("gather: empty index list");
  const std::size_t row_size = table.numel() / table.dim(0);
  for (auto r : rows) {
    if (r >= table.dim(0)) {
      throw LookupError("gather: index " + std::to_string(r) + " outside table of " + std::to_string(table.dim(0)) +
                        " rows");
    }
  }
  Shape out_shape = table.shape();
  out_shape[0] = rows.size();
  Tape<T>* tape = detail::recording<T>({&table});
  const auto tv = table.data();
  std::vector<T> out(rows.size() * row_size);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(tv.begin() + static_cast<long>(rows[i] * row_size), row_size,
                out.begin() + static_cast<long>(i * row_size));
  }
  Tensor<T> result = detail::make_result(out_shape, std::move(out), tape);
  if (tape) {
    tape->record([table, result, rows, row_size]() {
      auto on = result.node();
      if (on->grad.empty()) return;
      auto tn = table.node();
      tn->ensure_grad();
      for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < row_size; ++j) tn->grad[rows[i] * row_size + j] += on->grad[i * row_size + j];
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Linear algebra

/// Batched matrix product: [..., m, k] x [..., k, n] -> [..., m, n], with
/// numpy-style broadcasting over the leading dimensions.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw DimensionError("matmul: operands must have rank >= 2, got " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  const std::size_t m = a.dim(a.rank() - 2);
  const std::size_t k = a.dim(a.rank() - 1);
  const std::size_t n = b.dim(b.rank() - 1);
  if (b.dim(b.rank() - 2) != k) {
    throw DimensionError("matmul: inner dimensions differ for " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  const Shape abatch(a.shape().begin(), a.shape().end() - 2);
  const Shape bbatch(b.shape().begin(), b.shape().end() - 2);
  Shape batch;
  try {
    batch = detail::broadcast_shapes(abatch, bbatch, "matmul");
  } catch (const DimensionError&) {
    throw DimensionError("matmul: batch dimensions of " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                         " are not broadcastable");
  }
  std::vector<std::pair<std::size_t, std::size_t>> offsets;
  std::size_t rows = m;  // rows per block; a shared right operand folds the batch into one block
  if (numel(bbatch) == 1 && numel(abatch) == numel(batch)) {
    rows = m * numel(batch);
    offsets.emplace_back(0, 0);
  } else {
    const auto sa = detail::broadcast_strides(abatch, batch);
    const auto sb = detail::broadcast_strides(bbatch, batch);
    offsets.reserve(numel(batch));
    detail::for_each_broadcast(batch, sa, sb, [&](std::size_t, std::size_t ia, std::size_t ib) {
      offsets.emplace_back(ia * m * k, ib * k * n);
    });
  }

  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tape<T>* tape = detail::recording<T>({&a, &b});
  std::vector<T> out(numel(out_shape), T(0));
  const T* ap = a.data().data();
  const T* bp = b.data().data();
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    detail::gemm_nn(ap + offsets[i].first, bp + offsets[i].second, out.data() + i * rows * n, rows, k, n);
  }
  Tensor<T> result = detail::make_result(out_shape, std::move(out), tape);
  if (tape) {
    tape->record([a, b, result, offsets = std::move(offsets), rows, k, n]() {
      auto on = result.node();
      if (on->grad.empty()) return;
      auto an = a.node();
      auto bn = b.node();
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < offsets.size(); ++i) {
          detail::gemm_nt(on->grad.data() + i * rows * n, bn->data.data() + offsets[i].second,
                          an->grad.data() + offsets[i].first, rows, k, n);
        }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < offsets.size(); ++i) {
          detail::gemm_tn(an->data.data() + offsets[i].first, on->grad.data() + i * rows * n,
                          bn->grad.data() + offsets[i].second, rows, k, n);
        }
      }
    });
  }
  return result;
}

/// Numerically stable softmax along `axis`.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, long axis) {
  const std::size_t ax = detail::normalize_axis(axis, x.rank(), "softmax");
  const auto s = detail::split_at(x.shape(), ax);
  Tape<T>* tape = detail::recording<T>({&x});
  const auto xv = x.data();
  std::vector<T> out(x.numel());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      T mx = xv[base];
      for (std::size_t l = 1; l < s.len; ++l) mx = std::max(mx, xv[base + l * s.inner]);
      T total = T(0);
      for (std::size_t l = 0; l < s.len; ++l) {
        const T e = std::exp(xv[base + l * s.inner] - mx);
        out[base + l * s.inner] = e;
        total += e;
      }
      for (std::size_t l = 0; l < s.len; ++l) out[base + l * s.inner] /= total;
    }
  }
  Tensor<T> result = detail::make_result(x.shape(), std::move(out), tape);
  if (tape) {
    tape->record([x, result, s]() {
      auto on = result.node();
      if (on->grad.empty()) return;
      auto xn = x.node();
      xn->ensure_grad();
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
          const std::size_t base = o * s.len * s.inner + i;
          T dot = T(0);
          for (std::size_t l = 0; l < s.len; ++l) dot += on->grad[base + l * s.inner] * on->data[base + l * s.inner];
          for (std::size_t l = 0; l < s.len; ++l) {
            const std::size_t j = base + l * s.inner;
            xn->grad[j] += on->data[j] * (on->grad[j] - dot);
          }
        }
      }
    });
  }
  return result;
}

/// Inverted dropout: survivors are scaled by 1/(1-rate) so evaluation mode
/// is the identity.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, Rng& rng) {
  if (!(rate >= 0.0) || rate >= 1.0) {
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(x.numel());
  for (auto& m : mask) m = rng.uniform() < rate ? T(0) : keep_scale;
  return mul(x, Tensor<T>(x.shape(), std::move(mask)));
}

// ---------------------------------------------------------------------------
// Constants

template <typename T>
Tensor<T> identity(std::size_t n) {
  Tensor<T> eye = Tensor<T>::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) eye[i * n + i] = T(1);
  return eye;
}

/// 0/1 mask keeping the k largest entries of every row of the last axis.
/// Ties go to the lower column index. The mask carries no gradient.
template <typename T>
Tensor<T> topk_mask(const Tensor<T>& scores, std::size_t k) {
  const std::size_t cols = scores.dim(scores.rank() - 1);
  if (k > cols) {
    throw ConfigError("top-k: k = " + std::to_string(k) + " exceeds row length " + std::to_string(cols));
  }
  const std::size_t rows = scores.numel() / cols;
  std::vector<T> mask(scores.numel(), T(0));
  std::vector<std::size_t> order(cols);
  const auto sv = scores.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = sv.data() + r * cols;
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [row](std::size_t i, std::size_t j) { return row[i] > row[j]; });
    for (std::size_t i = 0; i < k; ++i) mask[r * cols + order[i]] = T(1);
  }
  return Tensor<T>(scores.shape(), std::move(mask));
}

/// Casts values to another precision; the result is a fresh leaf.
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& x) {
  std::vector<To> out(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<To>(xv[i]);
  return Tensor<To>(x.shape(), std::move(out));
}

}  // namespace sfad
