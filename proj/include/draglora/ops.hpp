#pragma once

// Differentiable tensor ops recorded on a Tape. Feature maps are C x H x W;
// matrices are 2-D row-major. Dense products go through Eigen.

#include <Eigen/Core>
#include <cmath>
#include <memory>

#include "draglora/autodiff.hpp"

namespace draglora::ops {

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapR = Eigen::Map<MatR<T>>;
template <class T>
using CMapR = Eigen::Map<const MatR<T>>;

namespace detail {

template <class T>
CMapR<T> as_mat(const Tensor<T>& t, int rows, int cols) {
  return CMapR<T>(t.ptr(), rows, cols);
}
template <class T>
MapR<T> as_mat(Tensor<T>& t, int rows, int cols) {
  return MapR<T>(t.ptr(), rows, cols);
}

template <class T>
void accumulate(Tape<T>& tape, Var<T> v, const Tensor<T>& g) {
  if (!v.valid() || !v.requires_grad()) return;
  Tensor<T>& dst = tape.grad_buffer(v.id);
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Var<T> axpby(T a, Var<T> x, T b, Var<T> y) {
  Tape<T>& tape = *x.tape;
  Tensor<T> out = draglora::axpby(a, x.value(), b, y.value());
  const int oid = static_cast<int>(tape.node_count());
  return tape.record(std::move(out), {x, y}, [&tape, x, y, a, b, oid] {
    const Tensor<T>& g = tape.grad(oid);
    if (x.requires_grad()) {
      Tensor<T>& dx = tape.grad_buffer(x.id);
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += a * g[i];
    }
    if (y.requires_grad()) {
      Tensor<T>& dy = tape.grad_buffer(y.id);
      for (std::size_t i = 0; i < g.size(); ++i) dy[i] += b * g[i];
    }
  });
}

template <class T>
Var<T> add(Var<T> x, Var<T> y) {
  return axpby(T(1), x, T(1), y);
}
template <class T>
Var<T> sub(Var<T> x, Var<T> y) {
  return axpby(T(1), x, T(-1), y);
}

template <class T>
Var<T> scale(Var<T> x, T s) {
  Tape<T>& tape = *x.tape;
  Tensor<T> out = x.value();
  for (auto& v : out.data) v *= s;
  const int oid = static_cast<int>(tape.node_count());
  return tape.record(std::move(out), {x}, [&tape, x, s, oid] {
    const Tensor<T>& g = tape.grad(oid);
    Tensor<T>& dx = tape.grad_buffer(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += s * g[i];
  });
}

template <class T>
Var<T> silu(Var<T> x) {
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape);
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const T s = T(1) / (T(1) + std::exp(-xv[i]));
    out[i] = xv[i] * s;
  }
  const int oid = static_cast<int>(tape.node_count());
  return tape.record(std::move(out), {x}, [&tape, x, oid] {
    const Tensor<T>& g = tape.grad(oid);
    const Tensor<T>& xv = x.value();
    Tensor<T>& dx = tape.grad_buffer(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T s = T(1) / (T(1) + std::exp(-xv[i]));
      dx[i] += g[i] * s * (T(1) + xv[i] * (T(1) - s));
    }
  });
}

// x: [C, ...], bias: C values (any shape with C elements).
template <class T>
Var<T> add_channel_bias(Var<T> x, Var<T> bias) {
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = x.value();
  const int C = xv.dim(0);
  detail::require(static_cast<int>(bias.size()) == C, "add_channel_bias: bias size mismatch");
  const std::size_t inner = xv.size() / static_cast<std::size_t>(C);
  Tensor<T> out = xv;
  const Tensor<T>& bv = bias.value();
  for (int c = 0; c < C; ++c) {
    T* o = out.ptr() + static_cast<std::size_t>(c) * inner;
    for (std::size_t i = 0; i < inner; ++i) o[i] += bv[static_cast<std::size_t>(c)];
  }
  const int oid = static_cast<int>(tape.node_count());
  return tape.record(std::move(out), {x, bias}, [&tape, x, bias, C, inner, oid] {
    const Tensor<T>& g = tape.grad(oid);
    detail::accumulate(tape, x, g);
    if (bias.requires_grad()) {
      Tensor<T>& db = tape.grad_buffer(bias.id);
      for (int c = 0; c < C; ++c) {
        const T* gp = g.ptr() + static_cast<std::size_t>(c) * inner;
        T s = T(0);
        for (std::size_t i = 0; i < inner; ++i) s += gp[i];
        db[static_cast<std::size_t>(c)] += s;
      }
    }
  });
}

template <class T>
Var<T> reshape(Var<T> x, std::vector<int> shape) {
  Tape<T>& tape = *x.tape;
  detail::require(shape_numel(shape) == x.size(), "reshape: element count mismatch");
  Tensor<T> out(std::move(shape), x.value().data);
  const int oid = static_cast<int>(tape.node_count());
  return tape.record(std::move(out), {x}, [&tape, x, oid] {
    const Tensor<T>& g = tape.grad(oid);
    Tensor<T>& dx = tape.grad_buffer(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

// [m,k] x [k,n] -> [m,n]
template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& tape = *a.tape;
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  detail::require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0),
                  "matmul: incompatible shapes " + shape_str(av.shape) + " x " + shape_str(bv.shape));
  const int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor<T> out({m, n});
  detail::as_mat(out, m, n).noalias() = detail::as_mat(av, m, k) * detail::as_mat(bv, k, n);
  const int oid = static_cast<int>(tape.node_count());
  return tape.record(std::move(out), {a, b}, [&tape, a, b, m, k, n, oid] {
    const Tensor<T>& g = tape.grad(oid);
    auto G = detail::as_mat(g, m, n);
    if (a.requires_grad()) {
      detail::as_mat(tape.grad_buffer(a.id), m, k).noalias() += G * detail::as_mat(b.value(), k, n).transpose();
    }
    if (b.requires_grad()) {
      detail::as_mat(tape.grad_buffer(b.id), k, n).noalias() += detail::as_mat(a.value(), m, k).transpose() * G;
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution

namespace detail {

template <class T>
void im2col(const T* x, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo, T* cols) {
  const int N = Ho * Wo;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = cols + static_cast<std::size_t>((c * k + ky) * k + kx) * N;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          T* r = row + oy * Wo;
          if (iy < 0 || iy >= H) {
            std::fill(r, r + Wo, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(c) * H + iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            r[ox] = (ix >= 0 && ix < W) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const T* cols, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo, T* x) {
  const int N = Ho * Wo;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = cols + static_cast<std::size_t>((c * k + ky) * k + kx) * N;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          T* dst = x + (static_cast<std::size_t>(c) * H + iy) * W;
          const T* r = row + oy * Wo;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < W) dst[ix] += r[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// x: [C,H,W], w: [O,C,k,k], bias: [O] or invalid Var.
template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> bias, int stride = 1, int pad = 0) {
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  detail::require(xv.rank() == 3 && wv.rank() == 4 && wv.dim(1) == xv.dim(0) && wv.dim(2) == wv.dim(3),
                  "conv2d: incompatible shapes " + shape_str(xv.shape) + " * " + shape_str(wv.shape));
  const int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  const int O = wv.dim(0), k = wv.dim(2);
  const int Ho = (H + 2 * pad - k) / stride + 1;
  const int Wo = (W + 2 * pad - k) / stride + 1;
  const int K = C * k * k, N = Ho * Wo;
  const bool direct = (k == 1 && stride == 1 && pad == 0);

  std::shared_ptr<Tensor<T>> cols;
  const T* colp = xv.ptr();
  if (!direct) {
    cols = std::make_shared<Tensor<T>>(std::vector<int>{K, N});
    detail::im2col(xv.ptr(), C, H, W, k, stride, pad, Ho, Wo, cols->ptr());
    colp = cols->ptr();
  }
  Tensor<T> out({O, Ho, Wo});
  auto Y = detail::as_mat(out, O, N);
  Y.noalias() = detail::as_mat(wv, O, K) * CMapR<T>(colp, K, N);
  if (bias.valid()) {
    const Tensor<T>& bv = bias.value();
    detail::require(static_cast<int>(bv.size()) == O, "conv2d: bias size mismatch");
    for (int o = 0; o < O; ++o) Y.row(o).array() += bv[static_cast<std::size_t>(o)];
  }
  const int oid = static_cast<int>(tape.node_count());
  return tape.record(std::move(out), {x, w, bias}, [&tape, x, w, bias, cols, C, H, W, O, k, K, N, Ho, Wo, stride, pad, direct, oid] {
    const Tensor<T>& g = tape.grad(oid);
    auto G = detail::as_mat(g, O, N);
    if (w.requires_grad()) {
      const T* cp = direct ? x.value().ptr() : cols->ptr();
      detail::as_mat(tape.grad_buffer(w.id), O, K).noalias() += G * CMapR<T>(cp, K, N).transpose();
    }
    if (bias.valid() && bias.requires_grad()) {
      Tensor<T>& db = tape.grad_buffer(bias.id);
      for (int o = 0; o < O; ++o) db[static_cast<std::size_t>(o)] += G.row(o).sum();
    }
    if (x.requires_grad()) {
      Tensor<T>& dx = tape.grad_buffer(x.id);
      if (direct) {
        detail::as_mat(dx, K, N).noalias() += detail::as_mat(w.value(), O, K).transpose() * G;
      } else {
        MatR<T> dcols = detail::as_mat(w.value(), O, K).transpose() * G;
        detail::col2im(dcols.data(), C, H, W, k, stride, pad, Ho, Wo, dx.ptr());
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization

// Group normalization over [C,H,W] with per-channel affine (gamma, beta: C values).
template <class T>
Var<T> group_norm(Var<T> x, Var<T> gamma, Var<T> beta, int groups, double eps = 1e-5) {
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = x.value();
  const int C = xv.dim(0);
  detail::require(groups > 0 && C % groups == 0, "group_norm: channels not divisible by groups");
  const std::size_t HW = xv.size() / static_cast<std::size_t>(C);
  const int cpg = C / groups;
  const std::size_t M = HW * static_cast<std::size_t>(cpg);

  auto xhat = std::make_shared<Tensor<T>>(xv.shape);
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(groups));
  Tensor<T> out(xv.shape);
  const Tensor<T>& gv = gamma.value();
  const Tensor<T>& bv = beta.value();
  for (int gi = 0; gi < groups; ++gi) {
    const std::size_t off = static_cast<std::size_t>(gi) * M;
    double mean = 0.0;
    for (std::size_t i = 0; i < M; ++i) mean += static_cast<double>(xv[off + i]);
    mean /= static_cast<double>(M);
    double var = 0.0;
    for (std::size_t i = 0; i < M; ++i) {
      const double d = static_cast<double>(xv[off + i]) - mean;
      var += d * d;
    }
    var /= static_cast<double>(M);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(gi)] = inv;
    for (int cc = 0; cc < cpg; ++cc) {
      const std::size_t c = static_cast<std::size_t>(gi * cpg + cc);
      for (std::size_t i = 0; i < HW; ++i) {
        const std::size_t idx = c * HW + i;
        const T xh = static_cast<T>((static_cast<double>(xv[idx]) - mean) * inv);
        (*xhat)[idx] = xh;
        out[idx] = xh * gv[c] + bv[c];
      }
    }
  }
  const int oid = static_cast<int>(tape.node_count());
  return tape.record(std::move(out), {x, gamma, beta}, [&tape, x, gamma, beta, xhat, inv_std, groups, cpg, HW, M, oid] {
    const Tensor<T>& g = tape.grad(oid);
    const Tensor<T>& gv = gamma.value();
    const bool need_x = x.requires_grad();
    for (int gi = 0; gi < groups; ++gi) {
      double sum_d = 0.0;
      double sum_dx = 0.0;
      for (int cc = 0; cc < cpg; ++cc) {
        const std::size_t c = static_cast<std::size_t>(gi * cpg + cc);
        double sg = 0.0, sgx = 0.0;
        for (std::size_t i = 0; i < HW; ++i) {
          const std::size_t idx = c * HW + i;
          sg += static_cast<double>(g[idx]);
          sgx += static_cast<double>(g[idx]) * static_cast<double>((*xhat)[idx]);
        }
        if (gamma.requires_grad()) tape.grad_buffer(gamma.id)[c] += static_cast<T>(sgx);
        if (beta.requires_grad()) tape.grad_buffer(beta.id)[c] += static_cast<T>(sg);
        sum_d += sg * static_cast<double>(gv[c]);
        sum_dx += sgx * static_cast<double>(gv[c]);
      }
      if (!need_x) continue;
      Tensor<T>& dx = tape.grad_buffer(x.id);
      const double inv = (*inv_std)[static_cast<std::size_t>(gi)];
      const double Md = static_cast<double>(M);
      for (int cc = 0; cc < cpg; ++cc) {
        const std::size_t c = static_cast<std::size_t>(gi * cpg + cc);
        for (std::size_t i = 0; i < HW; ++i) {
          const std::size_t idx = c * HW + i;
          const double dxh = static_cast<double>(g[idx]) * static_cast<double>(gv[c]);
          dx[idx] += static_cast<T>(inv / Md * (Md * dxh - sum_d - static_cast<double>((*xhat)[idx]) * sum_dx));
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Attention

// Single-head scaled dot-product attention over tokens stored column-wise:
// q, k, v: [C, N]. Returns [C, N] with out[:, i] = sum_j softmax_j(q_i . k_j * s) v[:, j].
template <class T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v) {
  Tape<T>& tape = *q.tape;
  const Tensor<T>& qv = q.value();
  detail::require(qv.rank() == 2 && k.shape() == qv.shape && v.value().rank() == 2 && v.value().dim(1) == qv.dim(1),
                  "attention: shape mismatch");
  const int C = qv.dim(0), N = qv.dim(1), Cv = v.value().dim(0);
  const T s = T(1) / std::sqrt(static_cast<T>(C));
  auto P = std::make_shared<MatR<T>>(N, N);
  P->noalias() = detail::as_mat(qv, C, N).transpose() * detail::as_mat(k.value(), C, N);
  for (int i = 0; i < N; ++i) {
    auto row = P->row(i);
    row *= s;
    const T mx = row.maxCoeff();
    row = (row.array() - mx).exp();
    row /= row.sum();
  }
  Tensor<T> out({Cv, N});
  detail::as_mat(out, Cv, N).noalias() = detail::as_mat(v.value(), Cv, N) * P->transpose();
  const int oid = static_cast<int>(tape.node_count());
  return tape.record(std::move(out), {q, k, v}, [&tape, q, k, v, P, C, N, Cv, s, oid] {
    auto G = detail::as_mat(tape.grad(oid), Cv, N);
    if (v.requires_grad()) detail::as_mat(tape.grad_buffer(v.id), Cv, N).noalias() += G * (*P);
    if (!q.requires_grad() && !k.requires_grad()) return;
    MatR<T> dP = G.transpose() * detail::as_mat(v.value(), Cv, N);
    // dS = P * (dP - rowsum(dP * P))
    MatR<T> dS(N, N);
    for (int i = 0; i < N; ++i) {
      const T dot = (dP.row(i).array() * P->row(i).array()).sum();
      dS.row(i) = P->row(i).array() * (dP.row(i).array() - dot);
    }
    dS *= s;
    if (q.requires_grad()) detail::as_mat(tape.grad_buffer(q.id), C, N).noalias() += detail::as_mat(k.value(), C, N) * dS.transpose();
    if (k.requires_grad()) detail::as_mat(tape.grad_buffer(k.id), C, N).noalias() += detail::as_mat(q.value(), C, N) * dS;
  });
}

// ---------------------------------------------------------------------------
// Resampling

template <class T>
Var<T> upsample_nearest2x(Var<T> x) {
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = x.value();
  const int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  Tensor<T> out({C, 2 * H, 2 * W});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < 2 * H; ++y)
      for (int xx = 0; xx < 2 * W; ++xx) out.at(c, y, xx) = xv.at(c, y / 2, xx / 2);
  const int oid = static_cast<int>(tape.node_count());
  return tape.record(std::move(out), {x}, [&tape, x, C, H, W, oid] {
    const Tensor<T>& g = tape.grad(oid);
    Tensor<T>& dx = tape.grad_buffer(x.id);
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < 2 * H; ++y)
        for (int xx = 0; xx < 2 * W; ++xx) dx.at(c, y / 2, xx / 2) += g.at(c, y, xx);
  });
}

template <class T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  Tape<T>& tape = *a.tape;
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  detail::require(av.rank() == 3 && bv.rank() == 3 && av.dim(1) == bv.dim(1) && av.dim(2) == bv.dim(2),
                  "concat_channels: spatial mismatch");
  Tensor<T> out({av.dim(0) + bv.dim(0), av.dim(1), av.dim(2)});
  std::copy(av.data.begin(), av.data.end(), out.data.begin());
  std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(av.size()));
  const std::size_t na = av.size();
  const int oid = static_cast<int>(tape.node_count());
  return tape.record(std::move(out), {a, b}, [&tape, a, b, na, oid] {
    const Tensor<T>& g = tape.grad(oid);
    if (a.requires_grad()) {
      Tensor<T>& da = tape.grad_buffer(a.id);
      for (std::size_t i = 0; i < na; ++i) da[i] += g[i];
    }
    if (b.requires_grad()) {
      Tensor<T>& db = tape.grad_buffer(b.id);
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += g[na + i];
    }
  });
}

namespace detail {

// Bilinear tap for a continuous coordinate clamped into [0, n-1].
struct Tap {
  int i0, i1;
  double w0, w1;
};

inline Tap bilinear_tap(double p, int n) {
  p = std::clamp(p, 0.0, static_cast<double>(n - 1));
  const int i0 = static_cast<int>(std::floor(p));
  const int i1 = std::min(i0 + 1, n - 1);
  const double f = p - i0;
  return {i0, i1, 1.0 - f, f};
}

}  // namespace detail

// Bilinear resize with half-pixel centers. Returns `x` itself when sizes already match.
template <class T>
Var<T> resize_bilinear(Var<T> x, int Ho, int Wo) {
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = x.value();
  const int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  if (H == Ho && W == Wo) return x;
  std::vector<detail::Tap> ty(static_cast<std::size_t>(Ho)), tx(static_cast<std::size_t>(Wo));
  for (int y = 0; y < Ho; ++y) ty[static_cast<std::size_t>(y)] = detail::bilinear_tap((y + 0.5) * H / Ho - 0.5, H);
  for (int xx = 0; xx < Wo; ++xx) tx[static_cast<std::size_t>(xx)] = detail::bilinear_tap((xx + 0.5) * W / Wo - 0.5, W);
  Tensor<T> out({C, Ho, Wo});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < Ho; ++y)
      for (int xx = 0; xx < Wo; ++xx) {
        const auto& a = ty[static_cast<std::size_t>(y)];
        const auto& b = tx[static_cast<std::size_t>(xx)];
        out.at(c, y, xx) = static_cast<T>(a.w0 * (b.w0 * xv.at(c, a.i0, b.i0) + b.w1 * xv.at(c, a.i0, b.i1)) +
                                          a.w1 * (b.w0 * xv.at(c, a.i1, b.i0) + b.w1 * xv.at(c, a.i1, b.i1)));
      }
  const int oid = static_cast<int>(tape.node_count());
  return tape.record(std::move(out), {x}, [&tape, x, ty, tx, C, Ho, Wo, oid] {
    const Tensor<T>& g = tape.grad(oid);
    Tensor<T>& dx = tape.grad_buffer(x.id);
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < Ho; ++y)
        for (int xx = 0; xx < Wo; ++xx) {
          const auto& a = ty[static_cast<std::size_t>(y)];
          const auto& b = tx[static_cast<std::size_t>(xx)];
          const double gv = static_cast<double>(g.at(c, y, xx));
          dx.at(c, a.i0, b.i0) += static_cast<T>(gv * a.w0 * b.w0);
          dx.at(c, a.i0, b.i1) += static_cast<T>(gv * a.w0 * b.w1);
          dx.at(c, a.i1, b.i0) += static_cast<T>(gv * a.w1 * b.w0);
          dx.at(c, a.i1, b.i1) += static_cast<T>(gv * a.w1 * b.w1);
        }
  });
}

// ---------------------------------------------------------------------------
// Scalar reductions (results have shape [1])

// sum |x - ref| (or the mean when `mean` is set); ref carries no gradient.
template <class T>
Var<T> l1_to_const(Var<T> x, const Tensor<T>& ref, bool mean) {
  Tape<T>& tape = *x.tape;
  require_same_shape(x.value(), ref, "l1_to_const");
  const Tensor<T>& xv = x.value();
  double s = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) s += std::abs(static_cast<double>(xv[i]) - static_cast<double>(ref[i]));
  const double norm = mean ? static_cast<double>(xv.size()) : 1.0;
  auto sign = std::make_shared<std::vector<T>>(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const T d = xv[i] - ref[i];
    (*sign)[i] = static_cast<T>((d > T(0)) - (d < T(0)));
  }
  const int oid = static_cast<int>(tape.node_count());
  return tape.record(Tensor<T>({1}, std::vector<T>{static_cast<T>(s / norm)}), {x}, [&tape, x, sign, norm, oid] {
    const T g = tape.grad(oid)[0] / static_cast<T>(norm);
    Tensor<T>& dx = tape.grad_buffer(x.id);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g * (*sign)[i];
  });
}

// sum_i w_i |x_i - ref_i| with constant weights.
template <class T>
Var<T> weighted_l1(Var<T> x, const Tensor<T>& ref, const Tensor<T>& weights) {
  Tape<T>& tape = *x.tape;
  require_same_shape(x.value(), ref, "weighted_l1");
  require_same_shape(x.value(), weights, "weighted_l1 weights");
  const Tensor<T>& xv = x.value();
  double s = 0.0;
  auto coef = std::make_shared<std::vector<T>>(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const T d = xv[i] - ref[i];
    s += static_cast<double>(weights[i]) * std::abs(static_cast<double>(d));
    (*coef)[i] = weights[i] * static_cast<T>((d > T(0)) - (d < T(0)));
  }
  const int oid = static_cast<int>(tape.node_count());
  return tape.record(Tensor<T>({1}, std::vector<T>{static_cast<T>(s)}), {x}, [&tape, x, coef, oid] {
    const T g = tape.grad(oid)[0];
    Tensor<T>& dx = tape.grad_buffer(x.id);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g * (*coef)[i];
  });
}

// <c, x> with constant c.
template <class T>
Var<T> dot_const(Var<T> x, const Tensor<T>& c) {
  Tape<T>& tape = *x.tape;
  require_same_shape(x.value(), c, "dot_const");
  double s = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) s += static_cast<double>(c[i]) * static_cast<double>(x.value()[i]);
  auto cc = std::make_shared<Tensor<T>>(c);
  const int oid = static_cast<int>(tape.node_count());
  return tape.record(Tensor<T>({1}, std::vector<T>{static_cast<T>(s)}), {x}, [&tape, x, cc, oid] {
    const T g = tape.grad(oid)[0];
    Tensor<T>& dx = tape.grad_buffer(x.id);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g * (*cc)[i];
  });
}

// mean (x - target)^2
template <class T>
Var<T> mse_to_const(Var<T> x, const Tensor<T>& target) {
  Tape<T>& tape = *x.tape;
  require_same_shape(x.value(), target, "mse_to_const");
  const Tensor<T>& xv = x.value();
  double s = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double d = static_cast<double>(xv[i]) - static_cast<double>(target[i]);
    s += d * d;
  }
  const double n = static_cast<double>(xv.size());
  auto tgt = std::make_shared<Tensor<T>>(target);
  const int oid = static_cast<int>(tape.node_count());
  return tape.record(Tensor<T>({1}, std::vector<T>{static_cast<T>(s / n)}), {x}, [&tape, x, tgt, n, oid] {
    const T g = static_cast<T>(2.0 / n) * tape.grad(oid)[0];
    const Tensor<T>& xv = x.value();
    Tensor<T>& dx = tape.grad_buffer(x.id);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g * (xv[i] - (*tgt)[i]);
  });
}

}  // namespace draglora::ops
