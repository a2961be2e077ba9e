// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <cmath>
#include <memory>
#include <vector>

#include "dgamil/ops.hpp"
#include "dgamil/threading.hpp"

namespace dgamil {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

// y = x * w (+ b). x is [N, din], w is [din, dout], b is [dout] or nullptr.
inline Var linear(Tape& t, Var x, Var w, Var b = nullptr) {
  const int64_t n = x->value.dim(0), din = x->value.dim(1);
  if (w->value.dim(0) != din)
    throw ShapeError("linear: input width " + std::to_string(din) + " vs weight " +
                     w->value.shape_str());
  const int64_t dout = w->value.dim(1);
  Tensor y({n, dout});
  {
    CMapMat X(x->value.ptr(), n, din), W(w->value.ptr(), din, dout);
    MapMat Y(y.ptr(), n, dout);
    Y.noalias() = X * W;
    if (b) {
      if (b->value.numel() != dout) throw ShapeError("linear: bias length mismatch");
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < dout; ++j) y.at(i, j) += b->value[j];
    }
  }
  Var out = b ? t.make(std::move(y), {x, w, b}) : t.make(std::move(y), {x, w});
  if (out->needs_grad)
    out->backward = [x, w, b, out, n, din, dout] {
      CMapMat dY(out->grad.ptr(), n, dout);
      if (x->needs_grad) {
        MapMat GX(Tape::ensure_grad(x).ptr(), n, din);
        CMapMat W(w->value.ptr(), din, dout);
        GX.noalias() += dY * W.transpose();
      }
      if (w->needs_grad) {
        MapMat GW(Tape::ensure_grad(w).ptr(), din, dout);
        CMapMat X(x->value.ptr(), n, din);
        GW.noalias() += X.transpose() * dY;
      }
      if (b && b->needs_grad) {
        Tensor& gb = Tape::ensure_grad(b);
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < dout; ++j) gb[j] += out->grad.at(i, j);
      }
    };
  return out;
}

namespace detail {

// Writes the [Hout*Wout, Cin*kh*kw] patch matrix of image n.
inline void im2col(const Tensor& x, int64_t n, int kh, int kw, int pad, double* col) {
  const int64_t cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t hout = h + 2 * pad - kh + 1, wout = w + 2 * pad - kw + 1;
  const int64_t kk = static_cast<int64_t>(kh) * kw;
  for (int64_t oh = 0; oh < hout; ++oh)
    for (int64_t ow = 0; ow < wout; ++ow) {
      double* row = col + (oh * wout + ow) * cin * kk;
      for (int64_t ci = 0; ci < cin; ++ci)
        for (int r = 0; r < kh; ++r)
          for (int s = 0; s < kw; ++s) {
            const int64_t ih = oh - pad + r, iw = ow - pad + s;
            row[ci * kk + r * kw + s] =
                (ih >= 0 && ih < h && iw >= 0 && iw < w) ? x.at(n, ci, ih, iw) : 0.0;
          }
    }
}

inline void col2im_add(Tensor& gx, int64_t n, int kh, int kw, int pad, const double* col) {
  const int64_t cin = gx.dim(1), h = gx.dim(2), w = gx.dim(3);
  const int64_t hout = h + 2 * pad - kh + 1, wout = w + 2 * pad - kw + 1;
  const int64_t kk = static_cast<int64_t>(kh) * kw;
  for (int64_t oh = 0; oh < hout; ++oh)
    for (int64_t ow = 0; ow < wout; ++ow) {
      const double* row = col + (oh * wout + ow) * cin * kk;
      for (int64_t ci = 0; ci < cin; ++ci)
        for (int r = 0; r < kh; ++r)
          for (int s = 0; s < kw; ++s) {
            const int64_t ih = oh - pad + r, iw = ow - pad + s;
            if (ih >= 0 && ih < h && iw >= 0 && iw < w)
              gx.at(n, ci, ih, iw) += row[ci * kk + r * kw + s];
          }
    }
}

}  // namespace detail

// Stride-1 2D convolution via im2col. x is [N, Cin, H, W], w is
// [Cout, Cin, kh, kw], b is [Cout] or nullptr. Parallel across images; weight
// and bias gradients are reduced serially in image order so results do not
// depend on the thread count.
inline Var conv2d(Tape& t, Var x, Var w, Var b, int pad) {
  const int64_t n = x->value.dim(0), cin = x->value.dim(1);
  const int64_t h = x->value.dim(2), wd = x->value.dim(3);
  if (w->value.dim(1) != cin)
    throw ShapeError("conv2d: input channels " + std::to_string(cin) + " vs weight " +
                     w->value.shape_str());
  const int64_t cout = w->value.dim(0);
  const int kh = static_cast<int>(w->value.dim(2)), kw = static_cast<int>(w->value.dim(3));
  const int64_t hout = h + 2 * pad - kh + 1, wout = wd + 2 * pad - kw + 1;
  if (hout <= 0 || wout <= 0) throw ShapeError("conv2d: kernel exceeds padded input");
  const int64_t kk = cin * kh * kw, hw = hout * wout;

  Tensor y({n, cout, hout, wout});
  parallel_for(n, [&](int64_t i) {
    std::vector<double> col(static_cast<size_t>(hw * kk));
    detail::im2col(x->value, i, kh, kw, pad, col.data());
    RowMat Y(hw, cout);
    CMapMat C(col.data(), hw, kk), W(w->value.ptr(), cout, kk);
    Y.noalias() = C * W.transpose();
    for (int64_t co = 0; co < cout; ++co)
      for (int64_t p = 0; p < hw; ++p)
        y.ptr()[((i * cout + co) * hw) + p] = Y(p, co) + (b ? b->value[co] : 0.0);
  });

  Var out = b ? t.make(std::move(y), {x, w, b}) : t.make(std::move(y), {x, w});
  if (out->needs_grad)
    out->backward = [x, w, b, out, n, cout, kh, kw, pad, kk, hw] {
      const bool need_x = x->needs_grad, need_w = w->needs_grad;
      const bool need_b = b && b->needs_grad;
      Tensor* gx = need_x ? &Tape::ensure_grad(x) : nullptr;
      std::vector<RowMat> w_part;
      std::vector<std::vector<double>> b_part;
      if (need_w) w_part.assign(static_cast<size_t>(n), RowMat());
      if (need_b) b_part.assign(static_cast<size_t>(n), {});
      parallel_for(n, [&](int64_t i) {
        RowMat dY(hw, cout);
        for (int64_t co = 0; co < cout; ++co)
          for (int64_t p = 0; p < hw; ++p) dY(p, co) = out->grad.ptr()[(i * cout + co) * hw + p];
        std::vector<double> col;
        if (need_w || need_x) {
          col.resize(static_cast<size_t>(hw * kk));
          detail::im2col(x->value, i, kh, kw, pad, col.data());
        }
        if (need_w) {
          CMapMat C(col.data(), hw, kk);
          w_part[static_cast<size_t>(i)].resize(cout, kk);
          w_part[static_cast<size_t>(i)].noalias() = dY.transpose() * C;
        }
        if (need_b) {
          auto& part = b_part[static_cast<size_t>(i)];
          part.assign(static_cast<size_t>(cout), 0.0);
          for (int64_t p = 0; p < hw; ++p)
            for (int64_t co = 0; co < cout; ++co) part[static_cast<size_t>(co)] += dY(p, co);
        }
        if (need_x) {
          RowMat dC(hw, kk);
          CMapMat W(w->value.ptr(), cout, kk);
          dC.noalias() = dY * W;
          detail::col2im_add(*gx, i, kh, kw, pad, dC.data());
        }
      });
      if (need_w) {
        MapMat GW(Tape::ensure_grad(w).ptr(), cout, kk);
        for (int64_t i = 0; i < n; ++i) GW += w_part[static_cast<size_t>(i)];
      }
      if (need_b) {
        Tensor& gb = Tape::ensure_grad(b);
        for (int64_t i = 0; i < n; ++i)
          for (int64_t co = 0; co < cout; ++co) gb[co] += b_part[static_cast<size_t>(i)][static_cast<size_t>(co)];
      }
    };
  return out;
}

// 2x2 max pooling with stride 2; ties resolve to the first maximum in scan
// order.
inline Var maxpool2x2(Tape& t, Var x) {
  const int64_t n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
  if (h % 2 != 0 || w % 2 != 0)
    throw ShapeError("maxpool2x2: spatial size " + x->value.shape_str() + " not even");
  const int64_t ho = h / 2, wo = w / 2;
  Tensor y({n, c, ho, wo});
  auto idx = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(n * c * ho * wo));
  parallel_for(n, [&](int64_t i) {
    for (int64_t ci = 0; ci < c; ++ci)
      for (int64_t oh = 0; oh < ho; ++oh)
        for (int64_t ow = 0; ow < wo; ++ow) {
          double best = -std::numeric_limits<double>::infinity();
          int64_t best_at = -1;
          for (int dh = 0; dh < 2; ++dh)
            for (int dw = 0; dw < 2; ++dw) {
              const int64_t flat = ((i * c + ci) * h + 2 * oh + dh) * w + 2 * ow + dw;
              if (x->value[flat] > best) {
                best = x->value[flat];
                best_at = flat;
              }
            }
          const int64_t oflat = ((i * c + ci) * ho + oh) * wo + ow;
          y[oflat] = best;
          (*idx)[static_cast<size_t>(oflat)] = best_at;
        }
  });
  Var out = t.make(std::move(y), {x});
  if (out->needs_grad)
    out->backward = [x, out, idx] {
      Tensor& gx = Tape::ensure_grad(x);
      for (size_t o = 0; o < idx->size(); ++o) gx[(*idx)[o]] += out->grad[static_cast<int64_t>(o)];
    };
  return out;
}

// Batch normalization over (N, H, W) per channel. Training mode normalizes
// with current batch statistics and updates the running buffers in place
// (momentum 0.1 by default, unbiased variance stored); eval mode uses the
// frozen running statistics. Channel reductions are combined serially in
// image order.
inline Var batchnorm2d(Tape& t, Var x, Var gamma, Var beta, Tensor& running_mean,
                       Tensor& running_var, bool training, double momentum = 0.1,
                       double eps = 1e-5) {
  const int64_t n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
  if (gamma->value.numel() != c || beta->value.numel() != c || running_mean.numel() != c ||
      running_var.numel() != c)
    throw ShapeError("batchnorm2d: parameter length mismatch for " + std::to_string(c) + " channels");
  const int64_t hw = h * w, m = n * hw;

  Tensor mean({c}), invstd({c});
  if (training) {
    std::vector<double> psum(static_cast<size_t>(n * c), 0.0), psq(static_cast<size_t>(n * c), 0.0);
    parallel_for(n, [&](int64_t i) {
      for (int64_t ci = 0; ci < c; ++ci) {
        const double* src = x->value.ptr() + (i * c + ci) * hw;
        double s = 0.0, sq = 0.0;
        for (int64_t k = 0; k < hw; ++k) {
          s += src[k];
          sq += src[k] * src[k];
        }
        psum[static_cast<size_t>(i * c + ci)] = s;
        psq[static_cast<size_t>(i * c + ci)] = sq;
      }
    });
    for (int64_t ci = 0; ci < c; ++ci) {
      double s = 0.0, sq = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        s += psum[static_cast<size_t>(i * c + ci)];
        sq += psq[static_cast<size_t>(i * c + ci)];
      }
      const double mu = s / static_cast<double>(m);
      const double var = std::max(0.0, sq / static_cast<double>(m) - mu * mu);
      mean[ci] = mu;
      invstd[ci] = 1.0 / std::sqrt(var + eps);
      const double var_unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
      running_mean[ci] = (1.0 - momentum) * running_mean[ci] + momentum * mu;
      running_var[ci] = (1.0 - momentum) * running_var[ci] + momentum * var_unbiased;
    }
  } else {
    for (int64_t ci = 0; ci < c; ++ci) {
      mean[ci] = running_mean[ci];
      invstd[ci] = 1.0 / std::sqrt(running_var[ci] + eps);
    }
  }

  Tensor y({n, c, h, w});
  parallel_for(n, [&](int64_t i) {
    for (int64_t ci = 0; ci < c; ++ci) {
      const double* src = x->value.ptr() + (i * c + ci) * hw;
      double* dst = y.ptr() + (i * c + ci) * hw;
      const double g = gamma->value[ci], bta = beta->value[ci], mu = mean[ci], is = invstd[ci];
      for (int64_t k = 0; k < hw; ++k) dst[k] = g * (src[k] - mu) * is + bta;
    }
  });

  Var out = t.make(std::move(y), {x, gamma, beta});
  if (out->needs_grad)
    out->backward = [x, gamma, beta, out, mean = std::move(mean), invstd = std::move(invstd), n, c,
                     hw, m, training] {
      // Per-channel reductions of dy and dy*xhat, image-partial then serial.
      std::vector<double> pdb(static_cast<size_t>(n * c), 0.0), pdg(static_cast<size_t>(n * c), 0.0);
      parallel_for(n, [&](int64_t i) {
        for (int64_t ci = 0; ci < c; ++ci) {
          const double* src = x->value.ptr() + (i * c + ci) * hw;
          const double* dy = out->grad.ptr() + (i * c + ci) * hw;
          const double mu = mean[ci], is = invstd[ci];
          double sb = 0.0, sg = 0.0;
          for (int64_t k = 0; k < hw; ++k) {
            sb += dy[k];
            sg += dy[k] * (src[k] - mu) * is;
          }
          pdb[static_cast<size_t>(i * c + ci)] = sb;
          pdg[static_cast<size_t>(i * c + ci)] = sg;
        }
      });
      std::vector<double> db(static_cast<size_t>(c), 0.0), dg(static_cast<size_t>(c), 0.0);
      for (int64_t ci = 0; ci < c; ++ci)
        for (int64_t i = 0; i < n; ++i) {
          db[static_cast<size_t>(ci)] += pdb[static_cast<size_t>(i * c + ci)];
          dg[static_cast<size_t>(ci)] += pdg[static_cast<size_t>(i * c + ci)];
        }
      if (beta->needs_grad) {
        Tensor& gb = Tape::ensure_grad(beta);
        for (int64_t ci = 0; ci < c; ++ci) gb[ci] += db[static_cast<size_t>(ci)];
      }
      if (gamma->needs_grad) {
        Tensor& gg = Tape::ensure_grad(gamma);
        for (int64_t ci = 0; ci < c; ++ci) gg[ci] += dg[static_cast<size_t>(ci)];
      }
      if (x->needs_grad) {
        Tensor& gx = Tape::ensure_grad(x);
        const double invm = 1.0 / static_cast<double>(m);
        parallel_for(n, [&](int64_t i) {
          for (int64_t ci = 0; ci < c; ++ci) {
            const double* src = x->value.ptr() + (i * c + ci) * hw;
            const double* dy = out->grad.ptr() + (i * c + ci) * hw;
            double* dst = gx.ptr() + (i * c + ci) * hw;
            const double g = gamma->value[ci], mu = mean[ci], is = invstd[ci];
            const double mdb = db[static_cast<size_t>(ci)] * invm, mdg = dg[static_cast<size_t>(ci)] * invm;
            if (training) {
              for (int64_t k = 0; k < hw; ++k) {
                const double xhat = (src[k] - mu) * is;
                dst[k] += g * is * (dy[k] - mdb - xhat * mdg);
              }
            } else {
              for (int64_t k = 0; k < hw; ++k) dst[k] += g * is * dy[k];
            }
          }
        });
      }
    };
  return out;
}

// Layer normalization across the feature dimension of [N, d] rows.
inline Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps = 1e-5) {
  const int64_t n = x->value.dim(0), d = x->value.dim(1);
  if (gamma->value.numel() != d || beta->value.numel() != d)
    throw ShapeError("layer_norm: parameter length mismatch");
  Tensor y({n, d}), mean({n}), invstd({n});
  for (int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < d; ++j) s += x->value.at(i, j);
    const double mu = s / static_cast<double>(d);
    double v = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      const double e = x->value.at(i, j) - mu;
      v += e * e;
    }
    const double is = 1.0 / std::sqrt(v / static_cast<double>(d) + eps);
    mean[i] = mu;
    invstd[i] = is;
    for (int64_t j = 0; j < d; ++j)
      y.at(i, j) = gamma->value[j] * (x->value.at(i, j) - mu) * is + beta->value[j];
  }
  Var out = t.make(std::move(y), {x, gamma, beta});
  if (out->needs_grad)
    out->backward = [x, gamma, beta, out, mean = std::move(mean), invstd = std::move(invstd), n, d] {
      for (int64_t i = 0; i < n; ++i) {
        const double mu = mean[i], is = invstd[i];
        double m1 = 0.0, m2 = 0.0;
        for (int64_t j = 0; j < d; ++j) {
          const double xhat = (x->value.at(i, j) - mu) * is;
          const double g = out->grad.at(i, j) * gamma->value[j];
          m1 += g;
          m2 += g * xhat;
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        for (int64_t j = 0; j < d; ++j) {
          const double xhat = (x->value.at(i, j) - mu) * is;
          const double g = out->grad.at(i, j) * gamma->value[j];
          if (x->needs_grad) Tape::ensure_grad(x).at(i, j) += is * (g - m1 - xhat * m2);
          if (gamma->needs_grad) Tape::ensure_grad(gamma)[j] += out->grad.at(i, j) * xhat;
          if (beta->needs_grad) Tape::ensure_grad(beta)[j] += out->grad.at(i, j);
        }
      }
    };
  return out;
}

}  // namespace dgamil
