// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "dgamil/tape.hpp"

namespace dgamil {

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

inline Var add(Tape& t, Var a, Var b) {
  if (!a->value.same_shape(b->value))
    throw ShapeError("add: " + a->value.shape_str() + " vs " + b->value.shape_str());
  Tensor y = a->value;
  for (int64_t i = 0; i < y.numel(); ++i) y[i] += b->value[i];
  Var out = t.make(std::move(y), {a, b});
  if (out->needs_grad)
    out->backward = [a, b, out] {
      if (a->needs_grad) {
        Tensor& ga = Tape::ensure_grad(a);
        for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += out->grad[i];
      }
      if (b->needs_grad) {
        Tensor& gb = Tape::ensure_grad(b);
        for (int64_t i = 0; i < gb.numel(); ++i) gb[i] += out->grad[i];
      }
    };
  return out;
}

inline Var sub(Tape& t, Var a, Var b) {
  if (!a->value.same_shape(b->value))
    throw ShapeError("sub: " + a->value.shape_str() + " vs " + b->value.shape_str());
  Tensor y = a->value;
  for (int64_t i = 0; i < y.numel(); ++i) y[i] -= b->value[i];
  Var out = t.make(std::move(y), {a, b});
  if (out->needs_grad)
    out->backward = [a, b, out] {
      if (a->needs_grad) {
        Tensor& ga = Tape::ensure_grad(a);
        for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += out->grad[i];
      }
      if (b->needs_grad) {
        Tensor& gb = Tape::ensure_grad(b);
        for (int64_t i = 0; i < gb.numel(); ++i) gb[i] -= out->grad[i];
      }
    };
  return out;
}

inline Var mul(Tape& t, Var a, Var b) {
  if (!a->value.same_shape(b->value))
    throw ShapeError("mul: " + a->value.shape_str() + " vs " + b->value.shape_str());
  Tensor y = a->value;
  for (int64_t i = 0; i < y.numel(); ++i) y[i] *= b->value[i];
  Var out = t.make(std::move(y), {a, b});
  if (out->needs_grad)
    out->backward = [a, b, out] {
      if (a->needs_grad) {
        Tensor& ga = Tape::ensure_grad(a);
        for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += out->grad[i] * b->value[i];
      }
      if (b->needs_grad) {
        Tensor& gb = Tape::ensure_grad(b);
        for (int64_t i = 0; i < gb.numel(); ++i) gb[i] += out->grad[i] * a->value[i];
      }
    };
  return out;
}

inline Var scale(Tape& t, Var x, double c) {
  Tensor y = x->value;
  for (int64_t i = 0; i < y.numel(); ++i) y[i] *= c;
  Var out = t.make(std::move(y), {x});
  if (out->needs_grad)
    out->backward = [x, out, c] {
      Tensor& gx = Tape::ensure_grad(x);
      for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += c * out->grad[i];
    };
  return out;
}

inline Var relu(Tape& t, Var x) {
  Tensor y = x->value;
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = std::max(0.0, y[i]);
  Var out = t.make(std::move(y), {x});
  if (out->needs_grad)
    out->backward = [x, out] {
      Tensor& gx = Tape::ensure_grad(x);
      for (int64_t i = 0; i < gx.numel(); ++i)
        if (x->value[i] > 0.0) gx[i] += out->grad[i];
    };
  return out;
}

inline Var leaky_relu(Tape& t, Var x, double slope) {
  Tensor y = x->value;
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = y[i] > 0.0 ? y[i] : slope * y[i];
  Var out = t.make(std::move(y), {x});
  if (out->needs_grad)
    out->backward = [x, out, slope] {
      Tensor& gx = Tape::ensure_grad(x);
      for (int64_t i = 0; i < gx.numel(); ++i)
        gx[i] += (x->value[i] > 0.0 ? 1.0 : slope) * out->grad[i];
    };
  return out;
}

// ---------------------------------------------------------------------------
// Shape plumbing
// ---------------------------------------------------------------------------

inline Var reshape(Tape& t, Var x, std::vector<int64_t> shape) {
  if (Tensor::count(shape) != x->value.numel())
    throw ShapeError("reshape: element count mismatch for " + x->value.shape_str());
  Tensor y(std::move(shape), std::vector<double>(x->value.data));
  Var out = t.make(std::move(y), {x});
  if (out->needs_grad)
    out->backward = [x, out] {
      Tensor& gx = Tape::ensure_grad(x);
      for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += out->grad[i];
    };
  return out;
}

inline Var transpose2d(Tape& t, Var x) {
  const int64_t m = x->value.dim(0), n = x->value.dim(1);
  Tensor y({n, m});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) y.at(j, i) = x->value.at(i, j);
  Var out = t.make(std::move(y), {x});
  if (out->needs_grad)
    out->backward = [x, out, m, n] {
      Tensor& gx = Tape::ensure_grad(x);
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) gx.at(i, j) += out->grad.at(j, i);
    };
  return out;
}

inline Var slice_rows(Tape& t, Var x, int64_t lo, int64_t hi) {
  const int64_t n = x->value.dim(0), d = x->value.dim(1);
  if (lo < 0 || hi > n || lo >= hi) throw ShapeError("slice_rows: bad range");
  Tensor y({hi - lo, d});
  std::copy(x->value.ptr() + lo * d, x->value.ptr() + hi * d, y.ptr());
  Var out = t.make(std::move(y), {x});
  if (out->needs_grad)
    out->backward = [x, out, lo, d] {
      Tensor& gx = Tape::ensure_grad(x);
      for (int64_t i = 0; i < out->grad.numel(); ++i) gx[lo * d + i] += out->grad[i];
    };
  return out;
}

inline Var concat_cols(Tape& t, const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: empty input");
  const int64_t n = parts[0]->value.dim(0);
  int64_t dtot = 0;
  for (Var p : parts) {
    if (p->value.dim(0) != n) throw ShapeError("concat_cols: row count mismatch");
    dtot += p->value.dim(1);
  }
  Tensor y({n, dtot});
  int64_t off = 0;
  for (Var p : parts) {
    const int64_t d = p->value.dim(1);
    for (int64_t i = 0; i < n; ++i)
      std::copy(p->value.ptr() + i * d, p->value.ptr() + (i + 1) * d, y.ptr() + i * dtot + off);
    off += d;
  }
  Var out = t.make(std::move(y), parts);
  if (out->needs_grad) {
    std::vector<Var> ps = parts;
    out->backward = [ps, out, n, dtot] {
      int64_t off = 0;
      for (Var p : ps) {
        const int64_t d = p->value.dim(1);
        if (p->needs_grad) {
          Tensor& gp = Tape::ensure_grad(p);
          for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < d; ++j) gp.at(i, j) += out->grad[i * dtot + off + j];
        }
        off += d;
      }
    };
  }
  return out;
}

// Stacks K vectors of identical length d into a [K, d] matrix.
inline Var stack_rows(Tape& t, const std::vector<Var>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows: empty input");
  const int64_t d = rows[0]->value.numel();
  Tensor y({static_cast<int64_t>(rows.size()), d});
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i]->value.numel() != d) throw ShapeError("stack_rows: length mismatch");
    std::copy(rows[i]->value.ptr(), rows[i]->value.ptr() + d, y.ptr() + static_cast<int64_t>(i) * d);
  }
  Var out = t.make(std::move(y), rows);
  if (out->needs_grad) {
    std::vector<Var> rs = rows;
    out->backward = [rs, out, d] {
      for (size_t i = 0; i < rs.size(); ++i) {
        if (!rs[i]->needs_grad) continue;
        Tensor& gr = Tape::ensure_grad(rs[i]);
        for (int64_t j = 0; j < d; ++j) gr[j] += out->grad[static_cast<int64_t>(i) * d + j];
      }
    };
  }
  return out;
}

// Stacks B scalars into a length-B vector.
inline Var stack_scalars(Tape& t, const std::vector<Var>& xs) {
  Tensor y({static_cast<int64_t>(xs.size())});
  for (size_t i = 0; i < xs.size(); ++i) {
    if (xs[i]->value.numel() != 1) throw ShapeError("stack_scalars: non-scalar input");
    y[static_cast<int64_t>(i)] = xs[i]->value[0];
  }
  Var out = t.make(std::move(y), xs);
  if (out->needs_grad) {
    std::vector<Var> vs = xs;
    out->backward = [vs, out] {
      for (size_t i = 0; i < vs.size(); ++i)
        if (vs[i]->needs_grad) Tape::ensure_grad(vs[i])[0] += out->grad[static_cast<int64_t>(i)];
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Var sum_all(Tape& t, Var x) {
  double s = 0.0;
  for (int64_t i = 0; i < x->value.numel(); ++i) s += x->value[i];
  Var out = t.make(Tensor::scalar(s), {x});
  if (out->needs_grad)
    out->backward = [x, out] {
      Tensor& gx = Tape::ensure_grad(x);
      for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += out->grad[0];
    };
  return out;
}

inline Var mean_all(Tape& t, Var x) {
  const double inv = 1.0 / static_cast<double>(x->value.numel());
  double s = 0.0;
  for (int64_t i = 0; i < x->value.numel(); ++i) s += x->value[i];
  Var out = t.make(Tensor::scalar(s * inv), {x});
  if (out->needs_grad)
    out->backward = [x, out, inv] {
      Tensor& gx = Tape::ensure_grad(x);
      for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += inv * out->grad[0];
    };
  return out;
}

// Column means of a [P, C] matrix, accumulated as sum_p (1/P) * x[p][c].
// The multiply-accumulate form matches weighted_pool_rows under a uniform
// score vector bit for bit, which the degenerate-reduction contract relies on.
inline Var gap_rows(Tape& t, Var x) {
  const int64_t p_count = x->value.dim(0), c_count = x->value.dim(1);
  const double w = 1.0 / static_cast<double>(p_count);
  Tensor y({c_count});
  for (int64_t c = 0; c < c_count; ++c) {
    double acc = 0.0;
    for (int64_t p = 0; p < p_count; ++p) acc += w * x->value.at(p, c);
    y[c] = acc;
  }
  Var out = t.make(std::move(y), {x});
  if (out->needs_grad)
    out->backward = [x, out, p_count, c_count, w] {
      Tensor& gx = Tape::ensure_grad(x);
      for (int64_t p = 0; p < p_count; ++p)
        for (int64_t c = 0; c < c_count; ++c) gx.at(p, c) += w * out->grad[c];
    };
  return out;
}

// y[c] = sum_p g[p] * x[p][c]; the shared pooling primitive of both
// aggregators (spatial positions or bag instances as rows).
inline Var weighted_pool_rows(Tape& t, Var x, Var g) {
  const int64_t p_count = x->value.dim(0), c_count = x->value.dim(1);
  if (g->value.numel() != p_count)
    throw ShapeError("weighted_pool_rows: weight length " + g->value.shape_str() +
                     " vs rows " + x->value.shape_str());
  Tensor y({c_count});
  for (int64_t c = 0; c < c_count; ++c) {
    double acc = 0.0;
    for (int64_t p = 0; p < p_count; ++p) acc += g->value[p] * x->value.at(p, c);
    y[c] = acc;
  }
  Var out = t.make(std::move(y), {x, g});
  if (out->needs_grad)
    out->backward = [x, g, out, p_count, c_count] {
      if (x->needs_grad) {
        Tensor& gx = Tape::ensure_grad(x);
        for (int64_t p = 0; p < p_count; ++p)
          for (int64_t c = 0; c < c_count; ++c) gx.at(p, c) += g->value[p] * out->grad[c];
      }
      if (g->needs_grad) {
        Tensor& gg = Tape::ensure_grad(g);
        for (int64_t p = 0; p < p_count; ++p) {
          double acc = 0.0;
          for (int64_t c = 0; c < c_count; ++c) acc += x->value.at(p, c) * out->grad[c];
          gg[p] += acc;
        }
      }
    };
  return out;
}

// Spatial mean per (n, c) of an [N, C, H, W] map, in MAC form.
inline Var gap_spatial(Tape& t, Var x) {
  const int64_t n = x->value.dim(0), c = x->value.dim(1);
  const int64_t hw = x->value.dim(2) * x->value.dim(3);
  const double w = 1.0 / static_cast<double>(hw);
  Tensor y({n, c});
  for (int64_t i = 0; i < n * c; ++i) {
    double acc = 0.0;
    const double* src = x->value.ptr() + i * hw;
    for (int64_t k = 0; k < hw; ++k) acc += w * src[k];
    y[i] = acc;
  }
  Var out = t.make(std::move(y), {x});
  if (out->needs_grad)
    out->backward = [x, out, n, c, hw, w] {
      Tensor& gx = Tape::ensure_grad(x);
      for (int64_t i = 0; i < n * c; ++i)
        for (int64_t k = 0; k < hw; ++k) gx[i * hw + k] += w * out->grad[i];
    };
  return out;
}

// ---------------------------------------------------------------------------
// Softmax / gather-scatter building blocks
// ---------------------------------------------------------------------------

inline Var softmax1d(Tape& t, Var x) {
  const int64_t n = x->value.numel();
  Tensor y({n});
  double mx = x->value[0];
  for (int64_t i = 1; i < n; ++i) mx = std::max(mx, x->value[i]);
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    y[i] = std::exp(x->value[i] - mx);
    s += y[i];
  }
  for (int64_t i = 0; i < n; ++i) y[i] /= s;
  Var out = t.make(std::move(y), {x});
  if (out->needs_grad)
    out->backward = [x, out, n] {
      Tensor& gx = Tape::ensure_grad(x);
      double dot = 0.0;
      for (int64_t i = 0; i < n; ++i) dot += out->grad[i] * out->value[i];
      for (int64_t i = 0; i < n; ++i) gx[i] += out->value[i] * (out->grad[i] - dot);
    };
  return out;
}

inline Var gather_rows(Tape& t, Var x, std::vector<int> idx) {
  const int64_t d = x->value.dim(1);
  Tensor y({static_cast<int64_t>(idx.size()), d});
  for (size_t e = 0; e < idx.size(); ++e)
    std::copy(x->value.ptr() + idx[e] * d, x->value.ptr() + (idx[e] + 1) * d,
              y.ptr() + static_cast<int64_t>(e) * d);
  Var out = t.make(std::move(y), {x});
  if (out->needs_grad)
    out->backward = [x, out, idx = std::move(idx), d] {
      Tensor& gx = Tape::ensure_grad(x);
      for (size_t e = 0; e < idx.size(); ++e)
        for (int64_t j = 0; j < d; ++j)
          gx[idx[e] * d + j] += out->grad[static_cast<int64_t>(e) * d + j];
    };
  return out;
}

// Softmax over contiguous segments of a vector; segment s covers
// [row_ptr[s], row_ptr[s+1]). Used for per-node attention over incoming edges.
inline Var segment_softmax(Tape& t, Var logits, std::vector<int> row_ptr) {
  Tensor y = logits->value;
  const int seg_count = static_cast<int>(row_ptr.size()) - 1;
  for (int s = 0; s < seg_count; ++s) {
    const int lo = row_ptr[s], hi = row_ptr[s + 1];
    if (lo >= hi) throw ShapeError("segment_softmax: node " + std::to_string(s) + " has no incoming edge");
    double mx = y[lo];
    for (int e = lo + 1; e < hi; ++e) mx = std::max(mx, y[e]);
    double sum = 0.0;
    for (int e = lo; e < hi; ++e) {
      y[e] = std::exp(y[e] - mx);
      sum += y[e];
    }
    for (int e = lo; e < hi; ++e) y[e] /= sum;
  }
  Var out = t.make(std::move(y), {logits});
  if (out->needs_grad)
    out->backward = [logits, out, row_ptr = std::move(row_ptr), seg_count] {
      Tensor& gx = Tape::ensure_grad(logits);
      for (int s = 0; s < seg_count; ++s) {
        const int lo = row_ptr[s], hi = row_ptr[s + 1];
        double dot = 0.0;
        for (int e = lo; e < hi; ++e) dot += out->grad[e] * out->value[e];
        for (int e = lo; e < hi; ++e) gx[e] += out->value[e] * (out->grad[e] - dot);
      }
    };
  return out;
}

// Per-segment row sums: y[s] = sum of x rows in [row_ptr[s], row_ptr[s+1]).
inline Var segment_sum_rows(Tape& t, Var x, std::vector<int> row_ptr) {
  const int64_t d = x->value.dim(1);
  const int seg_count = static_cast<int>(row_ptr.size()) - 1;
  Tensor y({seg_count, d});
  for (int s = 0; s < seg_count; ++s)
    for (int e = row_ptr[s]; e < row_ptr[s + 1]; ++e)
      for (int64_t j = 0; j < d; ++j) y.at(s, j) += x->value.at(e, j);
  Var out = t.make(std::move(y), {x});
  if (out->needs_grad)
    out->backward = [x, out, row_ptr = std::move(row_ptr), seg_count, d] {
      Tensor& gx = Tape::ensure_grad(x);
      for (int s = 0; s < seg_count; ++s)
        for (int e = row_ptr[s]; e < row_ptr[s + 1]; ++e)
          for (int64_t j = 0; j < d; ++j) gx.at(e, j) += out->grad.at(s, j);
    };
  return out;
}

inline Var scale_rows(Tape& t, Var x, Var s) {
  const int64_t n = x->value.dim(0), d = x->value.dim(1);
  if (s->value.numel() != n) throw ShapeError("scale_rows: scale length mismatch");
  Tensor y = x->value;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) y.at(i, j) *= s->value[i];
  Var out = t.make(std::move(y), {x, s});
  if (out->needs_grad)
    out->backward = [x, s, out, n, d] {
      if (x->needs_grad) {
        Tensor& gx = Tape::ensure_grad(x);
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < d; ++j) gx.at(i, j) += s->value[i] * out->grad.at(i, j);
      }
      if (s->needs_grad) {
        Tensor& gs = Tape::ensure_grad(s);
        for (int64_t i = 0; i < n; ++i) {
          double acc = 0.0;
          for (int64_t j = 0; j < d; ++j) acc += x->value.at(i, j) * out->grad.at(i, j);
          gs[i] += acc;
        }
      }
    };
  return out;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// Row-wise cosine similarity of two [N, d] matrices. A zero row on either
// side yields similarity 0 with zero gradient.
inline Var cosine_rows(Tape& t, Var a, Var b) {
  if (!a->value.same_shape(b->value))
    throw ShapeError("cosine_rows: " + a->value.shape_str() + " vs " + b->value.shape_str());
  const int64_t n = a->value.dim(0), d = a->value.dim(1);
  Tensor y({n});
  for (int64_t i = 0; i < n; ++i) {
    double dot = 0.0, na2 = 0.0, nb2 = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      const double av = a->value.at(i, j), bv = b->value.at(i, j);
      dot += av * bv;
      na2 += av * av;
      nb2 += bv * bv;
    }
    y[i] = (na2 == 0.0 || nb2 == 0.0) ? 0.0 : dot / (std::sqrt(na2) * std::sqrt(nb2));
  }
  Var out = t.make(std::move(y), {a, b});
  if (out->needs_grad)
    out->backward = [a, b, out, n, d] {
      for (int64_t i = 0; i < n; ++i) {
        double dot = 0.0, na2 = 0.0, nb2 = 0.0;
        for (int64_t j = 0; j < d; ++j) {
          const double av = a->value.at(i, j), bv = b->value.at(i, j);
          dot += av * bv;
          na2 += av * av;
          nb2 += bv * bv;
        }
        if (na2 == 0.0 || nb2 == 0.0) continue;
        const double na = std::sqrt(na2), nb = std::sqrt(nb2);
        const double cosv = dot / (na * nb), g = out->grad[i];
        if (a->needs_grad) {
          Tensor& ga = Tape::ensure_grad(a);
          for (int64_t j = 0; j < d; ++j)
            ga.at(i, j) += g * (b->value.at(i, j) / (na * nb) - cosv * a->value.at(i, j) / na2);
        }
        if (b->needs_grad) {
          Tensor& gb = Tape::ensure_grad(b);
          for (int64_t j = 0; j < d; ++j)
            gb.at(i, j) += g * (a->value.at(i, j) / (na * nb) - cosv * b->value.at(i, j) / nb2);
        }
      }
    };
  return out;
}

// (1/N) * sum (pred_i - target_i)^2 against a constant target vector.
inline Var mse_to_const(Tape& t, Var pred, Tensor target) {
  const int64_t n = pred->value.numel();
  if (target.numel() != n) throw ShapeError("mse_to_const: target length mismatch");
  const double inv = 1.0 / static_cast<double>(n);
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double e = pred->value[i] - target[i];
    s += e * e;
  }
  Var out = t.make(Tensor::scalar(s * inv), {pred});
  if (out->needs_grad)
    out->backward = [pred, out, target = std::move(target), n, inv] {
      Tensor& gp = Tape::ensure_grad(pred);
      for (int64_t i = 0; i < n; ++i)
        gp[i] += out->grad[0] * 2.0 * inv * (pred->value[i] - target[i]);
    };
  return out;
}

}  // namespace dgamil
