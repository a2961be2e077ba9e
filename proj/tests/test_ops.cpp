// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch.hpp>

#include "dgamil/nn_ops.hpp"
#include "dgamil/ops.hpp"
#include "testers.hpp"

using namespace dgamil;
using dgamil::testing::fd_max_rel_err;
using dgamil::testing::random_tensor;

namespace {

// Projects a tensor-valued output to a scalar with fixed random weights so
// gradient checks exercise every output element.
Var project(Tape& t, Var out, const Tensor& proj) {
  Var p = t.leaf(proj);
  return sum_all(t, mul(t, out, p));
}

}  // namespace

TEST_CASE("elementwise chain gradients", "[ops]") {
  Rng rng(7);
  Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
  Tensor proj = random_tensor({3, 4}, rng);
  Tensor ga, gb;
  auto run = [&](bool grads) {
    Tape t;
    Var va = t.leaf(a, grads), vb = t.leaf(b, grads);
    Var y = mul(t, leaky_relu(t, sub(t, mul(t, va, vb), scale(t, va, 0.3)), 0.2),
                relu(t, add(t, va, vb)));
    Var loss = project(t, y, proj);
    if (grads) {
      t.backward(loss);
      ga = va->grad;
      gb = vb->grad;
    }
    return loss->value[0];
  };
  run(true);
  REQUIRE(fd_max_rel_err({&a, &b}, [&] { return run(false); }, {ga, gb}) < 1e-6);
}

TEST_CASE("linear gradients", "[ops]") {
  Rng rng(11);
  Tensor x = random_tensor({4, 3}, rng), w = random_tensor({3, 5}, rng),
         b = random_tensor({5}, rng);
  Tensor proj = random_tensor({4, 5}, rng);
  Tensor gx, gw, gb;
  auto run = [&](bool grads) {
    Tape t;
    Var vx = t.leaf(x, grads), vw = t.leaf(w, grads), vb = t.leaf(b, grads);
    Var loss = project(t, linear(t, vx, vw, vb), proj);
    if (grads) {
      t.backward(loss);
      gx = vx->grad;
      gw = vw->grad;
      gb = vb->grad;
    }
    return loss->value[0];
  };
  run(true);
  REQUIRE(fd_max_rel_err({&x, &w, &b}, [&] { return run(false); }, {gx, gw, gb}) < 1e-6);
}

TEST_CASE("conv2d 3x3 and 1x1 gradients", "[ops]") {
  Rng rng(13);
  for (int kernel : {3, 1}) {
    Tensor x = random_tensor({2, 2, 4, 4}, rng);
    Tensor w = random_tensor({3, 2, kernel, kernel}, rng, 0.5);
    Tensor b = random_tensor({3}, rng);
    const int pad = kernel == 3 ? 1 : 0;
    Tensor proj = random_tensor({2, 3, 4, 4}, rng);
    Tensor gx, gw, gb;
    auto run = [&](bool grads) {
      Tape t;
      Var vx = t.leaf(x, grads), vw = t.leaf(w, grads), vb = t.leaf(b, grads);
      Var loss = project(t, conv2d(t, vx, vw, vb, pad), proj);
      if (grads) {
        t.backward(loss);
        gx = vx->grad;
        gw = vw->grad;
        gb = vb->grad;
      }
      return loss->value[0];
    };
    run(true);
    REQUIRE(fd_max_rel_err({&x, &w, &b}, [&] { return run(false); }, {gx, gw, gb}) < 1e-6);
  }
}

TEST_CASE("conv2d matches direct convolution", "[ops]") {
  Rng rng(17);
  Tensor x = random_tensor({1, 2, 5, 5}, rng), w = random_tensor({2, 2, 3, 3}, rng),
         b = random_tensor({2}, rng);
  Tape t;
  Var y = conv2d(t, t.leaf(x), t.leaf(w), t.leaf(b), 1);
  for (int co = 0; co < 2; ++co)
    for (int oh = 0; oh < 5; ++oh)
      for (int ow = 0; ow < 5; ++ow) {
        double acc = b[co];
        for (int ci = 0; ci < 2; ++ci)
          for (int r = 0; r < 3; ++r)
            for (int s = 0; s < 3; ++s) {
              const int ih = oh - 1 + r, iw = ow - 1 + s;
              if (ih >= 0 && ih < 5 && iw >= 0 && iw < 5)
                acc += w.at(co, ci, r, s) * x.at(0, ci, ih, iw);
            }
        REQUIRE(y->value.at(0, co, oh, ow) == Approx(acc).epsilon(1e-12));
      }
}

TEST_CASE("maxpool gradients and values", "[ops]") {
  Rng rng(19);
  Tensor x = random_tensor({2, 3, 4, 6}, rng);
  Tensor proj = random_tensor({2, 3, 2, 3}, rng);
  Tensor gx;
  auto run = [&](bool grads) {
    Tape t;
    Var vx = t.leaf(x, grads);
    Var loss = project(t, maxpool2x2(t, vx), proj);
    if (grads) {
      t.backward(loss);
      gx = vx->grad;
    }
    return loss->value[0];
  };
  run(true);
  REQUIRE(fd_max_rel_err({&x}, [&] { return run(false); }, {gx}) < 1e-6);

  Tape t;
  Var y = maxpool2x2(t, t.leaf(x));
  REQUIRE(y->value.at(0, 0, 0, 0) ==
          std::max({x.at(0, 0, 0, 0), x.at(0, 0, 0, 1), x.at(0, 0, 1, 0), x.at(0, 0, 1, 1)}));
  REQUIRE_THROWS_AS([&] {
    Tape t2;
    Tensor odd({1, 1, 3, 4});
    maxpool2x2(t2, t2.leaf(odd));
  }(), ShapeError);
}

TEST_CASE("batchnorm training and eval gradients", "[ops]") {
  Rng rng(23);
  Tensor x = random_tensor({3, 2, 3, 3}, rng), gamma = random_tensor({2}, rng),
         beta = random_tensor({2}, rng);
  Tensor proj = random_tensor({3, 2, 3, 3}, rng);
  for (bool training : {true, false}) {
    Tensor rmean = Tensor::zeros({2}), rvar = Tensor::full({2}, 1.0);
    rmean[0] = 0.2;
    rvar[1] = 2.5;
    Tensor gx, gg, gb;
    auto run = [&](bool grads) {
      Tensor rm = rmean, rv = rvar;  // keep buffers fixed across FD evaluations
      Tape t;
      Var vx = t.leaf(x, grads), vg = t.leaf(gamma, grads), vb = t.leaf(beta, grads);
      Var loss = project(t, batchnorm2d(t, vx, vg, vb, rm, rv, training), proj);
      if (grads) {
        t.backward(loss);
        gx = vx->grad;
        gg = vg->grad;
        gb = vb->grad;
      }
      return loss->value[0];
    };
    run(true);
    REQUIRE(fd_max_rel_err({&x, &gamma, &beta}, [&] { return run(false); }, {gx, gg, gb}) < 1e-5);
  }
}

TEST_CASE("batchnorm normalizes batch in training mode", "[ops]") {
  Rng rng(29);
  Tensor x = random_tensor({4, 3, 2, 2}, rng, 3.0);
  Tensor gamma = Tensor::full({3}, 1.0), beta = Tensor::zeros({3});
  Tensor rm = Tensor::zeros({3}), rv = Tensor::full({3}, 1.0);
  Tape t;
  Var y = batchnorm2d(t, t.leaf(x), t.leaf(gamma), t.leaf(beta), rm, rv, true);
  for (int c = 0; c < 3; ++c) {
    double s = 0.0, sq = 0.0;
    int m = 0;
    for (int n = 0; n < 4; ++n)
      for (int h = 0; h < 2; ++h)
        for (int w = 0; w < 2; ++w) {
          const double v = y->value.at(n, c, h, w);
          s += v;
          sq += v * v;
          ++m;
        }
    REQUIRE(s / m == Approx(0.0).margin(1e-10));
    REQUIRE(sq / m == Approx(1.0).epsilon(1e-3));  // eps shifts variance slightly
  }
  // Running buffers moved toward batch stats with momentum 0.1.
  REQUIRE(rm[0] != 0.0);
  REQUIRE(rv[0] != 1.0);
}

TEST_CASE("layer_norm gradients", "[ops]") {
  Rng rng(31);
  Tensor x = random_tensor({4, 6}, rng), gamma = random_tensor({6}, rng),
         beta = random_tensor({6}, rng);
  Tensor proj = random_tensor({4, 6}, rng);
  Tensor gx, gg, gb;
  auto run = [&](bool grads) {
    Tape t;
    Var vx = t.leaf(x, grads), vg = t.leaf(gamma, grads), vb = t.leaf(beta, grads);
    Var loss = project(t, layer_norm(t, vx, vg, vb), proj);
    if (grads) {
      t.backward(loss);
      gx = vx->grad;
      gg = vg->grad;
      gb = vb->grad;
    }
    return loss->value[0];
  };
  run(true);
  REQUIRE(fd_max_rel_err({&x, &gamma, &beta}, [&] { return run(false); }, {gx, gg, gb}) < 1e-5);
}

TEST_CASE("softmax1d and segment_softmax", "[ops]") {
  Rng rng(37);
  Tensor x = random_tensor({6}, rng);
  Tensor proj = random_tensor({6}, rng);
  Tensor gx;
  auto run = [&](bool grads) {
    Tape t;
    Var vx = t.leaf(x, grads);
    Var loss = project(t, softmax1d(t, vx), proj);
    if (grads) {
      t.backward(loss);
      gx = vx->grad;
    }
    return loss->value[0];
  };
  run(true);
  REQUIRE(fd_max_rel_err({&x}, [&] { return run(false); }, {gx}) < 1e-6);

  // segment softmax equals per-segment softmax1d and rows sum to one
  std::vector<int> row_ptr{0, 3, 4, 6};
  Tensor gs;
  auto run_seg = [&](bool grads) {
    Tape t;
    Var vx = t.leaf(x, grads);
    Var loss = project(t, segment_softmax(t, vx, row_ptr), proj);
    if (grads) {
      t.backward(loss);
      gs = vx->grad;
    }
    return loss->value[0];
  };
  run_seg(true);
  REQUIRE(fd_max_rel_err({&x}, [&] { return run_seg(false); }, {gs}) < 1e-6);
  Tape t;
  Var y = segment_softmax(t, t.leaf(x), row_ptr);
  for (size_t s = 0; s + 1 < row_ptr.size(); ++s) {
    double sum = 0.0;
    for (int e = row_ptr[s]; e < row_ptr[s + 1]; ++e) {
      sum += y->value[e];
      REQUIRE(y->value[e] > 0.0);
    }
    REQUIRE(sum == Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("gather/segment_sum/scale_rows gradients", "[ops]") {
  Rng rng(41);
  Tensor x = random_tensor({4, 3}, rng), s = random_tensor({5}, rng);
  std::vector<int> idx{0, 2, 2, 3, 1};
  std::vector<int> row_ptr{0, 2, 3, 5};
  Tensor proj = random_tensor({3, 3}, rng);
  Tensor gx, gs;
  auto run = [&](bool grads) {
    Tape t;
    Var vx = t.leaf(x, grads), vs = t.leaf(s, grads);
    Var g = gather_rows(t, vx, idx);
    Var w = scale_rows(t, g, vs);
    Var loss = project(t, segment_sum_rows(t, w, row_ptr), proj);
    if (grads) {
      t.backward(loss);
      gx = vx->grad;
      gs = vs->grad;
    }
    return loss->value[0];
  };
  run(true);
  REQUIRE(fd_max_rel_err({&x, &s}, [&] { return run(false); }, {gx, gs}) < 1e-6);
}

TEST_CASE("cosine_rows values and gradients", "[ops]") {
  Tape t;
  Tensor a({3, 2}, {1, 0, 2, 0, 1, 1});
  Tensor b({3, 2}, {0, 1, -2, 0, 2, 2});
  Var y = cosine_rows(t, t.leaf(a), t.leaf(b));
  REQUIRE(y->value[0] == Approx(0.0).margin(1e-12));
  REQUIRE(y->value[1] == Approx(-1.0).epsilon(1e-12));
  REQUIRE(y->value[2] == Approx(1.0).epsilon(1e-12));

  // zero vector: similarity 0, gradient 0
  Tensor z({1, 2}, {0, 0});
  Tensor w({1, 2}, {3, 4});
  Tape t2;
  Var vz = t2.leaf(z, true), vw = t2.leaf(w, true);
  Var c = sum_all(t2, cosine_rows(t2, vz, vw));
  REQUIRE(c->value[0] == 0.0);
  t2.backward(c);
  REQUIRE(vw->grad.numel() == 0);  // nothing propagated

  Rng rng(43);
  Tensor ra = random_tensor({4, 5}, rng), rb = random_tensor({4, 5}, rng);
  Tensor proj = random_tensor({4}, rng);
  Tensor ga, gb;
  auto run = [&](bool grads) {
    Tape tt;
    Var va = tt.leaf(ra, grads), vb = tt.leaf(rb, grads);
    Var loss = project(tt, cosine_rows(tt, va, vb), proj);
    if (grads) {
      tt.backward(loss);
      ga = va->grad;
      gb = vb->grad;
    }
    return loss->value[0];
  };
  run(true);
  REQUIRE(fd_max_rel_err({&ra, &rb}, [&] { return run(false); }, {ga, gb}) < 1e-5);
}

TEST_CASE("mse_to_const value and gradient", "[ops]") {
  Tape t;
  Tensor pred({2}, {1, 3});
  Tensor target({2}, {2, 5});
  Var vp = t.leaf(pred, true);
  Var loss = mse_to_const(t, vp, target);
  REQUIRE(loss->value[0] == Approx(2.5).epsilon(1e-12));
  t.backward(loss);
  // d/dy0 = 2*(y0 - y)/N
  REQUIRE(vp->grad[0] == Approx(2.0 * (1 - 2) / 2.0).epsilon(1e-12));
  REQUIRE(vp->grad[1] == Approx(2.0 * (3 - 5) / 2.0).epsilon(1e-12));

  Rng rng(47);
  Tensor rp = random_tensor({6}, rng), rt = random_tensor({6}, rng);
  Tensor g;
  auto run = [&](bool grads) {
    Tape tt;
    Var v = tt.leaf(rp, grads);
    Var l = mse_to_const(tt, v, rt);
    if (grads) {
      tt.backward(l);
      g = v->grad;
    }
    return l->value[0];
  };
  run(true);
  REQUIRE(fd_max_rel_err({&rp}, [&] { return run(false); }, {g}) < 1e-6);
}

TEST_CASE("pooling helpers match manual sums and FD", "[ops]") {
  Rng rng(53);
  Tensor x = random_tensor({4, 3}, rng), w = random_tensor({4}, rng);
  Tape t;
  Var pooled = weighted_pool_rows(t, t.leaf(x), t.leaf(w));
  for (int c = 0; c < 3; ++c) {
    double acc = 0.0;
    for (int p = 0; p < 4; ++p) acc += w[p] * x.at(p, c);
    REQUIRE(pooled->value[c] == Approx(acc).epsilon(1e-12));
  }

  // uniform softmax weights make weighted pooling identical to gap_rows, bitwise
  Tensor zeros({4});
  Tape t2;
  Var uw = softmax1d(t2, t2.leaf(zeros));
  Var a = weighted_pool_rows(t2, t2.leaf(x), uw);
  Var b = gap_rows(t2, t2.leaf(x));
  for (int c = 0; c < 3; ++c) REQUIRE(a->value[c] == b->value[c]);

  Tensor proj = random_tensor({3}, rng);
  Tensor gx, gw;
  auto run = [&](bool grads) {
    Tape tt;
    Var vx = tt.leaf(x, grads), vw = tt.leaf(w, grads);
    Var loss = project(tt, weighted_pool_rows(tt, vx, vw), proj);
    if (grads) {
      tt.backward(loss);
      gx = vx->grad;
      gw = vw->grad;
    }
    return loss->value[0];
  };
  run(true);
  REQUIRE(fd_max_rel_err({&x, &w}, [&] { return run(false); }, {gx, gw}) < 1e-6);

  // gap_spatial equals per-channel spatial mean
  Tensor m = random_tensor({2, 3, 2, 2}, rng);
  Tape t3;
  Var g = gap_spatial(t3, t3.leaf(m));
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c) {
      double acc = 0.0;
      for (int h = 0; h < 2; ++h)
        for (int ww = 0; ww < 2; ++ww) acc += 0.25 * m.at(n, c, h, ww);
      REQUIRE(g->value.at(n, c) == Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("shape plumbing round trips gradients", "[ops]") {
  Rng rng(59);
  Tensor x = random_tensor({3, 4}, rng);
  Tensor proj = random_tensor({3, 6}, rng);
  Tensor gx;
  auto run = [&](bool grads) {
    Tape t;
    Var vx = t.leaf(x, grads);
    Var tr = transpose2d(t, vx);        // [4,3]
    Var re = reshape(t, tr, {6, 2});    // [6,2]
    Var sl = slice_rows(t, re, 1, 4);   // [3,2]
    Var cc = concat_cols(t, {sl, sl, sl});  // [3,6]
    Var row0 = reshape(t, slice_rows(t, cc, 0, 1), {6});
    Var row1 = reshape(t, slice_rows(t, cc, 1, 2), {6});
    Var row2 = reshape(t, slice_rows(t, cc, 2, 3), {6});
    Var loss = project(t, stack_rows(t, {row2, row0, row1}), proj);
    if (grads) {
      t.backward(loss);
      gx = vx->grad;
    }
    return loss->value[0];
  };
  run(true);
  REQUIRE(fd_max_rel_err({&x}, [&] { return run(false); }, {gx}) < 1e-6);
}
