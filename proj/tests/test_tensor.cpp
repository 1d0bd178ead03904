#include <cmath>
#include <vector>

#include "doctest.h"
#include "rp3d/gradcheck.hpp"
#include "rp3d/rng.hpp"
#include "rp3d/tensor.hpp"

using namespace rp3d;

namespace {

// Independent reference matmul, kept deliberately naive.
std::vector<double> matmul_oracle(const std::vector<double>& a, const std::vector<double>& b,
                                  int m, int k, int n) {
  std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int kk = 0; kk < k; ++kk)
        s += a[static_cast<std::size_t>(i) * k + kk] * b[static_cast<std::size_t>(kk) * n + j];
      c[static_cast<std::size_t>(i) * n + j] = s;
    }
  return c;
}

std::vector<double> random_vec(Rng& rng, int n, double scale = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = rng.normal(0.0, scale);
  return v;
}

}  // namespace

TEST_CASE("rng is deterministic and uniform stays in [0,1)") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(7);
  for (int i = 0; i < 10000; ++i) {
    double u = c.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  Rng d(9);
  for (int i = 0; i < 10000; ++i) {
    int v = d.uniform_int(-3, 5);
    CHECK(v >= -3);
    CHECK(v <= 5);
  }
}

TEST_CASE("rng normal has roughly the right moments") {
  Rng rng(11);
  double s = 0.0, s2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double x = rng.normal(2.0, 3.0);
    s += x;
    s2 += x * x;
  }
  double mean = s / n;
  double var = s2 / n - mean * mean;
  CHECK(mean == doctest::Approx(2.0).epsilon(0.02));
  CHECK(var == doctest::Approx(9.0).epsilon(0.05));
}

TEST_CASE("matmul hand cases") {
  auto a = Tensor::constant({2, 2}, {1, 2, 3, 4});
  auto ones = Tensor::constant({2, 1}, {1, 1});
  auto c = matmul(a, ones);
  CHECK(c.at(0, 0) == 3.0);
  CHECK(c.at(1, 0) == 7.0);

  auto eye = Tensor::constant({2, 2}, {1, 0, 0, 1});
  auto d = matmul(a, eye);
  for (int i = 0; i < 4; ++i) CHECK(d.value()[i] == a.value()[i]);
}

TEST_CASE("matmul matches a straightforward triple loop") {
  Rng rng(123);
  for (int trial = 0; trial < 5; ++trial) {
    const int m = 5, k = 7, n = 3;
    auto av = random_vec(rng, m * k);
    auto bv = random_vec(rng, k * n);
    auto c = matmul(Tensor::constant({m, k}, av), Tensor::constant({k, n}, bv));
    auto ref = matmul_oracle(av, bv, m, k, n);
    for (int i = 0; i < m * n; ++i) CHECK(std::abs(c.value()[i] - ref[i]) <= 1e-12);
  }
}

TEST_CASE("matmul rejects mismatched shapes and reports both") {
  auto a = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = Tensor::constant({2, 2}, {1, 2, 3, 4});
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2x3]"), std::invalid_argument);
  try {
    matmul(a, b);
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("[2x2]") != std::string::npos);
  }
}

TEST_CASE("transpose round trips") {
  Rng rng(5);
  auto v = random_vec(rng, 12);
  auto a = Tensor::constant({3, 4}, v);
  auto tt = transpose(transpose(a));
  for (int i = 0; i < 12; ++i) CHECK(tt.value()[i] == v[static_cast<std::size_t>(i)]);
  auto t = transpose(a);
  CHECK(t.dim(0) == 4);
  CHECK(t.dim(1) == 3);
  CHECK(t.at(2, 1) == a.at(1, 2));
}

TEST_CASE("softmax rows: hand value, normalization, shift invariance, NaN rejection") {
  auto s = softmax_rows(Tensor::constant({1, 2}, {0.0, std::log(3.0)}));
  CHECK(s.at(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(s.at(0, 1) == doctest::Approx(0.75).epsilon(1e-12));

  Rng rng(77);
  auto v = random_vec(rng, 4 * 6, 3.0);
  auto sm = softmax_rows(Tensor::constant({4, 6}, v));
  for (int i = 0; i < 4; ++i) {
    double sum = 0.0;
    for (int j = 0; j < 6; ++j) {
      CHECK(sm.at(i, j) > 0.0);
      sum += sm.at(i, j);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }

  auto shifted = v;
  for (auto& x : shifted) x += 100.0;
  auto sm2 = softmax_rows(Tensor::constant({4, 6}, shifted));
  for (int i = 0; i < 24; ++i) CHECK(sm.value()[i] == doctest::Approx(sm2.value()[i]).epsilon(1e-9));

  auto bad = Tensor::constant({1, 2}, {0.0, std::nan("")});
  CHECK_THROWS_AS(softmax_rows(bad), std::invalid_argument);
}

TEST_CASE("layer norm normalizes each row") {
  Rng rng(13);
  auto v = random_vec(rng, 3 * 8, 5.0);
  auto gamma = Tensor::constant({8}, std::vector<double>(8, 1.0));
  auto beta = Tensor::constant({8}, std::vector<double>(8, 0.0));
  auto y = layer_norm_rows(Tensor::constant({3, 8}, v), gamma, beta);
  for (int i = 0; i < 3; ++i) {
    double mu = 0.0, var = 0.0;
    for (int j = 0; j < 8; ++j) mu += y.at(i, j);
    mu /= 8;
    for (int j = 0; j < 8; ++j) var += (y.at(i, j) - mu) * (y.at(i, j) - mu);
    var /= 8;
    CHECK(std::abs(mu) < 1e-12);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // eps in denominator skews slightly
  }
}

TEST_CASE("gather with duplicate indices accumulates gradient") {
  Rng rng(3);
  auto table = make_param_value("T", {3, 2}, {1, 2, 3, 4, 5, 6});
  auto out = gather_rows(table, std::vector<int>{0, 0, 2});
  CHECK(out.dim(0) == 3);
  CHECK(out.at(0, 1) == 2.0);
  CHECK(out.at(2, 0) == 5.0);
  auto loss = sum_all(out);
  auto gt = backward(loss);
  const auto* g = gt.find(table.node().get());
  REQUIRE(g != nullptr);
  CHECK((*g)[0] == 2.0);
  CHECK((*g)[1] == 2.0);
  CHECK((*g)[2] == 0.0);
  CHECK((*g)[3] == 0.0);
  CHECK((*g)[4] == 1.0);
  CHECK((*g)[5] == 1.0);
}

TEST_CASE("gather rejects out-of-range indices, naming index and table size") {
  auto table = Tensor::constant({3, 2}, {1, 2, 3, 4, 5, 6});
  CHECK_THROWS_WITH_AS(gather_rows(table, std::vector<int>{5}), doctest::Contains("5"),
                       std::out_of_range);
  IntMat idx(1, 1);
  idx.at(0, 0) = -1;
  CHECK_THROWS_WITH_AS(gather_rows(table, idx), doctest::Contains("3 rows"), std::out_of_range);
}

TEST_CASE("a tensor used twice gets both contributions") {
  auto x = make_param_value("x", {1}, {3.0});
  auto y = sum_all(add(Tensor(x), Tensor(x)));
  auto gt = backward(y);
  CHECK((*gt.find(x.node().get()))[0] == 2.0);

  // Diamond: z = sum(x*x + x). d/dx = 2x + 1 = 7.
  auto z = sum_all(add(mul(Tensor(x), Tensor(x)), Tensor(x)));
  auto gt2 = backward(z);
  CHECK((*gt2.find(x.node().get()))[0] == 7.0);
}

TEST_CASE("backward leaves parameter accumulators alone until asked") {
  Rng rng(1);
  auto w = make_param("w", {2, 2}, rng);
  auto x = Tensor::constant({1, 2}, {1.0, 2.0});
  auto loss = mean_all(matmul(x, w));
  auto gt = backward(loss);
  for (double g : w.grad()) CHECK(g == 0.0);
  accumulate_param_grads({w}, gt);
  // d mean / dw[i][j] = x[i] / 2
  CHECK(w.grad()[0] == doctest::Approx(0.5));
  CHECK(w.grad()[1] == doctest::Approx(0.5));
  CHECK(w.grad()[2] == doctest::Approx(1.0));
  CHECK(w.grad()[3] == doctest::Approx(1.0));
  accumulate_param_grads({w}, gt);
  CHECK(w.grad()[0] == doctest::Approx(1.0));  // accumulates, not overwrites
  w.zero_grad();
  for (double g : w.grad()) CHECK(g == 0.0);
}

TEST_CASE("group max picks per-column maxima and routes gradient to them") {
  auto f = make_param_value("F", {4, 2}, {1, 9, 5, 2, 3, 3, 7, 1});
  auto out = group_max_rows(f, {{0, 1}, {2, 3}, {}});
  CHECK(out.at(0, 0) == 5.0);
  CHECK(out.at(0, 1) == 9.0);
  CHECK(out.at(1, 0) == 7.0);
  CHECK(out.at(1, 1) == 3.0);
  CHECK(out.at(2, 0) == 0.0);  // empty group
  CHECK(out.at(2, 1) == 0.0);
  auto gt = backward(sum_all(out));
  const auto& g = *gt.find(f.node().get());
  CHECK(g == std::vector<double>{0, 1, 1, 0, 0, 1, 1, 0});
}

TEST_CASE("pairwise score ops match loop oracles") {
  Rng rng(31);
  const int nq = 3, nkv = 4, dh = 5;
  auto qv = random_vec(rng, nq * dh);
  auto rv = random_vec(rng, nq * nkv * dh);
  auto kv = random_vec(rng, nkv * dh);
  auto q = Tensor::constant({nq, dh}, qv);
  auto r3 = Tensor::constant({nq, nkv, dh}, rv);
  auto k = Tensor::constant({nkv, dh}, kv);
  auto qr = qr_scores(q, r3);
  auto rk = rk_scores(r3, k);
  for (int i = 0; i < nq; ++i) {
    for (int j = 0; j < nkv; ++j) {
      double sq = 0.0, sk = 0.0;
      for (int c = 0; c < dh; ++c) {
        sq += qv[static_cast<std::size_t>(i) * dh + c] *
              rv[(static_cast<std::size_t>(i) * nkv + j) * dh + c];
        sk += rv[(static_cast<std::size_t>(i) * nkv + j) * dh + c] *
              kv[static_cast<std::size_t>(j) * dh + c];
      }
      CHECK(qr.at(i * nkv + j) == doctest::Approx(sq).epsilon(1e-12));
      CHECK(rk.at(i * nkv + j) == doctest::Approx(sk).epsilon(1e-12));
    }
  }
}

TEST_CASE("slice and concat are inverses") {
  Rng rng(17);
  auto v = random_vec(rng, 3 * 7);
  auto x = Tensor::constant({3, 7}, v);
  auto a = slice_cols(x, 0, 2);
  auto b = slice_cols(x, 2, 5);
  auto back = concat_cols({a, b});
  for (int i = 0; i < 21; ++i) CHECK(back.value()[i] == v[static_cast<std::size_t>(i)]);
  CHECK_THROWS_AS(slice_cols(x, 5, 3), std::invalid_argument);
}

TEST_CASE("reductions") {
  auto x = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  auto mr = mean_rows(x);
  CHECK(mr.at(0, 0) == 2.5);
  CHECK(mr.at(0, 1) == 3.5);
  CHECK(mr.at(0, 2) == 4.5);
  CHECK(mean_all(x).at(0) == 3.5);
  CHECK(sum_all(x).at(0) == 21.0);
}

TEST_CASE("dropout scales kept entries and is deterministic under a seed") {
  Rng rng(99);
  auto x = Tensor::constant({10, 10}, std::vector<double>(100, 1.0));
  auto y = dropout(x, 0.4, rng);
  int kept = 0;
  for (double v : y.value()) {
    CHECK((v == 0.0 || v == doctest::Approx(1.0 / 0.6)));
    if (v != 0.0) ++kept;
  }
  CHECK(kept > 30);
  CHECK(kept < 90);
  Rng rng2(99);
  auto y2 = dropout(x, 0.4, rng2);
  CHECK(y.value() == y2.value());
  // rate 0 is the identity
  Rng rng3(1);
  auto z = dropout(x, 0.0, rng3);
  CHECK(z.node().get() == x.node().get());
}

TEST_CASE("binary cross-entropy hand values") {
  auto l = Tensor::constant({2}, {0.0, 0.0});
  auto loss = bce_logits_mean(l, {1.0, 0.0});
  CHECK(loss.at(0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // weights: zero weight drops an element entirely
  std::vector<double> w{1.0, 0.0};
  auto loss2 = bce_logits_mean(Tensor::constant({2}, {0.0, 100.0}), {1.0, 0.0}, &w);
  CHECK(loss2.at(0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // extreme logits stay finite
  auto loss3 = bce_logits_mean(Tensor::constant({2}, {800.0, -800.0}), {0.0, 1.0});
  CHECK(std::isfinite(loss3.at(0)));
  CHECK(loss3.at(0) == doctest::Approx(800.0).epsilon(1e-9));
}

TEST_CASE("quality-focal loss: hand value and target validation") {
  // label 1, predicted probability 0.5 -> |1-0.5|^2 * ln 2
  auto loss = quality_focal_mean(Tensor::constant({1}, {0.0}), {1.0});
  CHECK(loss.at(0) == doctest::Approx(0.25 * std::log(2.0)).epsilon(1e-12));
  // perfect prediction of an extreme label -> loss near zero
  auto loss2 = quality_focal_mean(Tensor::constant({1}, {30.0}), {1.0});
  CHECK(loss2.at(0) < 1e-10);
  CHECK_THROWS_AS(quality_focal_mean(Tensor::constant({1}, {0.0}), {1.5}),
                  std::invalid_argument);
  CHECK_THROWS_AS(quality_focal_mean(Tensor::constant({1}, {0.0}), {-0.1}),
                  std::invalid_argument);
}

TEST_CASE("softmax cross-entropy hand values and ignored rows") {
  auto l = Tensor::constant({2, 2}, {0.0, 0.0, 0.0, 0.0});
  auto loss = softmax_xent_mean(l, {0, 1});
  CHECK(loss.at(0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // target -1 rows are ignored
  auto loss2 = softmax_xent_mean(l, {0, -1});
  CHECK(loss2.at(0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  std::vector<double> w{0.0, 0.0};
  auto loss3 = softmax_xent_mean(l, {0, 1}, &w);
  CHECK(loss3.at(0) == 0.0);
}

TEST_CASE("smooth-l1 hand values") {
  // |e| <= beta: quadratic; above: linear
  auto p = Tensor::constant({2, 1}, {0.5, 2.0});
  auto loss = smooth_l1_mean(p, {0.0, 0.0}, {1.0, 1.0});
  CHECK(loss.at(0) == doctest::Approx(0.5 * (0.125 + 1.5)).epsilon(1e-12));
  // masked rows drop out of the mean
  auto loss2 = smooth_l1_mean(p, {0.0, 0.0}, {1.0, 0.0});
  CHECK(loss2.at(0) == doctest::Approx(0.125).epsilon(1e-12));
  auto loss3 = smooth_l1_mean(p, {0.0, 0.0}, {0.0, 0.0});
  CHECK(loss3.at(0) == 0.0);
}

// ---- gradient checks ------------------------------------------------------

TEST_CASE("gradcheck: dense feed-forward compositions over many seeds") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    auto w1 = make_param("w1", {4, 6}, rng, 0.5);
    auto b1 = make_param("b1", {6}, rng, 0.5);
    auto w2 = make_param("w2", {6, 3}, rng, 0.5);
    auto gamma = make_param_value("gamma", {6}, random_vec(rng, 6, 0.3));
    auto beta = make_param_value("beta", {6}, random_vec(rng, 6, 0.3));
    auto xv = random_vec(rng, 2 * 4);
    // mean of a full softmax is constant, so weight it before reducing
    auto mix = random_vec(rng, 2 * 3);
    auto f = [&]() {
      auto x = Tensor::constant({2, 4}, xv);
      auto h = layer_norm_rows(add_bias(matmul(x, w1), b1), gamma, beta);
      auto y = matmul(sigmoid(h), w2);
      return mean_all(mul(softmax_rows(y), Tensor::constant({2, 3}, mix)));
    };
    auto res = gradcheck(f, {w1, b1, w2, gamma, beta}, 1e-5);
    CAPTURE(seed);
    CAPTURE(res.worst_param);
    CHECK(res.max_rel_err < 1e-5);
  }
}

TEST_CASE("gradcheck: relu/maxpool composition at generic points") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed * 31 + 7);
    auto w = make_param("w", {3, 4}, rng, 0.8);
    auto xv = random_vec(rng, 5 * 3);
    auto f = [&]() {
      auto x = Tensor::constant({5, 3}, xv);
      auto h = relu(matmul(x, w));
      auto g = group_max_rows(h, {{0, 1, 2}, {3, 4}});
      return mean_all(g);
    };
    auto res = gradcheck(f, {w}, 1e-6);
    CAPTURE(seed);
    CHECK(res.max_rel_err < 1e-4);
  }
}

TEST_CASE("gradcheck: relative-encoding score paths") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed + 100);
    const int nq = 3, nkv = 4, dh = 4, rows = 6;
    auto table = make_param("table", {rows, dh}, rng, 0.7);
    auto wq = make_param("wq", {2, dh}, rng, 0.7);
    auto xv = random_vec(rng, nq * 2);
    IntMat idx(nq, nkv);
    for (int i = 0; i < nq; ++i)
      for (int j = 0; j < nkv; ++j) idx.at(i, j) = rng.uniform_int(0, rows - 1);
    std::vector<int> flat(static_cast<std::size_t>(nkv));
    for (auto& r : flat) r = rng.uniform_int(0, rows - 1);
    auto mix = random_vec(rng, nq * nkv);
    auto f = [&]() {
      auto q = matmul(Tensor::constant({nq, 2}, xv), wq);
      auto r3 = gather_rows(table, idx);
      auto k = gather_rows(table, flat);
      auto s = add(qr_scores(q, r3), rk_scores(r3, k));
      return mean_all(mul(softmax_rows(s), Tensor::constant({nq, nkv}, mix)));
    };
    auto res = gradcheck(f, {table, wq}, 1e-5);
    CAPTURE(seed);
    CAPTURE(res.worst_param);
    CHECK(res.max_rel_err < 1e-6);
  }
}

TEST_CASE("gradcheck: loss heads") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed * 13 + 1);
    auto w = make_param("w", {3, 4}, rng, 0.6);
    auto xv = random_vec(rng, 2 * 3);
    std::vector<double> bt{0.2, 0.9, 0.0, 1.0, 0.5, 0.7, 0.3, 0.8};
    std::vector<int> ct{1, 3};
    std::vector<double> st(8);
    for (auto& t : st) t = rng.normal(0.0, 2.0);
    std::vector<double> mask{1.0, 1.0};
    auto logits = [&]() { return matmul(Tensor::constant({2, 3}, xv), w); };
    auto f_bce = [&]() { return bce_logits_mean(logits(), bt); };
    auto f_qf = [&]() { return quality_focal_mean(logits(), bt); };
    auto f_ce = [&]() { return softmax_xent_mean(logits(), ct); };
    auto f_sl1 = [&]() { return smooth_l1_mean(logits(), st, mask); };
    CAPTURE(seed);
    CHECK(gradcheck(f_bce, {w}, 1e-5).max_rel_err < 1e-6);
    CHECK(gradcheck(f_qf, {w}, 1e-5).max_rel_err < 1e-6);
    CHECK(gradcheck(f_ce, {w}, 1e-5).max_rel_err < 1e-6);
    CHECK(gradcheck(f_sl1, {w}, 1e-5).max_rel_err < 1e-4);  // kink at |e| = beta
  }
}

TEST_CASE("gradcheck rejects non-scalar outputs") {
  Rng rng(1);
  auto w = make_param("w", {2, 2}, rng);
  auto f = [&]() { return matmul(Tensor::constant({2, 2}, {1, 2, 3, 4}), w); };
  CHECK_THROWS_AS(gradcheck(f, {w}), std::invalid_argument);
}
