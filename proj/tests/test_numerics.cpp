#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <string>
#include <vector>

#include "cvsa/grad_check.hpp"
#include "cvsa/optim.hpp"
#include "cvsa/rng.hpp"
#include "cvsa/tape.hpp"
#include "cvsa/tensor.hpp"

using namespace cvsa;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Independent oracle: naive triple loop.
Tensor matmul_naive(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a.at(i, p) * b.at(p, j);
      out.at(i, j) = s;
    }
  return out;
}

}  // namespace

TEST_CASE("tensor construction enforces invariants") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor({2}, {1.0, std::nan("")}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor({2}, {1.0, INFINITY}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor({0, 3}), std::invalid_argument);
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) CHECK(t[i] == 0.0);
}

TEST_CASE("matmul identity and scalar cases") {
  GradientTape t;
  NodeId eye = t.constant(Tensor({2, 2}, {1, 0, 0, 1}));
  NodeId b = t.constant(Tensor({2, 2}, {3, 4, 5, 6}));
  NodeId c = matmul(t, eye, b);
  CHECK(t.value(c).at(0, 0) == 3.0);
  CHECK(t.value(c).at(0, 1) == 4.0);
  CHECK(t.value(c).at(1, 0) == 5.0);
  CHECK(t.value(c).at(1, 1) == 6.0);

  NodeId x = t.constant(Tensor({1, 1}, {2.0}));
  NodeId y = t.constant(Tensor({1, 1}, {7.0}));
  CHECK(t.value(matmul(t, x, y))[0] == 14.0);
}

TEST_CASE("matmul matches naive triple-loop oracle") {
  Rng rng(11);
  SUBCASE("3x4 by 4x2") {
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 2}, rng);
    GradientTape t;
    NodeId c = matmul(t, t.constant(a), t.constant(b));
    Tensor want = matmul_naive(a, b);
    for (std::size_t i = 0; i < want.size(); ++i)
      CHECK(t.value(c)[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }
  SUBCASE("random dims up to 32") {
    for (int trial = 0; trial < 10; ++trial) {
      const std::size_t m = 1 + rng.uniform_int(32);
      const std::size_t k = 1 + rng.uniform_int(32);
      const std::size_t n = 1 + rng.uniform_int(32);
      Tensor a = random_tensor({m, k}, rng);
      Tensor b = random_tensor({k, n}, rng);
      GradientTape t;
      NodeId c = matmul(t, t.constant(a), t.constant(b));
      Tensor want = matmul_naive(a, b);
      for (std::size_t i = 0; i < want.size(); ++i) {
        CHECK(std::fabs(t.value(c)[i] - want[i]) <= 1e-12);
      }
    }
  }
}

TEST_CASE("matmul shape error names both shapes") {
  GradientTape t;
  NodeId a = t.constant(Tensor({2, 3}));
  NodeId b = t.constant(Tensor({4, 2}));
  try {
    matmul(t, a, b);
    FAIL("expected dimension error");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("[4, 2]") != std::string::npos);
  }
}

TEST_CASE("elementwise primitives") {
  GradientTape t;
  NodeId z = t.constant(Tensor({1}, {0.0}));
  CHECK(t.value(sigmoid(t, z))[0] == 0.5);

  NodeId neg = t.constant(Tensor({2}, {-3.0, 3.0}));
  NodeId r = relu(t, neg);
  CHECK(t.value(r)[0] == 0.0);
  CHECK(t.value(r)[1] == 3.0);

  NodeId s = scale(t, neg, 2.0);
  CHECK(t.value(s)[0] == -6.0);

  NodeId sum = add(t, neg, neg);
  CHECK(t.value(sum)[1] == 6.0);
}

TEST_CASE("sigmoid derivative matches central differences at 100 random points") {
  Rng rng(7);
  const double h = 1e-6;
  for (int i = 0; i < 100; ++i) {
    const double x = rng.uniform(-4.0, 4.0);
    GradientTape t;
    NodeId xn = t.param(Tensor({1}, {x}));
    NodeId y = sigmoid(t, xn);
    t.backward(y);
    const double g = t.grad(xn)[0];
    auto s = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    const double fd = (s(x + h) - s(x - h)) / (2.0 * h);
    const double sv = s(x);
    CHECK(g == doctest::Approx(sv * (1.0 - sv)).epsilon(1e-12));
    CHECK(g == doctest::Approx(fd).epsilon(1e-7));
  }
}

TEST_CASE("reduce_max_rows values, tie-break and gradient routing") {
  SUBCASE("basic row") {
    GradientTape t;
    RowMax m = reduce_max_rows(t, t.constant(Tensor({1, 3}, {1, 5, 2})));
    CHECK(t.value(m.values)[0] == 5.0);
    CHECK(m.argmax[0] == 1);
    CHECK_FALSE(t.saw_exact_max_tie());
  }
  SUBCASE("all-equal row breaks tie to column 0") {
    GradientTape t;
    RowMax m = reduce_max_rows(t, t.constant(Tensor({1, 3}, {3, 3, 3})));
    CHECK(t.value(m.values)[0] == 3.0);
    CHECK(m.argmax[0] == 0);
    CHECK(t.saw_exact_max_tie());
  }
  SUBCASE("random 6x6 matches exhaustive scan oracle") {
    Rng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
      Tensor a = random_tensor({6, 6}, rng);
      GradientTape t;
      RowMax m = reduce_max_rows(t, t.constant(a));
      for (std::size_t i = 0; i < 6; ++i) {
        double best = a.at(i, 0);
        for (std::size_t j = 1; j < 6; ++j) best = std::max(best, a.at(i, j));
        CHECK(t.value(m.values)[i] == best);
      }
    }
  }
  SUBCASE("gradient routes to argmax only") {
    GradientTape t;
    NodeId a = t.param(Tensor({2, 3}, {1, 5, 2, 9, 0, 3}));
    RowMax m = reduce_max_rows(t, a);
    NodeId loss = sum_all(t, m.values);
    t.backward(loss);
    const Tensor& g = t.grad(a);
    CHECK(g.at(0, 1) == 1.0);
    CHECK(g.at(1, 0) == 1.0);
    CHECK(g.at(0, 0) == 0.0);
    CHECK(g.at(0, 2) == 0.0);
    CHECK(g.at(1, 2) == 0.0);
  }
}

TEST_CASE("bilinear_resize conventions") {
  SUBCASE("constant maps stay constant") {
    Rng rng(3);
    for (int trial = 0; trial < 5; ++trial) {
      const double c = rng.uniform(-2.0, 2.0);
      GradientTape t;
      NodeId x = t.constant(Tensor::full({3 + rng.uniform_int(5), 3 + rng.uniform_int(5)}, c));
      NodeId y = bilinear_resize(t, x, 1 + rng.uniform_int(9), 1 + rng.uniform_int(9));
      for (std::size_t i = 0; i < t.value(y).size(); ++i) {
        CHECK(t.value(y)[i] == doctest::Approx(c).epsilon(1e-12));
      }
    }
  }
  SUBCASE("same size is identity") {
    Rng rng(4);
    Tensor a = random_tensor({5, 7}, rng);
    GradientTape t;
    NodeId y = bilinear_resize(t, t.constant(a), 5, 7);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(t.value(y)[i] == a[i]);
  }
  SUBCASE("2x2 checker to 1x1 gives 0.5") {
    GradientTape t;
    NodeId y = bilinear_resize(t, t.constant(Tensor({2, 2}, {0, 1, 1, 0})), 1, 1);
    CHECK(t.value(y)[0] == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("linearity") {
    Rng rng(5);
    for (int trial = 0; trial < 5; ++trial) {
      Tensor a = random_tensor({6, 4}, rng);
      Tensor b = random_tensor({6, 4}, rng);
      const double alpha = rng.uniform(-2, 2), beta = rng.uniform(-2, 2);
      Tensor mix({6, 4});
      for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = alpha * a[i] + beta * b[i];
      GradientTape t;
      NodeId ra = bilinear_resize(t, t.constant(a), 3, 9);
      NodeId rb = bilinear_resize(t, t.constant(b), 3, 9);
      NodeId rm = bilinear_resize(t, t.constant(mix), 3, 9);
      for (std::size_t i = 0; i < t.value(rm).size(); ++i) {
        const double want = alpha * t.value(ra)[i] + beta * t.value(rb)[i];
        CHECK(std::fabs(t.value(rm)[i] - want) <= 1e-12);
      }
    }
  }
}

TEST_CASE("conv1x1 identity and dense equivalence") {
  SUBCASE("identity weights reproduce input") {
    Rng rng(6);
    Tensor x = random_tensor({3, 4, 2}, rng);
    GradientTape t;
    NodeId y = conv1x1(t, t.constant(x), t.constant(Tensor({2, 2}, {1, 0, 0, 1})),
                       t.constant(Tensor({2})));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(t.value(y)[i] == x[i]);
  }
  SUBCASE("1x1 spatial input reduces to a dense layer") {
    Rng rng(8);
    Tensor x = random_tensor({1, 1, 3}, rng);
    Tensor w = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4}, rng);
    GradientTape t;
    NodeId y = conv1x1(t, t.constant(x), t.constant(w), t.constant(b));
    // dense oracle: y[j] = sum_i x[i] w[i][j] + b[j]
    for (std::size_t j = 0; j < 4; ++j) {
      double want = b[j];
      for (std::size_t i = 0; i < 3; ++i) want += x[i] * w.at(i, j);
      CHECK(t.value(y)[j] == doctest::Approx(want).epsilon(1e-14));
    }
  }
}

TEST_CASE("gradients of core ops pass the finite-difference check") {
  Rng rng(31);
  SUBCASE("matmul") {
    std::vector<Tensor> params = {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)};
    auto f = [](GradientTape& t, const std::vector<NodeId>& p) {
      return mean_all(t, matmul(t, p[0], p[1]));
    };
    auto r = grad_check(f, params, {"a", "b"}, {});
    CHECK(r.pass);
  }
  SUBCASE("matmul_nt") {
    std::vector<Tensor> params = {random_tensor({3, 4}, rng), random_tensor({5, 4}, rng)};
    auto f = [](GradientTape& t, const std::vector<NodeId>& p) {
      return mean_all(t, matmul_nt(t, p[0], p[1]));
    };
    auto r = grad_check(f, params, {"a", "b"}, {});
    CHECK(r.pass);
  }
  SUBCASE("conv1x1 vs finite differences on 3x3x2 -> 3") {
    std::vector<Tensor> params = {random_tensor({3, 3, 2}, rng), random_tensor({2, 3}, rng),
                                  random_tensor({3}, rng)};
    Tensor coeffs = random_tensor({27}, rng);
    auto f = [&coeffs](GradientTape& t, const std::vector<NodeId>& p) {
      NodeId y = conv1x1(t, p[0], p[1], p[2]);
      return dot(t, reshape(t, y, {27}), t.constant(coeffs));
    };
    GradCheckConfig cfg;
    cfg.h = 1e-5;
    cfg.tol = 1e-6;
    auto r = grad_check(f, params, {"x", "w", "b"}, cfg);
    CHECK(r.pass);
    CHECK(r.max_rel_err <= 1e-6);
  }
  SUBCASE("conv2d 3x3 stride 2") {
    std::vector<Tensor> params = {random_tensor({6, 8, 2}, rng), random_tensor({3, 3, 2, 3}, rng),
                                  random_tensor({3}, rng)};
    auto f = [](GradientTape& t, const std::vector<NodeId>& p) {
      NodeId y = conv2d(t, p[0], p[1], p[2], 2, 1);
      return mean_all(t, mul(t, y, y));
    };
    auto r = grad_check(f, params, {"x", "w", "b"}, {});
    CHECK(r.pass);
  }
  SUBCASE("bilinear_resize") {
    std::vector<Tensor> params = {random_tensor({5, 6}, rng)};
    auto f = [](GradientTape& t, const std::vector<NodeId>& p) {
      NodeId y = bilinear_resize(t, p[0], 3, 8);
      return mean_all(t, mul(t, y, y));
    };
    auto r = grad_check(f, params, {"x"}, {});
    CHECK(r.pass);
  }
  SUBCASE("batchnorm vs finite differences") {
    std::vector<Tensor> params = {random_tensor({6, 3}, rng), random_tensor({3}, rng, 0.5, 1.5),
                                  random_tensor({3}, rng)};
    Tensor coeffs = random_tensor({18}, rng);
    auto f = [&coeffs](GradientTape& t, const std::vector<NodeId>& p) {
      NodeId y = batchnorm(t, p[0], p[1], p[2]);
      return dot(t, reshape(t, y, {18}), t.constant(coeffs));
    };
    GradCheckConfig cfg;
    cfg.h = 1e-4;
    cfg.tol = 1e-5;
    auto r = grad_check(f, params, {"x", "gamma", "beta"}, cfg);
    CHECK(r.pass);
  }
  SUBCASE("softer composite: sigmoid of matmul through reduce_max") {
    std::vector<Tensor> params = {random_tensor({4, 3}, rng), random_tensor({5, 3}, rng)};
    auto f = [](GradientTape& t, const std::vector<NodeId>& p) {
      NodeId a = matmul_nt(t, p[0], p[1]);
      RowMax m = reduce_max_rows(t, sigmoid(t, a));
      return mean_all(t, m.values);
    };
    auto r = grad_check(f, params, {"q", "k"}, {});
    CHECK(r.pass);
  }
}

TEST_CASE("batchnorm semantics") {
  SUBCASE("standardized input with unit affine is preserved") {
    // gamma = sqrt(var+eps), beta = mean makes batchnorm exactly identity.
    Rng rng(17);
    Tensor x = random_tensor({8, 3}, rng, 0.1, 2.0);
    Tensor gamma({3}), beta({3});
    for (std::size_t j = 0; j < 3; ++j) {
      double m = 0, v = 0;
      for (std::size_t i = 0; i < 8; ++i) m += x.at(i, j);
      m /= 8;
      for (std::size_t i = 0; i < 8; ++i) v += (x.at(i, j) - m) * (x.at(i, j) - m);
      v /= 8;
      gamma[j] = std::sqrt(v + 1e-5);
      beta[j] = m;
    }
    GradientTape t;
    NodeId y = batchnorm(t, t.constant(x), t.constant(gamma), t.constant(beta));
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(t.value(y)[i] == doctest::Approx(x[i]).epsilon(1e-12));
    }
  }
  SUBCASE("gamma=0 beta=5 gives constant 5") {
    Rng rng(18);
    Tensor x = random_tensor({4, 2}, rng);
    GradientTape t;
    NodeId y = batchnorm(t, t.constant(x), t.constant(Tensor({2})),
                         t.constant(Tensor::full({2}, 5.0)));
    for (std::size_t i = 0; i < t.value(y).size(); ++i) CHECK(t.value(y)[i] == 5.0);
  }
  SUBCASE("N=1 in training mode is rejected") {
    GradientTape t;
    NodeId x = t.constant(Tensor({1, 3}, {1, 2, 3}));
    CHECK_THROWS_AS(batchnorm(t, x, t.constant(Tensor::full({3}, 1.0)), t.constant(Tensor({3}))),
                    std::invalid_argument);
  }
}

TEST_CASE("grad_check harness") {
  SUBCASE("f(x) = x^2 at x = 3") {
    std::vector<Tensor> params = {Tensor({1}, {3.0})};
    auto f = [](GradientTape& t, const std::vector<NodeId>& p) { return mul(t, p[0], p[0]); };
    auto r = grad_check(f, params, {"x"}, {});
    CHECK(r.pass);
    CHECK(r.max_rel_err < 1e-8);
  }
  SUBCASE("exact max tie is excluded and flagged") {
    std::vector<Tensor> params = {Tensor({1, 2}, {3.0, 3.0})};
    auto f = [](GradientTape& t, const std::vector<NodeId>& p) {
      return mean_all(t, reduce_max_rows(t, p[0]).values);
    };
    auto r = grad_check(f, params, {"x"}, {});
    CHECK(r.exact_max_tie);
    CHECK(r.flagged.size() == 2);
    CHECK(r.params[0].excluded == 2);
    CHECK(r.pass);  // nothing left to fail on
  }
  SUBCASE("non-finite f raises") {
    std::vector<Tensor> params = {Tensor({1}, {1.0})};
    auto f = [](GradientTape& t, const std::vector<NodeId>& p) {
      NodeId big = scale(t, p[0], 1e200);
      return mul(t, big, big);  // overflows to inf
    };
    CHECK_THROWS_AS(grad_check(f, params, {"x"}, {}), std::runtime_error);
  }
  SUBCASE("h outside [1e-6, 1e-2] is rejected") {
    std::vector<Tensor> params = {Tensor({1}, {1.0})};
    auto f = [](GradientTape& t, const std::vector<NodeId>& p) { return mul(t, p[0], p[0]); };
    GradCheckConfig cfg;
    cfg.h = 1e-7;
    CHECK_THROWS_AS(grad_check(f, params, {"x"}, cfg), std::invalid_argument);
  }
  SUBCASE("injected sigmoid gradient fault is caught") {
    std::vector<Tensor> params = {Tensor({1}, {0.7})};
    auto f = [](GradientTape& t, const std::vector<NodeId>& p) {
      t.faults().flip_sigmoid_grad = true;
      return sigmoid(t, p[0]);
    };
    auto r = grad_check(f, params, {"x"}, {});
    CHECK_FALSE(r.pass);
  }
}

TEST_CASE("stop_gradient blocks the stopped path") {
  GradientTape t;
  NodeId a = t.param(Tensor({2}, {1.0, 2.0}));
  NodeId b = t.param(Tensor({2}, {3.0, 4.0}));
  NodeId blocked = stop_gradient(t, b);
  NodeId loss = dot(t, a, blocked);
  t.backward(loss);
  CHECK(t.has_grad(a));
  CHECK_FALSE(t.has_grad(b));
  CHECK(t.grad(a)[0] == 3.0);
  CHECK(t.grad(a)[1] == 4.0);
}

TEST_CASE("sgd_step semantics") {
  SUBCASE("plain step") {
    Tensor p({1}, {0.0});
    std::vector<ParamRef> params = {{"p", &p, false}};
    OptimizerState st = OptimizerState::init(params);
    Tensor g({1}, {1.0});
    std::vector<const Tensor*> grads = {&g};
    sgd_step(params, grads, st, 0.1, 0.0, 0.0);
    CHECK(p[0] == doctest::Approx(-0.1).epsilon(1e-15));
    CHECK(st.step == 1);
  }
  SUBCASE("frozen parameter with nonzero grad stays put") {
    Tensor p({2}, {1.0, -1.0});
    std::vector<ParamRef> params = {{"p", &p, true}};
    OptimizerState st = OptimizerState::init(params);
    Tensor g({2}, {5.0, 5.0});
    std::vector<const Tensor*> grads = {&g};
    sgd_step(params, grads, st, 0.5, 0.9, 1e-4);
    CHECK(p[0] == 1.0);
    CHECK(p[1] == -1.0);
    CHECK(st.momentum[0][0] == 0.0);
  }
  SUBCASE("two momentum steps match the hand recurrence") {
    Tensor p({1}, {0.0});
    std::vector<ParamRef> params = {{"p", &p, false}};
    OptimizerState st = OptimizerState::init(params);
    Tensor g({1}, {1.0});
    std::vector<const Tensor*> grads = {&g};
    // v1 = 1, p1 = -0.1; v2 = 0.9 + 1 = 1.9, p2 = -0.1 - 0.19 = -0.29
    sgd_step(params, grads, st, 0.1, 0.9, 0.0);
    CHECK(p[0] == doctest::Approx(-0.1).epsilon(1e-15));
    sgd_step(params, grads, st, 0.1, 0.9, 0.0);
    CHECK(p[0] == doctest::Approx(-0.29).epsilon(1e-15));
  }
  SUBCASE("shape mismatch is rejected") {
    Tensor p({2});
    std::vector<ParamRef> params = {{"p", &p, false}};
    OptimizerState st = OptimizerState::init(params);
    Tensor g({3});
    std::vector<const Tensor*> grads = {&g};
    CHECK_THROWS_AS(sgd_step(params, grads, st, 0.1), std::invalid_argument);
  }
}

TEST_CASE("cosine_lr anchors") {
  CHECK(cosine_lr(0, 100, 0.4) == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(cosine_lr(100, 100, 0.4) == doctest::Approx(0.0).scale(1).epsilon(1e-15));
  CHECK(cosine_lr(50, 100, 0.4) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK_THROWS_AS(cosine_lr(101, 100, 0.4), std::invalid_argument);
  CHECK_THROWS_AS(cosine_lr(0, 0, 0.4), std::invalid_argument);
}

TEST_CASE("forward determinism: identical inputs give bit-identical outputs") {
  Rng rng(41);
  Tensor x = random_tensor({4, 4, 2}, rng);
  Tensor w = random_tensor({3, 3, 2, 3}, rng);
  Tensor b = random_tensor({3}, rng);
  auto run = [&] {
    GradientTape t;
    NodeId y = conv2d(t, t.constant(x), t.constant(w), t.constant(b), 2, 1);
    NodeId s = sigmoid(t, y);
    return Tensor(t.value(s));
  };
  Tensor r1 = run();
  Tensor r2 = run();
  REQUIRE(r1.size() == r2.size());
  for (std::size_t i = 0; i < r1.size(); ++i) CHECK(r1[i] == r2[i]);
}
