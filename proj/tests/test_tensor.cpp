#include <doctest.h>

#include <cmath>

#include "mtdqn/gradcheck.hpp"
#include "mtdqn/tensor.hpp"

using namespace mtdqn;

TEST_CASE("matmul identity and hand cases") {
  Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
  Tensor out = matmul(a, Tensor::identity(2));
  CHECK(out.at(0, 0) == 1.0);
  CHECK(out.at(0, 1) == 2.0);
  CHECK(out.at(1, 0) == 3.0);
  CHECK(out.at(1, 1) == 4.0);

  // [[1,2]] x [[3],[4]] = [[11]]
  Tensor b = matmul(Tensor::row({1, 2}), Tensor::matrix(2, 1, {3, 4}));
  CHECK(b.item() == 11.0);

  Tensor z = matmul(a, Tensor::zeros(2, 3));
  for (double v : z.values()) CHECK(v == 0.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a = Tensor::zeros(2, 3);
  Tensor b = Tensor::zeros(4, 5);
  CHECK_THROWS_WITH_AS(matmul(a, b),
                       doctest::Contains("2x3"), DimensionError);
  CHECK_THROWS_WITH_AS(matmul(a, b),
                       doctest::Contains("4x5"), DimensionError);
}

TEST_CASE("rowwise_softmax values") {
  Tensor x = Tensor::row({0, 0});
  Tensor p = rowwise_softmax(x);
  CHECK(p.at(0, 0) == doctest::Approx(0.5).epsilon(1e-12));

  // [ln 2, 0] -> [2/3, 1/3]
  Tensor q = rowwise_softmax(Tensor::row({std::log(2.0), 0.0}));
  CHECK(q.at(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(q.at(0, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("rowwise_softmax properties: rows sum to 1, shift invariant") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor x = Tensor::uniform(3, 5, -30.0, 30.0, rng);
    Tensor p = rowwise_softmax(x);
    for (std::size_t i = 0; i < 3; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < 5; ++j) {
        CHECK(p.at(i, j) >= 0.0);
        sum += p.at(i, j);
      }
      CHECK(std::abs(sum - 1.0) <= 1e-9);
    }
    const double c = rng.uniform(-5.0, 5.0);
    Tensor shifted = rowwise_softmax(add(x, Tensor::scalar(c)));
    for (std::size_t i = 0; i < p.size(); ++i) {
      CHECK(shifted.values()[i] == doctest::Approx(p.values()[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("activations") {
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  CHECK(tanh_act(Tensor::scalar(0.0)).item() == 0.0);
  Tensor r = relu(Tensor::row({-3, 2}));
  CHECK(r.at(0, 0) == 0.0);
  CHECK(r.at(0, 1) == 2.0);
}

TEST_CASE("elementwise ops and dispatcher") {
  Tensor x = Tensor::row({1, 2});
  Tensor y = Tensor::row({3, 4});
  Tensor s = elementwise(Elementwise::add, x, y);
  CHECK(s.at(0, 0) == 4.0);
  CHECK(s.at(0, 1) == 6.0);
  Tensor ones = Tensor::full(1, 2, 1.0);
  Tensor m = mul(x, ones);
  CHECK(m.at(0, 0) == 1.0);
  CHECK(m.at(0, 1) == 2.0);
  Tensor d = sub(x, x);
  for (double v : d.values()) CHECK(v == 0.0);
  CHECK_THROWS_AS(add(Tensor::zeros(2, 2), Tensor::zeros(2, 3)), DimensionError);
}

TEST_CASE("concat") {
  Tensor v = Tensor::row({5, 6, 7});
  Tensor single = concat({v}, 0);
  CHECK(single.rows() == 1);
  CHECK(single.at(0, 2) == 7.0);

  // Columns: [[1],[2]] | [[3],[4]] -> [[1,3],[2,4]]
  Tensor a = Tensor::matrix(2, 1, {1, 2});
  Tensor b = Tensor::matrix(2, 1, {3, 4});
  Tensor c = concat({a, b}, 1);
  CHECK(c.at(0, 0) == 1.0);
  CHECK(c.at(0, 1) == 3.0);
  CHECK(c.at(1, 0) == 2.0);
  CHECK(c.at(1, 1) == 4.0);

  Tensor f = Tensor::row({1, 2, 3});
  Tensor h = Tensor::row({4, 5});
  CHECK(concat({f, h}, 1).cols() == f.cols() + h.cols());
  CHECK_THROWS_AS(concat({Tensor::zeros(2, 2), Tensor::zeros(3, 3)}, 0),
                  DimensionError);
}

TEST_CASE("reduce_mean") {
  Tensor constant = Tensor::full(4, 3, 2.5);
  Tensor m0 = reduce_mean(constant, 0);
  for (double v : m0.values()) CHECK(v == 2.5);

  CHECK(reduce_mean(Tensor::matrix(2, 1, {1, 3}), 0).item() == 2.0);
  CHECK(reduce_mean(Tensor::scalar(42.0), 0).item() == 42.0);
}

TEST_CASE("layer_norm") {
  Tensor gain = Tensor::full(1, 4, 1.0);
  Tensor bias = Tensor::zeros(1, 4);
  Tensor constant = layer_norm(Tensor::full(1, 4, 3.0), gain, bias);
  for (double v : constant.values()) CHECK(v == doctest::Approx(0.0));

  Tensor pm = layer_norm(Tensor::row({1, -1}), Tensor::full(1, 2, 1.0),
                         Tensor::zeros(1, 2));
  CHECK(pm.at(0, 0) == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(pm.at(0, 1) == doctest::Approx(-1.0).epsilon(1e-4));

  // Output mean equals bias mean for constant gain.
  Rng rng(3);
  Tensor x = Tensor::uniform(1, 6, -2, 2, rng);
  Tensor b2 = Tensor::uniform(1, 6, -1, 1, rng);
  Tensor out = layer_norm(x, Tensor::full(1, 6, 1.3), b2);
  double out_mean = 0.0, bias_mean = 0.0;
  for (std::size_t j = 0; j < 6; ++j) {
    out_mean += out.at(0, j);
    bias_mean += b2.at(0, j);
  }
  CHECK(out_mean / 6 == doctest::Approx(bias_mean / 6).epsilon(1e-9));

  CHECK_THROWS_AS(
      layer_norm(Tensor::scalar(1.0), Tensor::scalar(1.0), Tensor::scalar(0.0)),
      DegenerateInputError);
}

TEST_CASE("backward: basic derivatives") {
  // loss = x^2 at x = 3 -> grad 6
  Tensor x = Tensor::scalar(3.0).set_requires_grad(true);
  {
    Tape tape;
    Tensor loss = mul(x, x);
    tape.backward(loss);
  }
  CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-12));

  // loss = sum(v) -> grad all ones
  Tensor v = Tensor::row({1, 2, 3}).set_requires_grad(true);
  {
    Tape tape;
    tape.backward(sum_all(v));
  }
  for (double g : v.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward: accumulation over shared subexpressions") {
  Tensor x = Tensor::scalar(2.0).set_requires_grad(true);
  {
    Tape tape;
    Tensor y = add(mul(x, x), x);  // x^2 + x -> grad 2x + 1 = 5
    tape.backward(y);
  }
  CHECK(x.grad()[0] == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("backward contract errors") {
  Tensor x = Tensor::row({1, 2}).set_requires_grad(true);
  Tape tape;
  Tensor y = mul(x, x);
  CHECK_THROWS_AS(tape.backward(y), ContractError);  // non-scalar loss
  Tensor loss = sum_all(y);
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), StateError);  // reused tape
}

TEST_CASE("no recording outside a tape") {
  Tensor x = Tensor::scalar(1.5).set_requires_grad(true);
  Tensor y = mul(x, x);  // no active tape
  CHECK(y.item() == 2.25);
  Tape tape;
  CHECK(tape.recorded_ops() == 0);
}

TEST_CASE("finite_diff_grad on known functions") {
  auto square = [](std::span<const double> v) { return v[0] * v[0]; };
  std::vector<double> at{3.0};
  auto g = finite_diff_grad(square, at, 1e-5);
  CHECK(std::abs(g[0] - 6.0) < 1e-4);

  auto constant = [](std::span<const double>) { return 7.0; };
  std::vector<double> at3{1.0, 2.0, 3.0};
  for (double gi : finite_diff_grad(constant, at3, 1e-5)) {
    CHECK(std::abs(gi) < 1e-9);
  }

  auto total = [](std::span<const double> v) {
    double acc = 0;
    for (double vi : v) acc += vi;
    return acc;
  };
  for (double gi : finite_diff_grad(total, at3, 1e-5)) {
    CHECK(gi == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("gradcheck suite passes") {
  GradCheckReport report = run_gradcheck(1);
  for (const GradCheckCase& c : report.cases) {
    INFO(c.name, " worst=", c.worst_rel_error);
    CHECK(c.passed);
  }
  CHECK(report.cases.size() >= 25);
}

TEST_CASE("gradcheck catches a corrupted gradient rule") {
  // Negative control: an intentionally wrong backward closure must be flagged.
  Tensor x = Tensor::row({0.7, -1.3, 0.4}).set_requires_grad(true);
  auto forward = [&] {
    Tensor y = detail::op_result(1, 3, {&x});
    auto xv = x.values();
    auto yv = y.raw_values();
    for (std::size_t i = 0; i < 3; ++i) yv[i] = xv[i] * xv[i];
    if (detail::op_should_record(y)) {
      auto xn = x.node();
      auto yn = y.node();
      Tape::active()->record([xn, yn] {
        xn->ensure_grad();
        for (std::size_t i = 0; i < 3; ++i) {
          xn->grad[i] += 3.0 * xn->data[i] * yn->grad[i];  // wrong: 3x, not 2x
        }
      });
    }
    return sum_all(y);
  };
  std::vector<double> x0(x.values().begin(), x.values().end());
  auto f = [&](std::span<const double> p) {
    std::copy(p.begin(), p.end(), x.raw_values().begin());
    NoGradScope no_grad;
    return forward().item();
  };
  auto fd = finite_diff_grad(f, x0, 1e-5);
  std::copy(x0.begin(), x0.end(), x.raw_values().begin());
  {
    Tape tape;
    tape.backward(forward());
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    worst = std::max(worst, relative_error(x.grad()[i], fd[i]));
  }
  CHECK(worst > 1e-3);
}

TEST_CASE("determinism: identical inputs give identical bits") {
  Rng rng1(11), rng2(11);
  Tensor a1 = Tensor::uniform(4, 4, -1, 1, rng1);
  Tensor a2 = Tensor::uniform(4, 4, -1, 1, rng2);
  Tensor r1 = rowwise_softmax(matmul(a1, a1));
  Tensor r2 = rowwise_softmax(matmul(a2, a2));
  for (std::size_t i = 0; i < r1.size(); ++i) {
    CHECK(r1.values()[i] == r2.values()[i]);
  }
}

TEST_CASE("slices and rowwise add") {
  Tensor x = Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6});
  Tensor r = slice_rows(x, 1, 2);
  CHECK(r.at(0, 0) == 3.0);
  CHECK(r.at(0, 1) == 4.0);
  Tensor c = slice_cols(x, 1, 2);
  CHECK(c.at(2, 0) == 6.0);
  Tensor biased = add_rowwise(x, Tensor::row({10, 20}));
  CHECK(biased.at(0, 0) == 11.0);
  CHECK(biased.at(2, 1) == 26.0);
}

TEST_CASE("dropout") {
  Rng rng(5);
  Tensor x = Tensor::full(10, 10, 1.0);
  Tensor kept = dropout(x, 0.0, rng);
  CHECK(kept.same_node(x));  // rate 0 is the identity
  Tensor dropped = dropout(x, 0.5, rng);
  int zeros = 0;
  for (double v : dropped.values()) {
    if (v == 0.0) ++zeros;
    else CHECK(v == doctest::Approx(2.0));
  }
  CHECK(zeros > 20);
  CHECK(zeros < 80);
  CHECK_THROWS_AS(dropout(x, 1.0, rng), ConfigError);
}

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor::matrix(2, 2, {1.0, 2.0, 3.0}), DimensionError);
  CHECK_THROWS_AS(Tensor::row({1.0, std::nan("")}), ValidationError);
  Tensor t = Tensor::zeros(2, 3);
  CHECK(t.shape() == std::vector<std::size_t>{2, 3});
  CHECK(t.size() == 6);
}
