#include <cmath>

#include "doctest.h"
#include "s2c/error.hpp"
#include "s2c/model.hpp"
#include "s2c/nn.hpp"

using namespace s2c;
using namespace s2c::nn;

namespace {

Tensor random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  auto rng = make_rng(seed, Stream::test_data);
  Tensor t(s);
  for (auto& v : t.data()) v = lo + (hi - lo) * uniform01(rng);
  return t;
}

// Values bounded away from zero (relu kink) and pairwise distinct (pool ties).
Tensor distinct_tensor(Shape s, std::uint64_t seed) {
  auto rng = make_rng(seed, Stream::test_data);
  Tensor t(s);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double mag = 0.05 + 0.9 * (static_cast<double>(i) + uniform01(rng) * 0.5) / static_cast<double>(t.size());
    t[i] = uniform01(rng) < 0.5 ? -mag : mag;
  }
  return t;
}

GradCheckOptions tight() {
  GradCheckOptions o;
  o.tolerance = 1e-6;
  return o;
}

// Conv whose backward is scaled by `scale`: a deliberately broken op.
Var scaled_conv(Tape& t, Var x, Var w, Var b, double scale) {
  const Tensor out = conv2d_forward(t.value(x), t.value(w), t.value(b));
  return t.record(out, {x, w, b}, [x, w, b, scale](Tape& tp, const Tensor& dy) {
    Tensor dx(tp.value(x).shape()), dw(tp.value(w).shape()), db(tp.value(b).shape());
    conv2d_backward(tp.value(x), tp.value(w), dy, &dx, &dw, &db);
    for (auto* g : {&dx, &dw, &db})
      for (auto& v : g->data()) v *= scale;
    tp.accumulate(x, dx.data());
    tp.accumulate(w, dw.data());
    tp.accumulate(b, db.data());
  });
}

}  // namespace

TEST_SUITE("nn") {

TEST_CASE("conv2d hand examples") {
  Tape t(false);
  Tensor w({1, 1, 3, 3}, 0.0);
  w.at(0, 0, 1, 1) = 1.0;
  const auto x = random_tensor({1, 1, 5, 4}, 1);
  const auto y = t.value(conv2d(t, t.input(x), t.input(w), t.input(Tensor({1, 1, 1, 1}))));
  CHECK(y == x);

  const auto ones = t.value(conv2d(t, t.input(Tensor({1, 1, 3, 3}, 1.0)), t.input(Tensor({1, 1, 3, 3}, 1.0)),
                                   t.input(Tensor({1, 1, 1, 1}))));
  CHECK(ones.at(0, 0, 1, 1) == 9.0);
  CHECK(ones.at(0, 0, 0, 0) == 4.0);
  CHECK(ones.at(0, 0, 0, 1) == 6.0);
}

TEST_CASE("conv2d matches direct summation") {
  const auto x = random_tensor({2, 3, 5, 6}, 2);
  const auto w = random_tensor({4, 3, 3, 3}, 3);
  const auto b = random_tensor({1, 4, 1, 1}, 4);
  const auto y = conv2d_forward(x, w, b);
  for (int n = 0; n < 2; ++n)
    for (int o = 0; o < 4; ++o)
      for (int yy = 0; yy < 5; ++yy)
        for (int xx = 0; xx < 6; ++xx) {
          double acc = b[static_cast<std::size_t>(o)];
          for (int c = 0; c < 3; ++c)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int sy = yy + ky - 1, sx = xx + kx - 1;
                if (sy >= 0 && sy < 5 && sx >= 0 && sx < 6) acc += w.at(o, c, ky, kx) * x.at(n, c, sy, sx);
              }
          CHECK(y.at(n, o, yy, xx) == doctest::Approx(acc).epsilon(1e-12));
        }
}

TEST_CASE("conv2d gradient") {
  ParamStore ps;
  auto rng = make_rng(5, Stream::test_data);
  ps.add_conv("c", 3, 2, 3, rng);
  ps.value("c.b") = random_tensor({1, 2, 1, 1}, 6);
  const auto coeff = random_tensor({2, 2, 6, 6}, 7);
  const auto rep = grad_check(
      [&](Tape& t, std::span<const Var> v) {
        return weighted_sum(t, conv2d(t, v[0], t.param(ps, "c.w"), t.param(ps, "c.b")), coeff);
      },
      &ps, {random_tensor({2, 3, 6, 6}, 8)}, tight());
  CHECK(rep.pass);
  CHECK(rep.max_rel_error < 1e-6);
  CHECK(rep.checked >= 200);
}

TEST_CASE("conv2d shape errors") {
  Tape t(false);
  CHECK_THROWS_AS(conv2d(t, t.input(Tensor({1, 2, 4, 4})), t.input(Tensor({1, 3, 3, 3})), t.input(Tensor({1, 1, 1, 1}))),
                  Error);
  CHECK_THROWS_AS(conv2d(t, t.input(Tensor({1, 1, 4, 4})), t.input(Tensor({1, 1, 2, 2})), t.input(Tensor({1, 1, 1, 1}))),
                  Error);
}

TEST_CASE("relu and sigmoid values and gradients") {
  Tape t(false);
  const auto r = t.value(relu(t, t.input(Tensor({1, 1, 1, 2}, std::vector<double>{-1.0, 2.0}))));
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 2.0);
  CHECK(t.value(sigmoid(t, t.input(Tensor({1, 1, 1, 1}))))[0] == 0.5);
  const auto big = t.value(sigmoid(t, t.input(Tensor({1, 1, 1, 2}, std::vector<double>{-40.0, 40.0}))));
  CHECK(big[0] > 0.0);
  CHECK(big[1] < 1.0 + 1e-15);

  const auto coeff = random_tensor({1, 2, 4, 4}, 9);
  const auto rr = grad_check([&](Tape& tp, std::span<const Var> v) { return weighted_sum(tp, relu(tp, v[0]), coeff); },
                             nullptr, {distinct_tensor({1, 2, 4, 4}, 10)}, tight());
  CHECK(rr.pass);
  CHECK(rr.skipped == 0);
  const auto rs = grad_check([&](Tape& tp, std::span<const Var> v) { return weighted_sum(tp, sigmoid(tp, v[0]), coeff); },
                             nullptr, {random_tensor({1, 2, 4, 4}, 11, -3, 3)}, tight());
  CHECK(rs.pass);
}

TEST_CASE("pool and upsample") {
  Tape t(false);
  const auto p = t.value(maxpool2(t, t.input(Tensor({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4}))));
  CHECK(p.shape() == Shape{1, 1, 1, 1});
  CHECK(p[0] == 4.0);
  const auto x = random_tensor({2, 3, 6, 8}, 12);
  CHECK(t.value(upsample2(t, maxpool2(t, t.input(x)))).shape() == x.shape());
  CHECK_THROWS_AS(maxpool2(t, t.input(Tensor({1, 1, 3, 4}))), Error);

  const auto c1 = random_tensor({1, 2, 3, 3}, 13);
  const auto rp = grad_check([&](Tape& tp, std::span<const Var> v) { return weighted_sum(tp, maxpool2(tp, v[0]), c1); },
                             nullptr, {distinct_tensor({1, 2, 6, 6}, 14)}, tight());
  CHECK(rp.pass);
  const auto c2 = random_tensor({1, 2, 12, 12}, 15);
  const auto ru = grad_check([&](Tape& tp, std::span<const Var> v) { return weighted_sum(tp, upsample2(tp, v[0]), c2); },
                             nullptr, {random_tensor({1, 2, 6, 6}, 16)}, tight());
  CHECK(ru.pass);
}

TEST_CASE("concat and split") {
  Tape t(false);
  const auto a = random_tensor({1, 3, 8, 8}, 17), b = random_tensor({1, 2, 8, 8}, 18);
  const auto c = t.value(concat_channels(t, t.input(a), t.input(b)));
  CHECK(c.shape() == Shape{1, 5, 8, 8});
  const auto [sa, sb] = split_channels(c, 3);
  CHECK(sa == a);
  CHECK(sb == b);
  CHECK_THROWS_AS(concat_channels(t, t.input(a), t.input(Tensor({1, 2, 4, 8}))), Error);

  const auto coeff = random_tensor({1, 5, 8, 8}, 19);
  const auto r = grad_check(
      [&](Tape& tp, std::span<const Var> v) { return weighted_sum(tp, concat_channels(tp, v[0], v[1]), coeff); },
      nullptr, {a, b}, tight());
  CHECK(r.pass);
}

TEST_CASE("bce loss values and gradient") {
  Tape t(false);
  Tensor target({1, 1, 2, 2}, std::vector<double>{0, 1, 1, 0});
  CHECK(t.value(bce_loss(t, t.input(Tensor({1, 1, 2, 2}, 0.5)), target, 1.0))[0] ==
        doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(t.value(bce_loss(t, t.input(target), target, 1.0))[0] < 2e-6);
  // w scales only the water term: half the pixels are water
  CHECK(t.value(bce_loss(t, t.input(Tensor({1, 1, 2, 2}, 0.5)), target, 3.0))[0] ==
        doctest::Approx(0.5 * (3.0 + 1.0) * std::log(2.0)).epsilon(1e-14));
  CHECK_THROWS_AS(bce_loss(t, t.input(Tensor({1, 1, 2, 2}, 0.5)), Tensor({1, 1, 2, 2}, 0.5), 1.0), Error);

  const auto pred = random_tensor({1, 1, 4, 4}, 20, 0.05, 0.95);
  Tensor tg({1, 1, 4, 4});
  for (std::size_t i = 0; i < tg.size(); ++i) tg[i] = i % 3 == 0;
  for (double w : {1.0, 2.5}) {
    const auto r = grad_check([&](Tape& tp, std::span<const Var> v) { return bce_loss(tp, v[0], tg, w); }, nullptr,
                              {pred}, tight());
    CHECK(r.pass);
  }
}

TEST_CASE("add gradient") {
  const auto coeff = random_tensor({1, 2, 3, 3}, 21);
  const auto r = grad_check([&](Tape& tp, std::span<const Var> v) { return weighted_sum(tp, add(tp, v[0], v[1]), coeff); },
                            nullptr, {random_tensor({1, 2, 3, 3}, 22), random_tensor({1, 2, 3, 3}, 23)}, tight());
  CHECK(r.pass);
}

TEST_CASE("identity op has exact gradient") {
  const auto coeff = random_tensor({1, 1, 4, 4}, 24);
  const auto r = grad_check([&](Tape& tp, std::span<const Var> v) { return weighted_sum(tp, v[0], coeff); }, nullptr,
                            {random_tensor({1, 1, 4, 4}, 25)});
  CHECK(r.pass);
  CHECK(r.max_rel_error < 1e-9);
}

TEST_CASE("corrupted conv backward is caught") {
  ParamStore ps;
  auto rng = make_rng(26, Stream::test_data);
  ps.add_conv("c", 2, 2, 3, rng);
  const auto coeff = random_tensor({1, 2, 5, 5}, 27);
  auto run = [&](double scale) {
    return grad_check(
        [&](Tape& t, std::span<const Var> v) {
          return weighted_sum(t, scaled_conv(t, v[0], t.param(ps, "c.w"), t.param(ps, "c.b"), scale), coeff);
        },
        &ps, {random_tensor({1, 2, 5, 5}, 28)});
  };
  CHECK(run(1.0).pass);
  const auto bad = run(1.01);
  CHECK_FALSE(bad.pass);
  CHECK(bad.max_rel_error > 1e-3);
}

TEST_CASE("tiny stage-1 network gradient") {
  model::UNet net({2, 4, 4, 3}, 3);
  // non-zero biases so every parameter's gradient is exercised
  for (auto& [name, e] : net.params().entries())
    if (name.ends_with(".b")) e.value = random_tensor(e.value.shape(), 29, -0.1, 0.1);
  Tensor target({1, 1, 8, 8});
  for (std::size_t i = 0; i < target.size(); ++i) target[i] = (i * 7) % 5 < 2;
  const auto r = grad_check(
      [&](Tape& t, std::span<const Var> v) { return bce_loss(t, net.forward(t, v[0]), target, 1.0); }, &net.params(),
      {random_tensor({1, 4, 8, 8}, 30, 0.0, 1.0)});
  CHECK(r.pass);
  CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("sgd step") {
  ParamStore ps;
  ps.add("p", {1, 1, 1, 3}) = Tensor({1, 1, 1, 3}, std::vector<double>{1.0, -2.0, 0.5});
  auto& e = ps.entry("p");
  e.grad = Tensor({1, 1, 1, 3}, std::vector<double>{0.3, -1.0, 2.0});
  e.has_grad = true;
  OptimState st;
  st.kind = OptimKind::sgd_momentum;
  st.learning_rate = 0.1;
  st.momentum = 0.0;
  optim_step(ps, st);
  CHECK(ps.value("p")[0] == doctest::Approx(1.0 - 0.03));
  CHECK(ps.value("p")[1] == doctest::Approx(-2.0 + 0.1));
  CHECK(ps.value("p")[2] == doctest::Approx(0.5 - 0.2));
  CHECK(st.step_count == 1);
  for (double g : ps.entry("p").grad.data()) CHECK(g == 0.0);
}

TEST_CASE("adam matches a scalar oracle") {
  const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const std::vector<double> grads = {0.5, -0.2, 0.05, 1.5, -3.0};
  ParamStore ps;
  ps.add("p", {1, 1, 1, 1})[0] = 2.0;
  OptimState st;
  st.kind = OptimKind::adam;
  st.learning_rate = lr;
  double p = 2.0, m = 0.0, v = 0.0;
  for (std::size_t k = 0; k < grads.size(); ++k) {
    const double g = grads[k];
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, static_cast<double>(k + 1)));
    const double vh = v / (1 - std::pow(b2, static_cast<double>(k + 1)));
    p -= lr * mh / (std::sqrt(vh) + eps);
    auto& e = ps.entry("p");
    e.grad[0] = g;
    e.has_grad = true;
    optim_step(ps, st);
    CHECK(ps.value("p")[0] == doctest::Approx(p).epsilon(1e-12));
  }
  // first step moves by ~lr regardless of gradient scale
  ParamStore q;
  q.add("p", {1, 1, 1, 1})[0] = 0.0;
  q.entry("p").grad[0] = 1234.0;
  q.entry("p").has_grad = true;
  OptimState s2;
  s2.learning_rate = lr;
  optim_step(q, s2);
  CHECK(q.value("p")[0] == doctest::Approx(-lr).epsilon(1e-6));
}

TEST_CASE("optimizer rejects missing gradients and bad hyperparameters") {
  ParamStore ps;
  ps.add("p", {1, 1, 1, 1});
  OptimState st;
  CHECK_THROWS_AS(optim_step(ps, st), Error);
  ps.entry("p").has_grad = true;
  st.learning_rate = -1.0;
  CHECK_THROWS_AS(optim_step(ps, st), Error);
}

TEST_CASE("training steps are deterministic and descend") {
  auto run = [](int steps, std::vector<double>* losses) {
    model::UNet net({2, 4, 4, 3}, 11);
    const auto x = random_tensor({2, 4, 8, 8}, 31, 0.0, 1.0);
    Tensor target({2, 1, 8, 8});
    for (std::size_t i = 0; i < target.size(); ++i) target[i] = x[i] > 0.5;
    OptimState st;
    st.learning_rate = 1e-3;
    for (int s = 0; s < steps; ++s) {
      Tape t;
      const auto loss = bce_loss(t, net.forward(t, t.input(x)), target, 1.0);
      if (losses) losses->push_back(t.value(loss)[0]);
      t.backward(loss);
      optim_step(net.params(), st);
    }
    return net.params();
  };
  std::vector<double> losses;
  run(11, &losses);
  for (int i = 1; i <= 10; ++i) CHECK(losses[static_cast<std::size_t>(i)] < losses[static_cast<std::size_t>(i - 1)]);
  CHECK(run(100, nullptr) == run(100, nullptr));
}

TEST_CASE("non-finite values are a numeric error") {
  Tensor t({1, 1, 1, 2}, std::vector<double>{1.0, std::nan("")});
  try {
    check_finite(t, "test");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::numeric);
  }
}

}  // TEST_SUITE
