#include "s2c/gradcheck.hpp"

#include "s2c/error.hpp"
#include "s2c/model.hpp"

namespace s2c {

namespace {

nn::Tensor random_tensor(nn::Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  nn::Tensor t(s);
  for (auto& v : t.data()) v = lo + (hi - lo) * uniform01(rng);
  return t;
}

nn::Tensor random_mask(nn::Shape s, Rng& rng) {
  nn::Tensor t(s);
  for (auto& v : t.data()) v = uniform01(rng) < 0.4 ? 1.0 : 0.0;
  return t;
}

}  // namespace

std::vector<GradcheckCase> gradcheck_suite(const GradcheckSpec& spec) {
  require(spec.size % (1 << spec.levels) == 0, "gradcheck size must be divisible by 2^levels");
  auto rng = make_rng(spec.options.seed, Stream::grad_check);
  const int n = spec.batch;
  const int h = spec.size;
  const nn::Shape img{n, 3, h, h};
  std::vector<GradcheckCase> out;
  auto check = [&](const std::string& name, const nn::LossFn& loss, nn::ParamStore* ps, std::vector<nn::Tensor> in) {
    out.push_back({name, nn::grad_check(loss, ps, std::move(in), spec.options)});
  };

  // Each op is followed by a random linear read-out so every output element
  // carries gradient.
  {
    nn::ParamStore ps;
    ps.add_conv("c", 3, 2, 3, rng);
    ps.value("c.b") = random_tensor({1, 2, 1, 1}, rng);
    const auto coeff = random_tensor({n, 2, h, h}, rng);
    check("conv2d", [&](nn::Tape& t, std::span<const nn::Var> v) {
      return nn::weighted_sum(t, nn::conv2d(t, v[0], t.param(ps, "c.w"), t.param(ps, "c.b")), coeff);
    }, &ps, {random_tensor(img, rng)});
  }
  {
    nn::ParamStore ps;
    ps.add_conv("c", 3, 2, 1, rng);
    const auto coeff = random_tensor({n, 2, h, h}, rng);
    check("conv2d_1x1", [&](nn::Tape& t, std::span<const nn::Var> v) {
      return nn::weighted_sum(t, nn::conv2d(t, v[0], t.param(ps, "c.w"), t.param(ps, "c.b")), coeff);
    }, &ps, {random_tensor(img, rng)});
  }
  const auto coeff_same = random_tensor(img, rng);
  check("relu", [&](nn::Tape& t, std::span<const nn::Var> v) {
    return nn::weighted_sum(t, nn::relu(t, v[0]), coeff_same);
  }, nullptr, {random_tensor(img, rng)});
  check("sigmoid", [&](nn::Tape& t, std::span<const nn::Var> v) {
    return nn::weighted_sum(t, nn::sigmoid(t, v[0]), coeff_same);
  }, nullptr, {random_tensor(img, rng, -4.0, 4.0)});
  {
    const auto coeff = random_tensor({n, 3, h / 2, h / 2}, rng);
    check("maxpool2", [&](nn::Tape& t, std::span<const nn::Var> v) {
      return nn::weighted_sum(t, nn::maxpool2(t, v[0]), coeff);
    }, nullptr, {random_tensor(img, rng)});
  }
  {
    const auto coeff = random_tensor({n, 3, 2 * h, 2 * h}, rng);
    check("upsample2", [&](nn::Tape& t, std::span<const nn::Var> v) {
      return nn::weighted_sum(t, nn::upsample2(t, v[0]), coeff);
    }, nullptr, {random_tensor(img, rng)});
  }
  {
    const auto coeff = random_tensor({n, 5, h, h}, rng);
    check("concat", [&](nn::Tape& t, std::span<const nn::Var> v) {
      return nn::weighted_sum(t, nn::concat_channels(t, v[0], v[1]), coeff);
    }, nullptr, {random_tensor(img, rng), random_tensor({n, 2, h, h}, rng)});
  }
  check("add", [&](nn::Tape& t, std::span<const nn::Var> v) {
    return nn::weighted_sum(t, nn::add(t, v[0], v[1]), coeff_same);
  }, nullptr, {random_tensor(img, rng), random_tensor(img, rng)});
  {
    const auto target = random_mask(img, rng);
    check("bce_loss", [&](nn::Tape& t, std::span<const nn::Var> v) {
      return nn::bce_loss(t, v[0], target, 1.7);
    }, nullptr, {random_tensor(img, rng, 0.05, 0.95)});
  }

  // Full refiner: stage-1 logits feed both the fused input and the residual.
  model::ArchSpec a1{spec.levels, spec.base_channels, spec.in_channels, 3};
  model::ArchSpec a2{spec.levels, spec.base_channels, spec.in_channels + 2, 3};
  auto m = model::Model::refiner(a1, a2, true, spec.options.seed);
  // A zero head would hide every stage-2 gradient but its own.
  for (auto* store : {&m.stage1().params(), &m.stage2()->params()})
    for (auto& [name, e] : store->entries())
      if (name.size() > 2 && name.substr(name.size() - 2) == ".b") e.value = random_tensor(e.value.shape(), rng, -0.1, 0.1);
  m.stage2()->params().value("head.w") = random_tensor(m.stage2()->params().value("head.w").shape(), rng, -0.5, 0.5);
  const auto x = random_tensor({n, spec.in_channels, h, h}, rng, 0.0, 1.0);
  const auto pts = random_mask({n, 1, h, h}, rng);
  const auto target = random_mask({n, 1, h, h}, rng);
  const nn::LossFn refiner_loss = [&](nn::Tape& t, std::span<const nn::Var> v) {
    auto z1 = m.stage1().forward_logits(t, v[0]);
    auto fused = nn::concat_channels(t, nn::concat_channels(t, v[0], nn::sigmoid(t, z1)), v[1]);
    auto p2 = nn::sigmoid(t, nn::add(t, z1, m.stage2()->forward_logits(t, fused)));
    return nn::bce_loss(t, p2, target, 1.0);
  };
  check("refiner.stage1", refiner_loss, &m.stage1().params(), {x, pts});
  m.stage2()->params().zero_grad();
  check("refiner.stage2", refiner_loss, &m.stage2()->params(), {x, pts});
  m.stage1().params().zero_grad();
  return out;
}

}  // namespace s2c
