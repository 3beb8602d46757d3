#include "s2c/nn.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "s2c/error.hpp"

namespace s2c::nn {

std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," + std::to_string(s.h) + "," +
         std::to_string(s.w) + ")";
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
  require(data_.size() == shape_.size(), "tensor data length does not match shape " + to_string(shape_));
}

Tensor Tensor::image(int n) const {
  Shape s = shape_;
  s.n = 1;
  const std::size_t per = s.size();
  std::vector<double> d(data_.begin() + static_cast<std::ptrdiff_t>(n * per),
                        data_.begin() + static_cast<std::ptrdiff_t>((n + 1) * per));
  return Tensor(s, std::move(d));
}

void check_finite(const Tensor& t, const char* op) {
  for (double v : t.data())
    if (!std::isfinite(v)) fail(ErrorKind::numeric, std::string("non-finite value produced by ") + op);
}

// --- ParamStore --------------------------------------------------------------

Tensor& ParamStore::add(const std::string& name, Shape shape) {
  require(!entries_.count(name), "duplicate parameter name " + name);
  auto& e = entries_[name];
  e.value = Tensor(shape);
  e.grad = Tensor(shape);
  return e.value;
}

void ParamStore::add_conv(const std::string& name, int cin, int cout, int k, Rng& rng) {
  require(k % 2 == 1 && cin > 0 && cout > 0, "conv layer needs odd k and positive channels");
  auto& w = add(name + ".w", {cout, cin, k, k});
  add(name + ".b", {1, cout, 1, 1});
  const double bound = std::sqrt(6.0 / (cin * k * k));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : w.data()) v = dist(rng);
}

Tensor& ParamStore::value(const std::string& name) { return entry(name).value; }

const Tensor& ParamStore::value(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) fail(ErrorKind::usage, "unknown parameter " + name);
  return it->second.value;
}

ParamStore::Entry& ParamStore::entry(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) fail(ErrorKind::usage, "unknown parameter " + name);
  return it->second;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, e] : entries_) n += e.value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, e] : entries_) {
    std::fill(e.grad.data().begin(), e.grad.data().end(), 0.0);
    e.has_grad = false;
  }
}

bool operator==(const ParamStore& a, const ParamStore& b) {
  if (a.entries_.size() != b.entries_.size()) return false;
  for (auto ia = a.entries_.begin(), ib = b.entries_.begin(); ia != a.entries_.end(); ++ia, ++ib)
    if (ia->first != ib->first || !(ia->second.value == ib->second.value)) return false;
  return true;
}

// --- Tape --------------------------------------------------------------------

Var Tape::input(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = grad_enabled_ && requires_grad;
  nodes_.push_back(std::move(n));
  return {static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(ParamStore& store, const std::string& name) {
  Node n;
  n.value = store.value(name);
  n.requires_grad = grad_enabled_;
  n.store = &store;
  n.param_name = name;
  nodes_.push_back(std::move(n));
  return {static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(Tensor value, std::vector<Var> inputs, Backward backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad =
      grad_enabled_ && std::any_of(inputs.begin(), inputs.end(), [&](Var v) { return requires_grad(v); });
  if (n.requires_grad) {
    n.inputs = std::move(inputs);
    n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return {static_cast<int>(nodes_.size()) - 1};
}

const Tensor& Tape::grad(Var v) {
  auto& n = nodes_[static_cast<std::size_t>(v.id)];
  if (!n.grad_ready) {
    n.grad = Tensor(n.value.shape());
    n.grad_ready = true;
  }
  return n.grad;
}

void Tape::accumulate(Var v, std::span<const double> g) {
  auto& n = nodes_[static_cast<std::size_t>(v.id)];
  if (!n.requires_grad) return;
  if (!n.grad_ready) {
    n.grad = Tensor(n.value.shape());
    n.grad_ready = true;
  }
  auto d = n.grad.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
}

void Tape::backward(Var out) {
  require(grad_enabled_, "backward on a tape with gradients disabled");
  auto& root = nodes_[static_cast<std::size_t>(out.id)];
  require(root.value.size() == 1, "backward requires a scalar output");
  for (auto& n : nodes_) n.grad_ready = false;
  root.grad = Tensor(root.value.shape(), 1.0);
  root.grad_ready = true;
  for (int i = out.id; i >= 0; --i) {
    auto& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || !n.grad_ready || !n.backward) continue;
    n.backward(*this, n.grad);
  }
  for (auto& n : nodes_) {
    if (!n.store || !n.grad_ready) continue;
    auto& e = n.store->entry(n.param_name);
    auto dst = e.grad.data();
    auto src = n.grad.data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    e.has_grad = true;
  }
}

// --- convolution ---------------------------------------------------------------

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

struct ConvGeom {
  int n, cin, cout, h, w, k, pad;
  std::size_t hw() const { return static_cast<std::size_t>(h) * w; }
  std::size_t rows() const { return static_cast<std::size_t>(cin) * k * k; }
};

ConvGeom conv_geom(const Tensor& x, const Tensor& w, const Tensor* b) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (ws.h != ws.w || ws.h % 2 == 0) fail(ErrorKind::usage, "conv2d kernel must be square with odd size");
  if (ws.c != xs.c) fail(ErrorKind::usage, "conv2d channel mismatch: input " + to_string(xs) + " kernel " + to_string(ws));
  if (b && !(b->shape() == Shape{1, ws.n, 1, 1})) fail(ErrorKind::usage, "conv2d bias shape mismatch");
  return {xs.n, xs.c, ws.n, xs.h, xs.w, ws.h, ws.h / 2};
}

// cols[(ci*k + ky)*k + kx][y*W + x] = x[ci][y+ky-pad][x+kx-pad], zero outside.
void im2col(const double* img, const ConvGeom& g, double* cols) {
  const std::size_t hw = g.hw();
  for (int ci = 0; ci < g.cin; ++ci) {
    const double* plane = img + static_cast<std::size_t>(ci) * hw;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        double* row = cols + ((static_cast<std::size_t>(ci) * g.k + ky) * g.k + kx) * hw;
        const int dx = kx - g.pad;
        const int x0 = std::max(0, -dx);
        const int x1 = std::min(g.w, g.w - dx);
        for (int y = 0; y < g.h; ++y) {
          double* dst = row + static_cast<std::size_t>(y) * g.w;
          const int sy = y + ky - g.pad;
          if (sy < 0 || sy >= g.h || x1 <= x0) {
            std::fill(dst, dst + g.w, 0.0);
            continue;
          }
          std::fill(dst, dst + x0, 0.0);
          std::memcpy(dst + x0, plane + static_cast<std::size_t>(sy) * g.w + x0 + dx, sizeof(double) * (x1 - x0));
          std::fill(dst + x1, dst + g.w, 0.0);
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeom& g, double* img) {
  const std::size_t hw = g.hw();
  for (int ci = 0; ci < g.cin; ++ci) {
    double* plane = img + static_cast<std::size_t>(ci) * hw;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const double* row = cols + ((static_cast<std::size_t>(ci) * g.k + ky) * g.k + kx) * hw;
        const int dx = kx - g.pad;
        const int x0 = std::max(0, -dx);
        const int x1 = std::min(g.w, g.w - dx);
        for (int y = 0; y < g.h; ++y) {
          const int sy = y + ky - g.pad;
          if (sy < 0 || sy >= g.h) continue;
          const double* src = row + static_cast<std::size_t>(y) * g.w;
          double* dst = plane + static_cast<std::size_t>(sy) * g.w + dx;
          for (int x = x0; x < x1; ++x) dst[x] += src[x];
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  const auto g = conv_geom(x, w, &b);
  Tensor y({g.n, g.cout, g.h, g.w});
  const std::size_t hw = g.hw();
  const std::size_t rows = g.rows();
  std::vector<double> cols(g.k == 1 ? 0 : rows * hw);
  for (int n = 0; n < g.n; ++n) {
    const double* img = x.data().data() + static_cast<std::size_t>(n) * g.cin * hw;
    const double* src = img;
    if (g.k != 1) {
      im2col(img, g, cols.data());
      src = cols.data();
    }
    double* out = y.data().data() + static_cast<std::size_t>(n) * g.cout * hw;
    const auto hwi = static_cast<Eigen::Index>(hw);
    MatMap(out, g.cout, hwi).noalias() =
        ConstMatMap(w.data().data(), g.cout, static_cast<Eigen::Index>(rows)) * ConstMatMap(src, static_cast<Eigen::Index>(rows), hwi);
    for (int co = 0; co < g.cout; ++co) {
      const double bias = b[static_cast<std::size_t>(co)];
      double* p = out + static_cast<std::size_t>(co) * hw;
      for (std::size_t i = 0; i < hw; ++i) p[i] += bias;
    }
  }
  return y;
}

void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor* dx, Tensor* dw, Tensor* db) {
  const auto g = conv_geom(x, w, nullptr);
  require(dy.shape() == Shape{g.n, g.cout, g.h, g.w}, "conv2d upstream gradient shape mismatch");
  const std::size_t hw = g.hw();
  const std::size_t rows = g.rows();
  std::vector<double> cols(g.k == 1 ? 0 : rows * hw);
  std::vector<double> dcols(dx ? rows * hw : 0);
  for (int n = 0; n < g.n; ++n) {
    const double* img = x.data().data() + static_cast<std::size_t>(n) * g.cin * hw;
    const double* grad = dy.data().data() + static_cast<std::size_t>(n) * g.cout * hw;
    if (db) {
      for (int co = 0; co < g.cout; ++co) {
        const double* p = grad + static_cast<std::size_t>(co) * hw;
        (*db)[static_cast<std::size_t>(co)] += std::accumulate(p, p + hw, 0.0);
      }
    }
    if (dw) {
      const double* src = img;
      if (g.k != 1) {
        im2col(img, g, cols.data());
        src = cols.data();
      }
      MatMap(dw->data().data(), g.cout, static_cast<Eigen::Index>(rows)).noalias() +=
          ConstMatMap(grad, g.cout, static_cast<Eigen::Index>(hw)) *
          ConstMatMap(src, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(hw)).transpose();
    }
    if (dx) {
      double* dimg = dx->data().data() + static_cast<std::size_t>(n) * g.cin * hw;
      const ConstMatMap wm(w.data().data(), g.cout, static_cast<Eigen::Index>(rows));
      const ConstMatMap gy(grad, g.cout, static_cast<Eigen::Index>(hw));
      const auto wt = wm.transpose();
      if (g.k == 1) {
        MatMap(dimg, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(hw)).noalias() += wt * gy;
      } else {
        MatMap(dcols.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(hw)).noalias() = wt * gy;
        col2im_add(dcols.data(), g, dimg);
      }
    }
  }
}

Var conv2d(Tape& t, Var x, Var w, Var b) {
  Tensor y = conv2d_forward(t.value(x), t.value(w), t.value(b));
  check_finite(y, "conv2d");
  return t.record(std::move(y), {x, w, b}, [x, w, b](Tape& tape, const Tensor& g) {
    const Tensor& xv = tape.value(x);
    const Tensor& wv = tape.value(w);
    Tensor dx, dw, db;
    if (tape.requires_grad(x)) dx = Tensor(xv.shape());
    if (tape.requires_grad(w)) dw = Tensor(wv.shape());
    if (tape.requires_grad(b)) db = Tensor(tape.value(b).shape());
    conv2d_backward(xv, wv, g, tape.requires_grad(x) ? &dx : nullptr, tape.requires_grad(w) ? &dw : nullptr,
                    tape.requires_grad(b) ? &db : nullptr);
    if (tape.requires_grad(x)) tape.accumulate(x, dx.data());
    if (tape.requires_grad(w)) tape.accumulate(w, dw.data());
    if (tape.requires_grad(b)) tape.accumulate(b, db.data());
  });
}

// --- elementwise ---------------------------------------------------------------

Var relu(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  Tensor y(xv.shape());
  std::uint64_t word = 0;
  std::size_t bits = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const bool on = xv[i] > 0.0;
    y[i] = on ? xv[i] : 0.0;
    word = (word << 1) | (on ? 1u : 0u);
    if (++bits == 64) {
      t.mix_signature(word);
      word = 0;
      bits = 0;
    }
  }
  t.mix_signature(word);
  return t.record(std::move(y), {x}, [x](Tape& tape, const Tensor& g) {
    const Tensor& xv = tape.value(x);
    std::vector<double> dx(g.size());
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = xv[i] > 0.0 ? g[i] : 0.0;
    tape.accumulate(x, dx);
  });
}

Var sigmoid(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double v = xv[i];
    if (v >= 0.0) {
      y[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      y[i] = e / (1.0 + e);
    }
  }
  Tensor saved = t.grad_enabled() ? y : Tensor();
  return t.record(std::move(y), {x}, [x, yv = std::move(saved)](Tape& tape, const Tensor& g) {
    std::vector<double> dx(g.size());
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = g[i] * yv[i] * (1.0 - yv[i]);
    tape.accumulate(x, dx);
  });
}

Var maxpool2(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  const auto s = xv.shape();
  if (s.h % 2 || s.w % 2) fail(ErrorKind::usage, "maxpool2 requires even spatial dimensions, got " + to_string(s));
  Tensor y({s.n, s.c, s.h / 2, s.w / 2});
  std::vector<std::size_t> argmax(y.size());
  std::size_t o = 0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int yy = 0; yy < s.h / 2; ++yy)
        for (int xx = 0; xx < s.w / 2; ++xx, ++o) {
          std::size_t best = xv.index(n, c, 2 * yy, 2 * xx);
          for (auto cand : {xv.index(n, c, 2 * yy, 2 * xx + 1), xv.index(n, c, 2 * yy + 1, 2 * xx),
                            xv.index(n, c, 2 * yy + 1, 2 * xx + 1)})
            if (xv[cand] > xv[best]) best = cand;
          argmax[o] = best;
          y[o] = xv[best];
          t.mix_signature(best);
        }
  return t.record(std::move(y), {x}, [x, argmax = std::move(argmax)](Tape& tape, const Tensor& g) {
    std::vector<double> dx(tape.value(x).size(), 0.0);
    for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += g[i];
    tape.accumulate(x, dx);
  });
}

Var upsample2(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  const auto s = xv.shape();
  Tensor y({s.n, s.c, s.h * 2, s.w * 2});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int yy = 0; yy < 2 * s.h; ++yy)
        for (int xx = 0; xx < 2 * s.w; ++xx) y.at(n, c, yy, xx) = xv.at(n, c, yy / 2, xx / 2);
  return t.record(std::move(y), {x}, [x](Tape& tape, const Tensor& g) {
    const auto s = tape.value(x).shape();
    Tensor dx(s);
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c)
        for (int yy = 0; yy < 2 * s.h; ++yy)
          for (int xx = 0; xx < 2 * s.w; ++xx) dx.at(n, c, yy / 2, xx / 2) += g.at(n, c, yy, xx);
    tape.accumulate(x, dx.data());
  });
}

Var concat_channels(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  const auto sa = av.shape();
  const auto sb = bv.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w)
    fail(ErrorKind::usage, "concat_channels shape mismatch " + to_string(sa) + " vs " + to_string(sb));
  Tensor y({sa.n, sa.c + sb.c, sa.h, sa.w});
  const std::size_t pa = static_cast<std::size_t>(sa.c) * sa.plane();
  const std::size_t pb = static_cast<std::size_t>(sb.c) * sb.plane();
  for (int n = 0; n < sa.n; ++n) {
    double* dst = y.data().data() + n * (pa + pb);
    std::copy_n(av.data().data() + n * pa, pa, dst);
    std::copy_n(bv.data().data() + n * pb, pb, dst + pa);
  }
  const int ca = sa.c;
  return t.record(std::move(y), {a, b}, [a, b, ca](Tape& tape, const Tensor& g) {
    auto [ga, gb] = split_channels(g, ca);
    tape.accumulate(a, ga.data());
    tape.accumulate(b, gb.data());
  });
}

std::pair<Tensor, Tensor> split_channels(const Tensor& x, int ca) {
  const auto s = x.shape();
  require(ca >= 0 && ca <= s.c, "split_channels index out of range");
  Tensor a({s.n, ca, s.h, s.w});
  Tensor b({s.n, s.c - ca, s.h, s.w});
  const std::size_t pa = a.size() / static_cast<std::size_t>(s.n);
  const std::size_t pb = b.size() / static_cast<std::size_t>(s.n);
  for (int n = 0; n < s.n; ++n) {
    const double* src = x.data().data() + n * (pa + pb);
    std::copy_n(src, pa, a.data().data() + n * pa);
    std::copy_n(src + pa, pb, b.data().data() + n * pb);
  }
  return {std::move(a), std::move(b)};
}

Var bce_loss(Tape& t, Var pred, const Tensor& target, double weight_pos) {
  const Tensor& p = t.value(pred);
  if (!(p.shape() == target.shape()))
    fail(ErrorKind::usage, "bce_loss shape mismatch " + to_string(p.shape()) + " vs " + to_string(target.shape()));
  require(weight_pos > 0.0, "bce positive-class weight must be positive");
  constexpr double lo = 1e-7;
  constexpr double hi = 1.0 - 1e-7;
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double tv = target[i];
    if (tv != 0.0 && tv != 1.0) fail(ErrorKind::usage, "bce_loss target outside {0,1}");
    const double pc = std::clamp(p[i], lo, hi);
    if (pc != p[i]) t.mix_signature(i);
    sum += -(weight_pos * tv * std::log(pc) + (1.0 - tv) * std::log(1.0 - pc));
  }
  const double n = static_cast<double>(p.size());
  Tensor y({1, 1, 1, 1}, sum / n);
  check_finite(y, "bce_loss");
  return t.record(std::move(y), {pred}, [pred, target, weight_pos, n](Tape& tape, const Tensor& g) {
    const Tensor& p = tape.value(pred);
    std::vector<double> dp(p.size());
    for (std::size_t i = 0; i < dp.size(); ++i) {
      if (p[i] < lo || p[i] > hi) {
        dp[i] = 0.0;
        continue;
      }
      const double tv = target[i];
      dp[i] = g[0] * -(weight_pos * tv / p[i] - (1.0 - tv) / (1.0 - p[i])) / n;
    }
    tape.accumulate(pred, dp);
  });
}

Var weighted_sum(Tape& t, Var x, const Tensor& coeff) {
  const Tensor& xv = t.value(x);
  require(xv.shape() == coeff.shape(), "weighted_sum shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i] * coeff[i];
  return t.record(Tensor({1, 1, 1, 1}, s), {x}, [x, coeff](Tape& tape, const Tensor& g) {
    std::vector<double> dx(coeff.size());
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = g[0] * coeff[i];
    tape.accumulate(x, dx);
  });
}

Var add(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require(av.shape() == bv.shape(), "add shape mismatch");
  Tensor y(av.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
  return t.record(std::move(y), {a, b}, [a, b](Tape& tape, const Tensor& g) {
    tape.accumulate(a, g.data());
    tape.accumulate(b, g.data());
  });
}

// --- optimizers --------------------------------------------------------------

const char* to_string(OptimKind k) { return k == OptimKind::adam ? "adam" : "sgd"; }

OptimKind parse_optim_kind(const std::string& s) {
  if (s == "adam") return OptimKind::adam;
  if (s == "sgd" || s == "sgd_momentum") return OptimKind::sgd_momentum;
  fail(ErrorKind::usage, "unknown optimizer '" + s + "' (expected adam or sgd)");
}

void OptimState::validate() const {
  require(learning_rate > 0.0, "learning rate must be positive");
  require(momentum >= 0.0 && momentum < 1.0, "momentum/beta1 must be in [0,1)");
  require(beta2 > 0.0 && beta2 < 1.0, "beta2 must be in (0,1)");
  require(epsilon > 0.0, "epsilon must be positive");
}

void optim_step(ParamStore& params, OptimState& st) {
  st.validate();
  for (const auto& [name, e] : params.entries())
    if (!e.has_grad) fail(ErrorKind::usage, "optim_step: missing gradient for " + name);
  ++st.step_count;
  const double t = static_cast<double>(st.step_count);
  for (auto& [name, e] : params.entries()) {
    auto p = e.value.data();
    auto g = e.grad.data();
    auto& m = st.first[name];
    if (m.size() != p.size()) m = Tensor(e.value.shape());
    if (st.kind == OptimKind::sgd_momentum) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = st.momentum * m[i] + g[i];
        p[i] -= st.learning_rate * m[i];
      }
    } else {
      auto& v = st.second[name];
      if (v.size() != p.size()) v = Tensor(e.value.shape());
      const double c1 = 1.0 - std::pow(st.momentum, t);
      const double c2 = 1.0 - std::pow(st.beta2, t);
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = st.momentum * m[i] + (1.0 - st.momentum) * g[i];
        v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g[i] * g[i];
        p[i] -= st.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + st.epsilon);
      }
    }
    check_finite(e.value, "optim_step");
  }
  params.zero_grad();
}

// --- gradient check ------------------------------------------------------------

GradCheckReport grad_check(const LossFn& loss, ParamStore* params, std::vector<Tensor> inputs,
                           const GradCheckOptions& opt) {
  GradCheckReport rep;

  auto evaluate = [&](bool with_grad, std::vector<Tensor>* input_grads) {
    Tape tape(with_grad);
    std::vector<Var> vars;
    for (const auto& in : inputs) vars.push_back(tape.input(in, true));
    Var out = loss(tape, vars);
    require(tape.value(out).size() == 1, "grad_check loss must be scalar");
    if (with_grad) {
      tape.backward(out);
      for (Var v : vars) input_grads->push_back(tape.grad(v));
    }
    return std::pair{tape.value(out)[0], tape.signature()};
  };

  if (params) params->zero_grad();
  std::vector<Tensor> input_grads;
  const auto [f0, sig0] = evaluate(true, &input_grads);
  (void)f0;

  struct Target {
    std::string name;
    Tensor* value;
    const Tensor* analytic;
  };
  std::vector<Target> targets;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    targets.push_back({"input" + std::to_string(i), &inputs[i], &input_grads[i]});
  if (params)
    for (auto& [name, e] : params->entries()) targets.push_back({name, &e.value, &e.grad});

  auto rng = make_rng(opt.seed, Stream::grad_check);
  for (auto& tg : targets) {
    std::vector<std::size_t> idx(tg.value->size());
    std::iota(idx.begin(), idx.end(), 0);
    const std::size_t take = std::min(idx.size(), static_cast<std::size_t>(opt.samples_per_tensor));
    for (std::size_t i = 0; i < take; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    for (std::size_t k = 0; k < take; ++k) {
      const std::size_t i = idx[k];
      double& coord = (*tg.value)[i];
      const double saved = coord;
      coord = saved + opt.epsilon;
      const auto [fp, sp] = evaluate(false, nullptr);
      coord = saved - opt.epsilon;
      const auto [fm, sm] = evaluate(false, nullptr);
      coord = saved;
      if (sp != sig0 || sm != sig0) {
        ++rep.skipped;
        continue;
      }
      const double numeric = (fp - fm) / (2.0 * opt.epsilon);
      const double analytic = (*tg.analytic)[i];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), opt.denominator_floor});
      const double err = std::abs(numeric - analytic) / denom;
      ++rep.checked;
      if (err > rep.max_rel_error || rep.worst.empty()) {
        if (err >= rep.max_rel_error) rep.worst = tg.name + "[" + std::to_string(i) + "]";
        rep.max_rel_error = std::max(rep.max_rel_error, err);
      }
    }
  }
  if (params) params->zero_grad();
  // A check that skipped most coordinates proves nothing.
  rep.pass = rep.checked > 0 && rep.max_rel_error < opt.tolerance && rep.skipped * 10 <= rep.checked + rep.skipped;
  return rep;
}

}  // namespace s2c::nn
