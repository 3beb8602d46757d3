#pragma once

// Small reverse-mode autodiff engine over N x C x H x W tensors of doubles.
// Ops record a backward closure on a Tape; Tape::backward walks them in
// reverse and accumulates parameter gradients into a ParamStore.

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "s2c/rng.hpp"

namespace s2c::nn {

struct Shape {
  int n = 1, c = 1, h = 1, w = 1;
  std::size_t size() const { return static_cast<std::size_t>(n) * c * h * w; }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0) : shape_(shape), data_(shape.size(), fill) {}
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  double at(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }
  std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  /// Image n as a 1 x C x H x W tensor.
  Tensor image(int n) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Throws a numeric error if any value is NaN or infinite.
void check_finite(const Tensor& t, const char* op);

class ParamStore {
 public:
  struct Entry {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
  };

  Tensor& add(const std::string& name, Shape shape);
  /// Kaiming-uniform (fan-in) conv weight [cout, cin, k, k] plus zero bias [1, cout, 1, 1].
  void add_conv(const std::string& name, int cin, int cout, int k, Rng& rng);

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  Tensor& value(const std::string& name);
  const Tensor& value(const std::string& name) const;
  Entry& entry(const std::string& name);
  const std::map<std::string, Entry>& entries() const { return entries_; }
  std::map<std::string, Entry>& entries() { return entries_; }
  std::size_t parameter_count() const;
  void zero_grad();

  friend bool operator==(const ParamStore& a, const ParamStore& b);

 private:
  std::map<std::string, Entry> entries_;
};

struct Var {
  int id = -1;
};

class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Var input(Tensor value, bool requires_grad = false);
  Var param(ParamStore& store, const std::string& name);

  using Backward = std::function<void(Tape&, const Tensor& out_grad)>;
  /// Records an op output. `backward` receives the upstream gradient and
  /// calls accumulate() on the inputs it depends on.
  Var record(Tensor value, std::vector<Var> inputs, Backward backward);

  const Tensor& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }
  /// Gradient of the last backward() target w.r.t. v (zeros if untouched).
  const Tensor& grad(Var v);
  void accumulate(Var v, std::span<const double> g);

  /// Seeds d(out)/d(out) = 1 for a scalar output and runs the reverse sweep.
  void backward(Var scalar_output);

  bool grad_enabled() const { return grad_enabled_; }
  /// Hash of every activation-pattern decision (ReLU signs, pool argmax,
  /// loss clamps); differs when a perturbation crosses a kink.
  std::uint64_t signature() const { return signature_; }
  void mix_signature(std::uint64_t v) { signature_ = (signature_ ^ v) * 0x100000001b3ULL; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool grad_ready = false;
    bool requires_grad = false;
    std::vector<Var> inputs;
    Backward backward;
    ParamStore* store = nullptr;
    std::string param_name;
  };
  std::deque<Node> nodes_;
  bool grad_enabled_;
  std::uint64_t signature_ = 0xcbf29ce484222325ULL;
};

// Raw kernels, also used to build deliberately broken ops in tests.
Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b);
/// Accumulates into whichever of dx, dw, db is non-null.
void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor* dx, Tensor* dw, Tensor* db);

/// Same-size cross-correlation, zero padding k/2, odd k. w: [cout, cin, k, k], b: [1, cout, 1, 1].
Var conv2d(Tape& t, Var x, Var w, Var b);
Var relu(Tape& t, Var x);
Var sigmoid(Tape& t, Var x);
/// 2x2 stride-2 max pooling; H and W must be even.
Var maxpool2(Tape& t, Var x);
/// Nearest-neighbour x2 upsampling.
Var upsample2(Tape& t, Var x);
Var concat_channels(Tape& t, Var a, Var b);
/// Mean of -[w t log p + (1-t) log(1-p)], p clamped to [1e-7, 1-1e-7]. Scalar output.
Var bce_loss(Tape& t, Var pred, const Tensor& target, double weight_pos = 1.0);
/// sum(x * coeff), scalar output.
Var weighted_sum(Tape& t, Var x, const Tensor& coeff);
Var add(Tape& t, Var a, Var b);

/// Splits channels [0, ca) and [ca, C).
std::pair<Tensor, Tensor> split_channels(const Tensor& x, int ca);

enum class OptimKind { sgd_momentum, adam };

struct OptimState {
  OptimKind kind = OptimKind::adam;
  double learning_rate = 1e-3;
  double momentum = 0.9;  // beta1 for adam
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step_count = 0;
  std::map<std::string, Tensor> first, second;

  void validate() const;
};

const char* to_string(OptimKind k);
OptimKind parse_optim_kind(const std::string& s);

/// Applies one update from the accumulated gradients, then zeroes them.
void optim_step(ParamStore& params, OptimState& state);

struct GradCheckOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-5;
  int samples_per_tensor = 200;
  // Gradients smaller than this are compared in absolute terms.
  double denominator_floor = 1e-4;
  std::uint64_t seed = 1;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates whose perturbation crossed a kink
  std::string worst;        // "<tensor>[index]"
  bool pass = false;
};

using LossFn = std::function<Var(Tape&, std::span<const Var> inputs)>;

/// Central finite differences on a random subset of every input and parameter.
GradCheckReport grad_check(const LossFn& loss, ParamStore* params, std::vector<Tensor> inputs,
                           const GradCheckOptions& opt = {});

}  // namespace s2c::nn
