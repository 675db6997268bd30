#pragma once

// Minimal reverse-mode differentiation over dense float64 tensors. Just
// enough operators for the convolutional encoder and the temporal denoiser.

#include <cstddef>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace posepolicy::nn {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Parameter {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
};

/// Named, flat parameter storage. Insertion order is stable and defines the
/// checkpoint order.
class ParameterStore {
 public:
  int add(const std::string& name, const Shape& shape);
  int index(const std::string& name) const;
  Parameter& operator[](int i) { return params_[static_cast<std::size_t>(i)]; }
  const Parameter& operator[](int i) const { return params_[static_cast<std::size_t>(i)]; }
  Parameter& at(const std::string& name) { return params_[static_cast<std::size_t>(index(name))]; }
  const Parameter& at(const std::string& name) const { return params_[static_cast<std::size_t>(index(name))]; }

  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t total_elements() const;
  void zero_grad();
  bool all_finite() const;

 private:
  std::vector<Parameter> params_;
  std::map<std::string, int> index_;
};

struct Var {
  int id = -1;
};

class Tape {
 public:
  explicit Tape(ParameterStore* store = nullptr) : store_(store) {}

  Var constant(Shape shape, std::vector<double> value);
  /// Leaf bound to a stored parameter. Repeated calls return the same node,
  /// so every use of a parameter shares one gradient accumulator.
  Var param(int index);
  Var param(const std::string& name);

  // Called during the reverse sweep with the id of the node being processed.
  using Backward = std::function<void(Tape&, Var self)>;
  Var push(Shape shape, std::vector<double> value, Backward backward);

  const Shape& shape(Var v) const { return nodes_[idx(v)].shape; }
  const std::vector<double>& value(Var v) const { return nodes_[idx(v)].value; }
  std::vector<double>& value_mut(Var v) { return nodes_[idx(v)].value; }
  std::vector<double>& grad(Var v);

  /// Seeds d(out)/d(out) = 1 (out must be scalar), runs the reverse sweep and
  /// adds parameter gradients into the store.
  void backward(Var out);

 private:
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    Backward back;
    int param_index = -1;
  };
  static std::size_t idx(Var v) { return static_cast<std::size_t>(v.id); }

  ParameterStore* store_;
  std::vector<Node> nodes_;
  std::map<int, int> param_nodes_;
};

// x[B,I], w[O,I], b[O] -> [B,O]
Var linear(Tape& t, Var x, Var w, Var b);
// x[B,C,H,W], w[O,C,K,K], b[O] -> [B,O,Ho,Wo]
Var conv2d(Tape& t, Var x, Var w, Var b, int stride, int pad);
// x[B,C,L], w[O,C,K], b[O] -> [B,O,Lo]
Var conv1d(Tape& t, Var x, Var w, Var b, int stride, int pad);

Var silu(Tape& t, Var x);
Var sigmoid(Tape& t, Var x);
Var add(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
/// Concatenation along dimension 1.
Var concat(Tape& t, Var a, Var b);
Var reshape(Tape& t, Var x, Shape shape);
/// [2B,F] -> [B,2F]; row i becomes [x_i, x_{B+i}].
Var pair_rows(Tape& t, Var x);
/// x[B,C,L] * (1 + scale) + shift, with ss[B,2C] = [scale, shift].
Var film(Tape& t, Var x, Var scale_shift);
/// Nearest-neighbour ×2 along the last axis, cropped to out_len.
Var upsample2(Tape& t, Var x, int out_len);
/// Mean squared error, scalar output.
Var mse(Tape& t, Var pred, Var target);

/// PyTorch-style uniform(±1/sqrt(fan_in)) initialisation.
void init_uniform(Parameter& p, int fan_in, std::mt19937_64& rng, double gain = 1.0);

/// Decoupled-weight-decay Adam.
struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.95;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-6;
};

class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : cfg_(config) {}
  void step(ParameterStore& store);
  long steps() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace posepolicy::nn
