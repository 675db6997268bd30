#include "posepolicy/nn.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace posepolicy::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRow = Eigen::Map<RowMat>;
using CMapRow = Eigen::Map<const RowMat>;

void expect(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

struct ConvGeom {
  int B, C, H, W;     // input
  int O, KH, KW;      // kernel
  int SH, SW, PH, PW; // stride, pad
  int Ho, Wo;

  int ckk() const { return C * KH * KW; }
  int out_hw() const { return Ho * Wo; }
};

// col[(c*KH + ky)*KW + kx, oy*Wo + ox] = x[c, oy*SH - PH + ky, ox*SW - PW + kx]
void im2col(const ConvGeom& g, const double* x, double* col) {
  for (int c = 0; c < g.C; ++c) {
    for (int ky = 0; ky < g.KH; ++ky) {
      for (int kx = 0; kx < g.KW; ++kx) {
        double* row = col + static_cast<std::size_t>((c * g.KH + ky) * g.KW + kx) * g.out_hw();
        for (int oy = 0; oy < g.Ho; ++oy) {
          const int iy = oy * g.SH - g.PH + ky;
          for (int ox = 0; ox < g.Wo; ++ox) {
            const int ix = ox * g.SW - g.PW + kx;
            row[oy * g.Wo + ox] = (iy >= 0 && iy < g.H && ix >= 0 && ix < g.W)
                                      ? x[(static_cast<std::size_t>(c) * g.H + iy) * g.W + ix]
                                      : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeom& g, const double* col, double* x) {
  for (int c = 0; c < g.C; ++c) {
    for (int ky = 0; ky < g.KH; ++ky) {
      for (int kx = 0; kx < g.KW; ++kx) {
        const double* row = col + static_cast<std::size_t>((c * g.KH + ky) * g.KW + kx) * g.out_hw();
        for (int oy = 0; oy < g.Ho; ++oy) {
          const int iy = oy * g.SH - g.PH + ky;
          if (iy < 0 || iy >= g.H) continue;
          for (int ox = 0; ox < g.Wo; ++ox) {
            const int ix = ox * g.SW - g.PW + kx;
            if (ix < 0 || ix >= g.W) continue;
            x[(static_cast<std::size_t>(c) * g.H + iy) * g.W + ix] += row[oy * g.Wo + ox];
          }
        }
      }
    }
  }
}

Var conv_generic(Tape& t, Var x, Var w, Var b, const ConvGeom& g, const Shape& out_shape) {
  const std::size_t col_size = static_cast<std::size_t>(g.ckk()) * g.out_hw();
  auto cols = std::make_shared<std::vector<double>>(static_cast<std::size_t>(g.B) * col_size);
  std::vector<double> out(static_cast<std::size_t>(g.B) * g.O * g.out_hw());
  const double* xv = t.value(x).data();
  CMapRow Wm(t.value(w).data(), g.O, g.ckk());
  const Eigen::Map<const Eigen::VectorXd> bias(t.value(b).data(), g.O);
  const std::size_t in_stride = static_cast<std::size_t>(g.C) * g.H * g.W;
  const std::size_t out_stride = static_cast<std::size_t>(g.O) * g.out_hw();
  for (int n = 0; n < g.B; ++n) {
    double* col = cols->data() + n * col_size;
    im2col(g, xv + n * in_stride, col);
    MapRow Y(out.data() + n * out_stride, g.O, g.out_hw());
    Y.noalias() = Wm * CMapRow(col, g.ckk(), g.out_hw());
    Y.colwise() += bias;
  }
  return t.push(out_shape, std::move(out), [x, w, b, g, cols, col_size, in_stride, out_stride](Tape& tp, Var self) {
    const auto& gy = tp.grad(self);
    CMapRow Wm(tp.value(w).data(), g.O, g.ckk());
    MapRow GW(tp.grad(w).data(), g.O, g.ckk());
    Eigen::Map<Eigen::VectorXd> GB(tp.grad(b).data(), g.O);
    double* gx = tp.grad(x).data();
    std::vector<double> dcol(col_size);
    for (int n = 0; n < g.B; ++n) {
      CMapRow GY(gy.data() + n * out_stride, g.O, g.out_hw());
      CMapRow col(cols->data() + n * col_size, g.ckk(), g.out_hw());
      GW.noalias() += GY * col.transpose();
      GB += GY.rowwise().sum();
      MapRow DC(dcol.data(), g.ckk(), g.out_hw());
      DC.noalias() = Wm.transpose() * GY;
      col2im_add(g, dcol.data(), gx + n * in_stride);
    }
  });
}

Var unary(Tape& t, Var x, double (*f)(double), double (*df)(double, double)) {
  const auto& xv = t.value(x);
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return t.push(t.shape(x), std::move(out), [x, df](Tape& tp, Var self) {
    const auto& gy = tp.grad(self);
    const auto& xv = tp.value(x);
    const auto& yv = tp.value(self);
    auto& gx = tp.grad(x);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * df(xv[i], yv[i]);
  });
}

double sigmoid_f(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

int ParameterStore::add(const std::string& name, const Shape& shape) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
  params_.push_back(Parameter{name, shape, std::vector<double>(numel(shape), 0.0),
                              std::vector<double>(numel(shape), 0.0)});
  const int i = static_cast<int>(params_.size()) - 1;
  index_[name] = i;
  return i;
}

int ParameterStore::index(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return it->second;
}

std::size_t ParameterStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
}

bool ParameterStore::all_finite() const {
  for (const auto& p : params_) {
    for (double v : p.value) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

Var Tape::constant(Shape shape, std::vector<double> value) {
  expect(numel(shape) == value.size(), "constant: shape/value mismatch");
  return push(std::move(shape), std::move(value), nullptr);
}

Var Tape::param(int index) {
  if (store_ == nullptr) throw std::logic_error("tape has no parameter store");
  auto it = param_nodes_.find(index);
  if (it != param_nodes_.end()) return Var{it->second};
  const Parameter& p = (*store_)[index];
  Var v = push(p.shape, p.value, nullptr);
  nodes_[idx(v)].param_index = index;
  param_nodes_[index] = v.id;
  return v;
}

Var Tape::param(const std::string& name) {
  if (store_ == nullptr) throw std::logic_error("tape has no parameter store");
  return param(store_->index(name));
}

Var Tape::push(Shape shape, std::vector<double> value, Backward backward) {
  Node n;
  n.shape = std::move(shape);
  n.value = std::move(value);
  n.back = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

std::vector<double>& Tape::grad(Var v) {
  Node& n = nodes_[idx(v)];
  if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Tape::backward(Var out) {
  expect(value(out).size() == 1, "backward: output must be scalar");
  for (auto& n : nodes_) n.grad.assign(n.value.size(), 0.0);
  nodes_[idx(out)].grad[0] = 1.0;
  for (int i = out.id; i >= 0; --i) {
    auto& n = nodes_[static_cast<std::size_t>(i)];
    if (n.back) n.back(*this, Var{i});
  }
  if (store_ != nullptr) {
    for (const auto& [pi, node] : param_nodes_) {
      auto& g = (*store_)[pi].grad;
      const auto& ng = nodes_[static_cast<std::size_t>(node)].grad;
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += ng[j];
    }
  }
}

Var linear(Tape& t, Var x, Var w, Var b) {
  const Shape xs = t.shape(x);
  const Shape ws = t.shape(w);
  expect(xs.size() == 2 && ws.size() == 2 && ws[1] == xs[1] && t.shape(b) == Shape{ws[0]},
         "linear: shape mismatch " + shape_str(xs) + " x " + shape_str(ws));
  const int B = xs[0], I = xs[1], O = ws[0];
  std::vector<double> out(static_cast<std::size_t>(B) * O);
  {
    CMapRow X(t.value(x).data(), B, I), W(t.value(w).data(), O, I);
    MapRow Y(out.data(), B, O);
    Y.noalias() = X * W.transpose();
    const Eigen::Map<const Eigen::RowVectorXd> bias(t.value(b).data(), O);
    Y.rowwise() += bias;
  }
  return t.push({B, O}, std::move(out), [x, w, b, B, I, O](Tape& tp, Var self) {
    CMapRow GY(tp.grad(self).data(), B, O);
    CMapRow X(tp.value(x).data(), B, I), W(tp.value(w).data(), O, I);
    MapRow GX(tp.grad(x).data(), B, I), GW(tp.grad(w).data(), O, I);
    Eigen::Map<Eigen::RowVectorXd> GB(tp.grad(b).data(), O);
    GX.noalias() += GY * W;
    GW.noalias() += GY.transpose() * X;
    GB += GY.colwise().sum();
  });
}

Var conv2d(Tape& t, Var x, Var w, Var b, int stride, int pad) {
  const Shape xs = t.shape(x);
  const Shape ws = t.shape(w);
  expect(xs.size() == 4 && ws.size() == 4 && ws[1] == xs[1] && ws[2] == ws[3] && t.shape(b) == Shape{ws[0]},
         "conv2d: shape mismatch " + shape_str(xs) + " * " + shape_str(ws));
  expect(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
  ConvGeom g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], stride, stride, pad, pad, 0, 0};
  g.Ho = (g.H + 2 * pad - g.KH) / stride + 1;
  g.Wo = (g.W + 2 * pad - g.KW) / stride + 1;
  expect(g.Ho > 0 && g.Wo > 0, "conv2d: input too small");
  return conv_generic(t, x, w, b, g, {g.B, g.O, g.Ho, g.Wo});
}

Var conv1d(Tape& t, Var x, Var w, Var b, int stride, int pad) {
  const Shape xs = t.shape(x);
  const Shape ws = t.shape(w);
  expect(xs.size() == 3 && ws.size() == 3 && ws[1] == xs[1] && t.shape(b) == Shape{ws[0]},
         "conv1d: shape mismatch " + shape_str(xs) + " * " + shape_str(ws));
  expect(stride >= 1 && pad >= 0, "conv1d: bad stride/pad");
  ConvGeom g{xs[0], xs[1], 1, xs[2], ws[0], 1, ws[2], 1, stride, 0, pad, 1, 0};
  g.Wo = (g.W + 2 * pad - g.KW) / stride + 1;
  expect(g.Wo > 0, "conv1d: input too small");
  return conv_generic(t, x, w, b, g, {g.B, g.O, g.Wo});
}

Var silu(Tape& t, Var x) {
  return unary(
      t, x, [](double v) { return v * sigmoid_f(v); },
      [](double v, double) {
        const double s = sigmoid_f(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

Var sigmoid(Tape& t, Var x) {
  return unary(t, x, sigmoid_f, [](double, double y) { return y * (1.0 - y); });
}

Var add(Tape& t, Var a, Var b) {
  expect(t.shape(a) == t.shape(b), "add: shape mismatch");
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  return t.push(t.shape(a), std::move(out), [a, b](Tape& tp, Var self) {
    const auto& gy = tp.grad(self);
    auto& ga = tp.grad(a);
    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
    auto& gb = tp.grad(b);
    for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i];
  });
}

Var mul(Tape& t, Var a, Var b) {
  expect(t.shape(a) == t.shape(b), "mul: shape mismatch");
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  return t.push(t.shape(a), std::move(out), [a, b](Tape& tp, Var self) {
    const auto& gy = tp.grad(self);
    const auto& av = tp.value(a);
    const auto& bv = tp.value(b);
    auto& ga = tp.grad(a);
    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * bv[i];
    auto& gb = tp.grad(b);
    for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * av[i];
  });
}

Var concat(Tape& t, Var a, Var b) {
  const Shape as = t.shape(a);
  const Shape bs = t.shape(b);
  expect(as.size() >= 2 && as.size() == bs.size() && as[0] == bs[0], "concat: shape mismatch");
  for (std::size_t d = 2; d < as.size(); ++d) expect(as[d] == bs[d], "concat: trailing shape mismatch");
  std::size_t inner = 1;
  for (std::size_t d = 2; d < as.size(); ++d) inner *= static_cast<std::size_t>(as[d]);
  const std::size_t na = static_cast<std::size_t>(as[1]) * inner;
  const std::size_t nb = static_cast<std::size_t>(bs[1]) * inner;
  const int B = as[0];
  Shape os = as;
  os[1] = as[1] + bs[1];
  std::vector<double> out(static_cast<std::size_t>(B) * (na + nb));
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  for (int n = 0; n < B; ++n) {
    std::copy_n(av.begin() + n * na, na, out.begin() + n * (na + nb));
    std::copy_n(bv.begin() + n * nb, nb, out.begin() + n * (na + nb) + na);
  }
  return t.push(os, std::move(out), [a, b, B, na, nb](Tape& tp, Var self) {
    const auto& gy = tp.grad(self);
    auto& ga = tp.grad(a);
    for (int n = 0; n < B; ++n) {
      for (std::size_t i = 0; i < na; ++i) ga[n * na + i] += gy[n * (na + nb) + i];
    }
    auto& gb = tp.grad(b);
    for (int n = 0; n < B; ++n) {
      for (std::size_t i = 0; i < nb; ++i) gb[n * nb + i] += gy[n * (na + nb) + na + i];
    }
  });
}

Var reshape(Tape& t, Var x, Shape shape) {
  expect(numel(shape) == t.value(x).size(), "reshape: element count mismatch");
  return t.push(std::move(shape), t.value(x), [x](Tape& tp, Var self) {
    const auto& gy = tp.grad(self);
    auto& gx = tp.grad(x);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
  });
}

Var pair_rows(Tape& t, Var x) {
  const Shape xs = t.shape(x);
  expect(xs.size() == 2 && xs[0] % 2 == 0, "pair_rows: expected [2B,F]");
  const int B = xs[0] / 2, F = xs[1];
  const auto& xv = t.value(x);
  std::vector<double> out(xv.size());
  for (int n = 0; n < B; ++n) {
    std::copy_n(xv.begin() + static_cast<std::size_t>(n) * F, F, out.begin() + static_cast<std::size_t>(n) * 2 * F);
    std::copy_n(xv.begin() + static_cast<std::size_t>(B + n) * F, F,
                out.begin() + static_cast<std::size_t>(n) * 2 * F + F);
  }
  return t.push({B, 2 * F}, std::move(out), [x, B, F](Tape& tp, Var self) {
    const auto& gy = tp.grad(self);
    auto& gx = tp.grad(x);
    for (int n = 0; n < B; ++n) {
      for (int f = 0; f < F; ++f) {
        gx[static_cast<std::size_t>(n) * F + f] += gy[static_cast<std::size_t>(n) * 2 * F + f];
        gx[static_cast<std::size_t>(B + n) * F + f] += gy[static_cast<std::size_t>(n) * 2 * F + F + f];
      }
    }
  });
}

Var film(Tape& t, Var x, Var scale_shift) {
  const Shape xs = t.shape(x);
  const Shape ss = t.shape(scale_shift);
  expect(xs.size() == 3 && ss.size() == 2 && ss[0] == xs[0] && ss[1] == 2 * xs[1], "film: shape mismatch");
  const int B = xs[0], C = xs[1], L = xs[2];
  const auto& xv = t.value(x);
  const auto& sv = t.value(scale_shift);
  std::vector<double> out(xv.size());
  for (int n = 0; n < B; ++n) {
    for (int c = 0; c < C; ++c) {
      const double scale = 1.0 + sv[static_cast<std::size_t>(n) * 2 * C + c];
      const double shift = sv[static_cast<std::size_t>(n) * 2 * C + C + c];
      const std::size_t base = (static_cast<std::size_t>(n) * C + c) * L;
      for (int l = 0; l < L; ++l) out[base + l] = xv[base + l] * scale + shift;
    }
  }
  return t.push(xs, std::move(out), [x, scale_shift, B, C, L](Tape& tp, Var self) {
    const auto& gy = tp.grad(self);
    const auto& xv = tp.value(x);
    const auto& sv = tp.value(scale_shift);
    auto& gx = tp.grad(x);
    auto& gs = tp.grad(scale_shift);
    for (int n = 0; n < B; ++n) {
      for (int c = 0; c < C; ++c) {
        const double scale = 1.0 + sv[static_cast<std::size_t>(n) * 2 * C + c];
        const std::size_t base = (static_cast<std::size_t>(n) * C + c) * L;
        double g_scale = 0.0, g_shift = 0.0;
        for (int l = 0; l < L; ++l) {
          gx[base + l] += gy[base + l] * scale;
          g_scale += gy[base + l] * xv[base + l];
          g_shift += gy[base + l];
        }
        gs[static_cast<std::size_t>(n) * 2 * C + c] += g_scale;
        gs[static_cast<std::size_t>(n) * 2 * C + C + c] += g_shift;
      }
    }
  });
}

Var upsample2(Tape& t, Var x, int out_len) {
  const Shape xs = t.shape(x);
  expect(xs.size() == 3 && out_len >= 1 && out_len <= 2 * xs[2], "upsample2: bad shape");
  const int rows = xs[0] * xs[1], L = xs[2];
  const auto& xv = t.value(x);
  std::vector<double> out(static_cast<std::size_t>(rows) * out_len);
  for (int r = 0; r < rows; ++r) {
    for (int l = 0; l < out_len; ++l) {
      out[static_cast<std::size_t>(r) * out_len + l] = xv[static_cast<std::size_t>(r) * L + l / 2];
    }
  }
  return t.push({xs[0], xs[1], out_len}, std::move(out), [x, rows, L, out_len](Tape& tp, Var self) {
    const auto& gy = tp.grad(self);
    auto& gx = tp.grad(x);
    for (int r = 0; r < rows; ++r) {
      for (int l = 0; l < out_len; ++l) {
        gx[static_cast<std::size_t>(r) * L + l / 2] += gy[static_cast<std::size_t>(r) * out_len + l];
      }
    }
  });
}

Var mse(Tape& t, Var pred, Var target) {
  expect(t.shape(pred) == t.shape(target), "mse: shape mismatch");
  const auto& p = t.value(pred);
  const auto& q = t.value(target);
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - q[i]) * (p[i] - q[i]);
  const double n = static_cast<double>(p.size());
  return t.push({1}, {s / n}, [pred, target, n](Tape& tp, Var self) {
    const double g = tp.grad(self)[0] * 2.0 / n;
    const auto& p = tp.value(pred);
    const auto& q = tp.value(target);
    auto& gp = tp.grad(pred);
    auto& gq = tp.grad(target);
    for (std::size_t i = 0; i < p.size(); ++i) {
      gp[i] += g * (p[i] - q[i]);
      gq[i] -= g * (p[i] - q[i]);
    }
  });
}

void init_uniform(Parameter& p, int fan_in, std::mt19937_64& rng, double gain) {
  const double bound = gain / std::sqrt(static_cast<double>(std::max(fan_in, 1)));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (double& v : p.value) v = u(rng);
}

void AdamW::step(ParameterStore& store) {
  auto& params = store.params();
  if (m_.size() != params.size()) {
    m_.clear();
    v_.clear();
    for (const auto& p : params) {
      m_.emplace_back(p.value.size(), 0.0);
      v_.emplace_back(p.value.size(), 0.0);
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.value[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p.value[i]);
    }
  }
}

}  // namespace posepolicy::nn
