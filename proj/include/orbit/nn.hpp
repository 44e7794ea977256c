#pragma once

// Small reverse-mode differentiation kernel. Values are dense double vectors;
// a Tape records each primitive with a closure that pushes gradients back to
// its inputs (and into DenseParams accumulators).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "orbit/rng.hpp"

namespace orbit::nn {

using Vec = std::vector<double>;

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double relu(double x) { return x > 0 ? x : 0.0; }

// log(sigmoid(x)) without overflow.
inline double log_sigmoid(double x) {
  return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

// Zero operand => 0.
inline double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine: operand sizes differ");
  const double na = std::sqrt(dot(a, a));
  const double nb = std::sqrt(dot(b, b));
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

// Population-variance normalization without learned scale/shift.
inline Vec layer_norm(std::span<const double> x, double eps = 1e-5) {
  if (x.empty()) throw ShapeError("layer_norm: empty input");
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  const double inv = 1.0 / std::sqrt(var + eps);
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mean) * inv;
  return y;
}

struct DenseParams {
  std::size_t in = 0;
  std::size_t out = 0;
  Vec weights;  // row-major out x in
  Vec bias;
  Vec grad_weights;
  Vec grad_bias;

  DenseParams() = default;
  DenseParams(std::size_t in_dim, std::size_t out_dim)
      : in(in_dim), out(out_dim), weights(in_dim * out_dim, 0.0), bias(out_dim, 0.0),
        grad_weights(in_dim * out_dim, 0.0), grad_bias(out_dim, 0.0) {}

  static DenseParams random(std::size_t in_dim, std::size_t out_dim, Rng& rng) {
    DenseParams p(in_dim, out_dim);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
    for (double& w : p.weights) w = uniform(rng, -bound, bound);
    for (double& b : p.bias) b = uniform(rng, -bound, bound);
    return p;
  }

  double& w(std::size_t r, std::size_t c) { return weights[r * in + c]; }
  double w(std::size_t r, std::size_t c) const { return weights[r * in + c]; }

  void zero_grad() {
    std::fill(grad_weights.begin(), grad_weights.end(), 0.0);
    std::fill(grad_bias.begin(), grad_bias.end(), 0.0);
  }

  Vec forward(std::span<const double> x) const {
    if (x.size() != in)
      throw ShapeError("dense: expected input dim " + std::to_string(in) + ", got " + std::to_string(x.size()));
    Vec y(bias);
    for (std::size_t r = 0; r < out; ++r) {
      const double* row = weights.data() + r * in;
      double acc = 0.0;
      for (std::size_t c = 0; c < in; ++c) acc += row[c] * x[c];
      y[r] += acc;
    }
    return y;
  }
};

enum class OutputActivation { linear, sigmoid };

// Feed-forward stack with relu between layers.
struct Mlp {
  std::vector<DenseParams> layers;
  OutputActivation output = OutputActivation::linear;

  static Mlp make(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out,
                  OutputActivation act, Rng& rng) {
    Mlp m;
    m.output = act;
    std::size_t prev = in;
    for (std::size_t h : hidden) {
      m.layers.push_back(DenseParams::random(prev, h, rng));
      prev = h;
    }
    m.layers.push_back(DenseParams::random(prev, out, rng));
    return m;
  }

  std::size_t in_dim() const { return layers.front().in; }
  std::size_t out_dim() const { return layers.back().out; }

  Vec evaluate(std::span<const double> x) const {
    Vec h(x.begin(), x.end());
    for (std::size_t l = 0; l < layers.size(); ++l) {
      h = layers[l].forward(h);
      if (l + 1 < layers.size())
        for (double& v : h) v = relu(v);
    }
    if (output == OutputActivation::sigmoid)
      for (double& v : h) v = sigmoid(v);
    return h;
  }

  void zero_weights() {
    for (auto& l : layers) {
      std::fill(l.weights.begin(), l.weights.end(), 0.0);
      std::fill(l.bias.begin(), l.bias.end(), 0.0);
    }
  }
};

using ParamList = std::vector<DenseParams*>;

inline void append(ParamList& list, Mlp& m) {
  for (auto& l : m.layers) list.push_back(&l);
}

inline void zero_grad(const ParamList& params) {
  for (auto* p : params) p->zero_grad();
}

inline double grad_norm(const ParamList& params) {
  double s = 0.0;
  for (const auto* p : params) {
    for (double g : p->grad_weights) s += g * g;
    for (double g : p->grad_bias) s += g * g;
  }
  return std::sqrt(s);
}

inline bool all_finite(const ParamList& params) {
  for (const auto* p : params) {
    for (double v : p->weights) if (!std::isfinite(v)) return false;
    for (double v : p->bias) if (!std::isfinite(v)) return false;
  }
  return true;
}

inline bool grads_finite(const ParamList& params) {
  for (const auto* p : params) {
    for (double v : p->grad_weights) if (!std::isfinite(v)) return false;
    for (double v : p->grad_bias) if (!std::isfinite(v)) return false;
  }
  return true;
}

// Plain gradient descent on the accumulated gradients with a global norm clip.
struct Sgd {
  double learning_rate = 0.05;
  double clip_norm = 5.0;  // <= 0 disables

  void step(const ParamList& params) const {
    double scale = learning_rate;
    if (clip_norm > 0) {
      const double n = grad_norm(params);
      if (n > clip_norm) scale *= clip_norm / n;
    }
    for (auto* p : params) {
      for (std::size_t i = 0; i < p->weights.size(); ++i) p->weights[i] -= scale * p->grad_weights[i];
      for (std::size_t i = 0; i < p->bias.size(); ++i) p->bias[i] -= scale * p->grad_bias[i];
    }
  }
};

class Adam {
 public:
  explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const ParamList& params) {
    if (m_.empty()) {
      for (const auto* p : params) {
        m_.emplace_back(p->weights.size() + p->bias.size(), 0.0);
        v_.emplace_back(p->weights.size() + p->bias.size(), 0.0);
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto* p = params[k];
      auto update = [&](double& value, double g, std::size_t slot) {
        m_[k][slot] = beta1_ * m_[k][slot] + (1 - beta1_) * g;
        v_[k][slot] = beta2_ * v_[k][slot] + (1 - beta2_) * g * g;
        value -= lr_ * (m_[k][slot] / c1) / (std::sqrt(v_[k][slot] / c2) + eps_);
      };
      for (std::size_t i = 0; i < p->weights.size(); ++i) update(p->weights[i], p->grad_weights[i], i);
      for (std::size_t i = 0; i < p->bias.size(); ++i) update(p->bias[i], p->grad_bias[i], p->weights.size() + i);
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Vec> m_, v_;
};

// --- tape -----------------------------------------------------------------

class Tape;

class Var {
 public:
  Var() = default;
  std::size_t index() const { return index_; }

 private:
  friend class Tape;
  explicit Var(std::size_t i) : index_(i) {}
  std::size_t index_ = static_cast<std::size_t>(-1);
};

class Tape {
 public:
  // Receives the output gradient and mutable gradients of the inputs.
  using Backward = std::function<void(const Vec& grad_out, std::vector<Vec*>& grad_in)>;

  std::size_t size() const { return nodes_.size(); }
  const Vec& value(Var v) const { return nodes_.at(v.index_).value; }
  double scalar(Var v) const {
    const Vec& x = value(v);
    if (x.size() != 1) throw ShapeError("scalar(): node is not a scalar");
    return x[0];
  }
  const Vec& grad(Var v) const { return nodes_.at(v.index_).grad; }

  Var constant(Vec v) { return push(std::move(v), {}, nullptr); }
  Var constant(double x) { return constant(Vec{x}); }

  // Generic primitive with a caller-supplied vector-Jacobian product.
  Var custom(Vec value, std::vector<Var> inputs, Backward backward) {
    return push(std::move(value), std::move(inputs), std::move(backward));
  }

  Var dense(DenseParams& p, Var x) {
    const Vec& xv = value(x);
    Vec y = p.forward(xv);
    DenseParams* pp = &p;
    return push(std::move(y), {x}, [pp, this, x](const Vec& g, std::vector<Vec*>& gin) {
      const Vec& xin = value(x);
      Vec& gx = *gin[0];
      for (std::size_t r = 0; r < pp->out; ++r) {
        const double gr = g[r];
        if (gr == 0.0) continue;
        pp->grad_bias[r] += gr;
        double* gw = pp->grad_weights.data() + r * pp->in;
        const double* w = pp->weights.data() + r * pp->in;
        for (std::size_t c = 0; c < pp->in; ++c) {
          gw[c] += gr * xin[c];
          gx[c] += gr * w[c];
        }
      }
    });
  }

  Var mlp(Mlp& m, Var x) {
    Var h = x;
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
      h = dense(m.layers[l], h);
      if (l + 1 < m.layers.size()) h = relu(h);
    }
    return m.output == OutputActivation::sigmoid ? sigmoid(h) : h;
  }

  Var add(Var a, Var b) {
    const Vec& av = value(a);
    const Vec& bv = value(b);
    check_same(av, bv, "add");
    Vec y(av.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
    return push(std::move(y), {a, b}, [](const Vec& g, std::vector<Vec*>& gin) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        (*gin[0])[i] += g[i];
        (*gin[1])[i] += g[i];
      }
    });
  }

  Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

  Var mul(Var a, Var b) {
    const Vec& av = value(a);
    const Vec& bv = value(b);
    check_same(av, bv, "mul");
    Vec y(av.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
    return push(std::move(y), {a, b}, [this, a, b](const Vec& g, std::vector<Vec*>& gin) {
      const Vec& av = value(a);
      const Vec& bv = value(b);
      for (std::size_t i = 0; i < g.size(); ++i) {
        (*gin[0])[i] += g[i] * bv[i];
        (*gin[1])[i] += g[i] * av[i];
      }
    });
  }

  Var scale(Var a, double k) {
    Vec y = value(a);
    for (double& v : y) v *= k;
    return push(std::move(y), {a}, [k](const Vec& g, std::vector<Vec*>& gin) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += k * g[i];
    });
  }

  Var sigmoid(Var a) {
    Vec y = value(a);
    for (double& v : y) v = nn::sigmoid(v);
    return push(std::move(y), {a}, [this, a](const Vec& g, std::vector<Vec*>& gin) {
      const Vec& x = value(a);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double s = nn::sigmoid(x[i]);
        (*gin[0])[i] += g[i] * s * (1.0 - s);
      }
    });
  }

  Var log_sigmoid(Var a) {
    Vec y = value(a);
    for (double& v : y) v = nn::log_sigmoid(v);
    return push(std::move(y), {a}, [this, a](const Vec& g, std::vector<Vec*>& gin) {
      const Vec& x = value(a);
      for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * (1.0 - nn::sigmoid(x[i]));
    });
  }

  // Natural log; inputs are floored at 1e-300.
  Var log(Var a) {
    Vec y = value(a);
    for (double& v : y) v = std::log(std::max(v, 1e-300));
    return push(std::move(y), {a}, [this, a](const Vec& g, std::vector<Vec*>& gin) {
      const Vec& x = value(a);
      for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] / std::max(x[i], 1e-300);
    });
  }

  Var relu(Var a) {
    Vec y = value(a);
    for (double& v : y) v = nn::relu(v);
    return push(std::move(y), {a}, [this, a](const Vec& g, std::vector<Vec*>& gin) {
      const Vec& x = value(a);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x[i] > 0) (*gin[0])[i] += g[i];
    });
  }

  Var abs(Var a) {
    Vec y = value(a);
    for (double& v : y) v = std::abs(v);
    return push(std::move(y), {a}, [this, a](const Vec& g, std::vector<Vec*>& gin) {
      const Vec& x = value(a);
      for (std::size_t i = 0; i < g.size(); ++i)
        (*gin[0])[i] += g[i] * (x[i] > 0 ? 1.0 : (x[i] < 0 ? -1.0 : 0.0));
    });
  }

  // Elementwise clamp; gradient is zero outside [lo, hi].
  Var clamp(Var a, double lo, double hi) {
    Vec y = value(a);
    for (double& v : y) v = std::clamp(v, lo, hi);
    return push(std::move(y), {a}, [this, a, lo, hi](const Vec& g, std::vector<Vec*>& gin) {
      const Vec& x = value(a);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x[i] >= lo && x[i] <= hi) (*gin[0])[i] += g[i];
    });
  }

  Var layer_norm(Var a, double eps = 1e-5) {
    Vec y = nn::layer_norm(value(a), eps);
    const Vec& x = value(a);
    const double n = static_cast<double>(x.size());
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + eps);
    Var out = push(std::move(y), {a}, nullptr);
    const std::size_t self = out.index_;
    nodes_[self].backward = [this, self, inv](const Vec& g, std::vector<Vec*>& gin) {
      const Vec& yv = nodes_[self].value;
      const double n = static_cast<double>(g.size());
      double gmean = 0.0, gy = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) {
        gmean += g[i];
        gy += g[i] * yv[i];
      }
      gmean /= n;
      gy /= n;
      for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += inv * (g[i] - gmean - yv[i] * gy);
    };
    return out;
  }

  Var concat(std::span<const Var> parts) {
    Vec y;
    std::vector<std::size_t> sizes;
    for (Var p : parts) {
      const Vec& v = value(p);
      sizes.push_back(v.size());
      y.insert(y.end(), v.begin(), v.end());
    }
    return push(std::move(y), std::vector<Var>(parts.begin(), parts.end()),
                [sizes](const Vec& g, std::vector<Vec*>& gin) {
                  std::size_t off = 0;
                  for (std::size_t k = 0; k < sizes.size(); ++k) {
                    for (std::size_t i = 0; i < sizes[k]; ++i) (*gin[k])[i] += g[off + i];
                    off += sizes[k];
                  }
                });
  }
  Var concat(std::initializer_list<Var> parts) { return concat(std::span<const Var>(parts.begin(), parts.size())); }

  Var element(Var a, std::size_t i) {
    const Vec& x = value(a);
    if (i >= x.size()) throw ShapeError("element: index out of range");
    return push(Vec{x[i]}, {a}, [i](const Vec& g, std::vector<Vec*>& gin) { (*gin[0])[i] += g[0]; });
  }

  Var sum(Var a) {
    const Vec& x = value(a);
    return push(Vec{std::accumulate(x.begin(), x.end(), 0.0)}, {a}, [](const Vec& g, std::vector<Vec*>& gin) {
      for (double& v : *gin[0]) v += g[0];
    });
  }

  Var mean(Var a) {
    const double n = static_cast<double>(value(a).size());
    if (n == 0) throw ShapeError("mean: empty input");
    return scale(sum(a), 1.0 / n);
  }

  Var cosine(Var a, Var b) {
    const Vec& av = value(a);
    const Vec& bv = value(b);
    check_same(av, bv, "cosine");
    return push(Vec{nn::cosine(av, bv)}, {a, b}, [this, a, b](const Vec& g, std::vector<Vec*>& gin) {
      const Vec& x = value(a);
      const Vec& y = value(b);
      const double nx = std::sqrt(dot(x, x));
      const double ny = std::sqrt(dot(y, y));
      if (nx == 0.0 || ny == 0.0) return;
      const double c = dot(x, y) / (nx * ny);
      for (std::size_t i = 0; i < x.size(); ++i) {
        (*gin[0])[i] += g[0] * (y[i] / (nx * ny) - c * x[i] / (nx * nx));
        (*gin[1])[i] += g[0] * (x[i] / (nx * ny) - c * y[i] / (ny * ny));
      }
    });
  }

  // Visits records in exact reverse order; seeds d(loss)/d(loss) = 1.
  void backward(Var loss) {
    if (nodes_.empty()) throw std::logic_error("backward on an empty tape");
    if (value(loss).size() != 1) throw ShapeError("backward: loss must be a scalar");
    for (auto& n : nodes_) n.grad.assign(n.value.size(), 0.0);
    nodes_[loss.index_].grad[0] = 1.0;
    std::vector<Vec*> gin;
    for (std::size_t k = loss.index_ + 1; k-- > 0;) {
      Node& n = nodes_[k];
      if (!n.backward) continue;
      gin.clear();
      for (Var in : n.inputs) gin.push_back(&nodes_[in.index_].grad);
      n.backward(n.grad, gin);
    }
  }

 private:
  struct Node {
    Vec value;
    Vec grad;
    std::vector<Var> inputs;
    Backward backward;
  };

  Var push(Vec value, std::vector<Var> inputs, Backward backward) {
    for (Var in : inputs)
      if (in.index_ >= nodes_.size()) throw std::logic_error("tape input refers to a foreign or future node");
    nodes_.push_back(Node{std::move(value), {}, std::move(inputs), std::move(backward)});
    return Var(nodes_.size() - 1);
  }

  static void check_same(const Vec& a, const Vec& b, const char* op) {
    if (a.size() != b.size())
      throw ShapeError(std::string(op) + ": size mismatch " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }

  std::vector<Node> nodes_;
};

// Psi_rel(x, y) = [x | y | x*y | |x - y|]
inline Vec dyadic(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("dyadic: operand sizes differ");
  Vec out;
  out.reserve(4 * x.size());
  out.insert(out.end(), x.begin(), x.end());
  out.insert(out.end(), y.begin(), y.end());
  for (std::size_t i = 0; i < x.size(); ++i) out.push_back(x[i] * y[i]);
  for (std::size_t i = 0; i < x.size(); ++i) out.push_back(std::abs(x[i] - y[i]));
  return out;
}

inline Var dyadic(Tape& t, Var x, Var y) {
  if (t.value(x).size() != t.value(y).size()) throw ShapeError("dyadic: operand sizes differ");
  return t.concat({x, y, t.mul(x, y), t.abs(t.sub(x, y))});
}

}  // namespace orbit::nn
