#include "sttm/numerics.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "sttm/errors.hpp"

namespace sttm::numerics {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

thread_local bool g_grad_enabled = true;

std::vector<double>& grad_of(Node& node) {
  if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
  return node.grad;
}

const NodePtr& require(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
  return t.node();
}

Tensor make_result(Shape shape, std::vector<double> value, std::vector<NodePtr> parents,
                   std::function<void(Node&)> backprop) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (g_grad_enabled) {
    bool needs = std::any_of(parents.begin(), parents.end(),
                             [](const NodePtr& p) { return p->requires_grad; });
    if (needs) {
      node->requires_grad = true;
      node->parents = std::move(parents);
      node->backprop = std::move(backprop);
    }
  }
  return Tensor(std::move(node));
}

// Splits shape around an axis into (outer, axis length, inner) strides.
struct AxisView {
  std::size_t outer = 1;
  std::size_t length = 1;
  std::size_t inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + to_string(shape));
  }
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

}  // namespace

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = element_count(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  if (element_count(shape) != data.size()) {
    throw DimensionError("tensor shape " + to_string(shape) + " does not match " +
                         std::to_string(data.size()) + " elements");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return require(*this, "shape")->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + to_string(s));
  return s[axis];
}

std::size_t Tensor::size() const { return require(*this, "size")->value.size(); }

std::span<const double> Tensor::data() const { return require(*this, "data")->value; }
std::span<double> Tensor::mutable_data() { return require(*this, "data")->value; }

double Tensor::item() const {
  const auto& n = require(*this, "item");
  if (n->value.size() != 1) throw ContractError("item() on tensor of shape " + to_string(n->shape));
  return n->value[0];
}

bool Tensor::requires_grad() const { return require(*this, "requires_grad")->requires_grad; }
bool Tensor::has_grad() const { return !require(*this, "grad")->grad.empty(); }
std::span<const double> Tensor::grad() const { return require(*this, "grad")->grad; }
std::span<double> Tensor::mutable_grad() { return grad_of(*require(*this, "grad")); }
void Tensor::clear_grad() {
  auto& n = *require(*this, "grad");
  n.grad.clear();
  n.grad.shrink_to_fit();
}

Tensor Tensor::clone() const {
  const auto& n = require(*this, "clone");
  return from(n->shape, n->value, n->requires_grad);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& an = require(a, "matmul");
  const auto& bn = require(b, "matmul");
  if (an->shape.empty() || bn->shape.size() != 2 || an->shape.back() != bn->shape[0]) {
    throw DimensionError("matmul: incompatible shapes " + to_string(an->shape) + " and " +
                         to_string(bn->shape));
  }
  const std::size_t k = bn->shape[0];
  const std::size_t n = bn->shape[1];
  const std::size_t rows = an->value.size() / k;
  Shape out_shape = an->shape;
  out_shape.back() = n;
  std::vector<double> out(rows * n);
  MatMap(out.data(), rows, n).noalias() =
      ConstMatMap(an->value.data(), rows, k) * ConstMatMap(bn->value.data(), k, n);
  return make_result(std::move(out_shape), std::move(out), {an, bn}, [rows, k, n](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    ConstMatMap dout(self.grad.data(), rows, n);
    if (pa.requires_grad) {
      MatMap(grad_of(pa).data(), rows, k).noalias() += dout * ConstMatMap(pb.value.data(), k, n).transpose();
    }
    if (pb.requires_grad) {
      MatMap(grad_of(pb).data(), k, n).noalias() += ConstMatMap(pa.value.data(), rows, k).transpose() * dout;
    }
  });
}

Tensor batched_matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  const auto& an = require(a, "batched_matmul");
  const auto& bn = require(b, "batched_matmul");
  const auto& as = an->shape;
  const auto& bs = bn->shape;
  const std::size_t inner_b = transpose_b ? 2 : 1;
  if (as.size() != 3 || bs.size() != 3 || as[0] != bs[0] || as[2] != bs[inner_b]) {
    throw DimensionError("batched_matmul: incompatible shapes " + to_string(as) + " and " +
                         to_string(bs) + (transpose_b ? " (b transposed)" : ""));
  }
  const std::size_t g = as[0], t = as[1], k = as[2];
  const std::size_t s = transpose_b ? bs[1] : bs[2];
  std::vector<double> out(g * t * s, 0.0);
  // b element (kk, ss) of group gg
  auto b_index = [=](std::size_t gg, std::size_t kk, std::size_t ss) {
    return transpose_b ? (gg * s + ss) * k + kk : (gg * k + kk) * s + ss;
  };
  for (std::size_t gg = 0; gg < g; ++gg) {
    const double* ap = an->value.data() + gg * t * k;
    double* op = out.data() + gg * t * s;
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t j = 0; j < s; ++j) {
        double acc = 0.0;
        for (std::size_t kk = 0; kk < k; ++kk) acc += ap[i * k + kk] * bn->value[b_index(gg, kk, j)];
        op[i * s + j] = acc;
      }
    }
  }
  return make_result({g, t, s}, std::move(out), {an, bn}, [=](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const double* dout = self.grad.data();
    double* da = pa.requires_grad ? grad_of(pa).data() : nullptr;
    double* db = pb.requires_grad ? grad_of(pb).data() : nullptr;
    for (std::size_t gg = 0; gg < g; ++gg) {
      const double* ap = pa.value.data() + gg * t * k;
      const double* dp = dout + gg * t * s;
      for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t j = 0; j < s; ++j) {
          const double d = dp[i * s + j];
          if (d == 0.0) continue;
          for (std::size_t kk = 0; kk < k; ++kk) {
            const std::size_t bi = b_index(gg, kk, j);
            if (da) da[gg * t * k + i * k + kk] += d * pb.value[bi];
            if (db) db[bi] += d * ap[i * k + kk];
          }
        }
      }
    }
  });
}

Tensor transpose(const Tensor& matrix) {
  const auto& n = require(matrix, "transpose");
  if (n->shape.size() != 2) throw DimensionError("transpose: expected rank 2, got " + to_string(n->shape));
  const std::size_t r = n->shape[0], c = n->shape[1];
  std::vector<double> out(r * c);
  MatMap(out.data(), c, r) = ConstMatMap(n->value.data(), r, c).transpose();
  return make_result({c, r}, std::move(out), {n}, [r, c](Node& self) {
    auto& p = *self.parents[0];
    MatMap(grad_of(p).data(), r, c) += ConstMatMap(self.grad.data(), c, r).transpose();
  });
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {

void check_suffix(const Shape& a, const Shape& b, const char* op) {
  bool ok = b.size() <= a.size() && std::equal(b.rbegin(), b.rend(), a.rbegin());
  if (!ok) {
    throw DimensionError(std::string(op) + ": shape " + to_string(b) + " does not broadcast onto " +
                         to_string(a));
  }
}

void check_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw DimensionError(std::string(op) + ": shapes differ " + to_string(a) + " vs " + to_string(b));
}

template <class F, class G>
Tensor unary(const Tensor& x, const char* name, F forward, G derivative) {
  const auto& n = require(x, name);
  std::vector<double> out(n->value.size());
  std::transform(n->value.begin(), n->value.end(), out.begin(), forward);
  return make_result(n->shape, std::move(out), {n}, [derivative](Node& self) {
    auto& p = *self.parents[0];
    auto& g = grad_of(p);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * derivative(p.value[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const auto& an = require(a, "add");
  const auto& bn = require(b, "add");
  check_suffix(an->shape, bn->shape, "add");
  const std::size_t inner = bn->value.size();
  std::vector<double> out = an->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bn->value[i % inner];
  return make_result(an->shape, std::move(out), {an, bn}, [inner](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = grad_of(pa);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = grad_of(pb);
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % inner] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const auto& an = require(a, "sub");
  const auto& bn = require(b, "sub");
  check_same(an->shape, bn->shape, "sub");
  std::vector<double> out(an->value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = an->value[i] - bn->value[i];
  return make_result(an->shape, std::move(out), {an, bn}, [](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = grad_of(pa);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = grad_of(pb);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const auto& an = require(a, "mul");
  const auto& bn = require(b, "mul");
  check_same(an->shape, bn->shape, "mul");
  std::vector<double> out(an->value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = an->value[i] * bn->value[i];
  return make_result(an->shape, std::move(out), {an, bn}, [](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = grad_of(pa);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = grad_of(pb);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(x, "scale", [factor](double v) { return v * factor; }, [factor](double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double offset) {
  return unary(x, "add_scalar", [offset](double v) { return v + offset; }, [](double) { return 1.0; });
}

Tensor relu(const Tensor& x) {
  return unary(x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor abs(const Tensor& x) {
  return unary(x, "abs", [](double v) { return std::fabs(v); },
               [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor sum(const Tensor& x) {
  const auto& n = require(x, "sum");
  double total = std::accumulate(n->value.begin(), n->value.end(), 0.0);
  return make_result({}, {total}, {n}, [](Node& self) {
    auto& p = *self.parents[0];
    auto& g = grad_of(p);
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  const auto& n = require(x, "mean");
  if (n->value.empty()) throw ContractError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n->value.size()));
}

Tensor mean_axis(const Tensor& x, std::size_t axis) {
  const auto& n = require(x, "mean_axis");
  const AxisView v = axis_view(n->shape, axis, "mean_axis");
  Shape out_shape = n->shape;
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(v.outer * v.inner, 0.0);
  const double inv = 1.0 / static_cast<double>(v.length);
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t l = 0; l < v.length; ++l)
      for (std::size_t i = 0; i < v.inner; ++i)
        out[o * v.inner + i] += n->value[(o * v.length + l) * v.inner + i] * inv;
  return make_result(std::move(out_shape), std::move(out), {n}, [v, inv](Node& self) {
    auto& g = grad_of(*self.parents[0]);
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t l = 0; l < v.length; ++l)
        for (std::size_t i = 0; i < v.inner; ++i)
          g[(o * v.length + l) * v.inner + i] += self.grad[o * v.inner + i] * inv;
  });
}

// ---------------------------------------------------------------------------
// Normalization

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto& n = require(x, "softmax");
  const AxisView v = axis_view(n->shape, axis, "softmax");
  for (double value : n->value) {
    if (!std::isfinite(value)) throw NumericError("softmax: non-finite input");
  }
  std::vector<double> out(n->value.size());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.length * v.inner + i;
      double peak = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < v.length; ++l) peak = std::max(peak, n->value[base + l * v.inner]);
      double total = 0.0;
      for (std::size_t l = 0; l < v.length; ++l) {
        const double e = std::exp(n->value[base + l * v.inner] - peak);
        out[base + l * v.inner] = e;
        total += e;
      }
      for (std::size_t l = 0; l < v.length; ++l) out[base + l * v.inner] /= total;
    }
  }
  return make_result(n->shape, std::move(out), {n}, [v](Node& self) {
    auto& g = grad_of(*self.parents[0]);
    const auto& y = self.value;
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t i = 0; i < v.inner; ++i) {
        const std::size_t base = o * v.length * v.inner + i;
        double dot = 0.0;
        for (std::size_t l = 0; l < v.length; ++l) dot += self.grad[base + l * v.inner] * y[base + l * v.inner];
        for (std::size_t l = 0; l < v.length; ++l) {
          const std::size_t idx = base + l * v.inner;
          g[idx] += y[idx] * (self.grad[idx] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double epsilon) {
  const auto& xn = require(x, "layer_norm");
  const auto& gn = require(gain, "layer_norm");
  const auto& bn = require(bias, "layer_norm");
  if (xn->shape.empty()) throw DimensionError("layer_norm: scalar input");
  const std::size_t width = xn->shape.back();
  const Shape param_shape{width};
  if (gn->shape != param_shape || bn->shape != param_shape) {
    throw DimensionError("layer_norm: gain/bias " + to_string(gn->shape) + "/" + to_string(bn->shape) +
                         " do not match last axis of " + to_string(xn->shape));
  }
  const std::size_t rows = xn->value.size() / width;
  std::vector<double> out(xn->value.size());
  std::vector<double> normalized(xn->value.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xn->value.data() + r * width;
    double mu = 0.0;
    for (std::size_t c = 0; c < width; ++c) mu += row[c];
    mu /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t c = 0; c < width; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(width);
    inv_std[r] = 1.0 / std::sqrt(var + epsilon);
    for (std::size_t c = 0; c < width; ++c) {
      const double z = (row[c] - mu) * inv_std[r];
      normalized[r * width + c] = z;
      out[r * width + c] = z * gn->value[c] + bn->value[c];
    }
  }
  return make_result(xn->shape, std::move(out), {xn, gn, bn},
                     [rows, width, normalized = std::move(normalized), inv_std = std::move(inv_std)](Node& self) {
                       auto& px = *self.parents[0];
                       auto& pg = *self.parents[1];
                       auto& pb = *self.parents[2];
                       const double w = static_cast<double>(width);
                       if (pg.requires_grad || pb.requires_grad) {
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t c = 0; c < width; ++c) {
                             const double d = self.grad[r * width + c];
                             if (pg.requires_grad) grad_of(pg)[c] += d * normalized[r * width + c];
                             if (pb.requires_grad) grad_of(pb)[c] += d;
                           }
                         }
                       }
                       if (!px.requires_grad) return;
                       auto& gx = grad_of(px);
                       for (std::size_t r = 0; r < rows; ++r) {
                         double mean_dz = 0.0, mean_dz_z = 0.0;
                         for (std::size_t c = 0; c < width; ++c) {
                           const double dz = self.grad[r * width + c] * pg.value[c];
                           mean_dz += dz;
                           mean_dz_z += dz * normalized[r * width + c];
                         }
                         mean_dz /= w;
                         mean_dz_z /= w;
                         for (std::size_t c = 0; c < width; ++c) {
                           const double dz = self.grad[r * width + c] * pg.value[c];
                           gx[r * width + c] +=
                               inv_std[r] * (dz - mean_dz - normalized[r * width + c] * mean_dz_z);
                         }
                       }
                     });
}

Tensor dropout(const Tensor& x, double rate, bool training, std::mt19937_64& rng) {
  const auto& n = require(x, "dropout");
  if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout: rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::bernoulli_distribution keep(1.0 - rate);
  std::vector<double> mask(n->value.size());
  for (double& m : mask) m = keep(rng) ? keep_scale : 0.0;
  std::vector<double> out(n->value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = n->value[i] * mask[i];
  return make_result(n->shape, std::move(out), {n}, [mask = std::move(mask)](Node& self) {
    auto& g = grad_of(*self.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

Tensor embedding_lookup(const Tensor& table, std::span<const std::int64_t> ids, const std::string& feature_name) {
  const auto& tn = require(table, "embedding_lookup");
  if (tn->shape.size() != 2) {
    throw DimensionError("embedding_lookup(" + feature_name + "): table must be rank 2, got " +
                         to_string(tn->shape));
  }
  const std::size_t vocab = tn->shape[0], width = tn->shape[1];
  std::vector<std::size_t> rows(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw IndexError("embedding_lookup(" + feature_name + "): id " + std::to_string(ids[i]) +
                       " outside vocabulary of size " + std::to_string(vocab));
    }
    rows[i] = static_cast<std::size_t>(ids[i]);
  }
  std::vector<double> out(ids.size() * width);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(tn->value.data() + rows[i] * width, width, out.data() + i * width);
  return make_result({ids.size(), width}, std::move(out), {tn}, [rows = std::move(rows), width](Node& self) {
    auto& g = grad_of(*self.parents[0]);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t c = 0; c < width; ++c) g[rows[i] * width + c] += self.grad[i * width + c];
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  std::vector<NodePtr> nodes;
  nodes.reserve(parts.size());
  for (const auto& p : parts) nodes.push_back(require(p, "concat"));
  const Shape& first = nodes[0]->shape;
  if (first.empty()) throw DimensionError("concat: scalar input");
  const Shape lead(first.begin(), first.end() - 1);
  std::vector<std::size_t> widths;
  std::size_t total_width = 0;
  for (const auto& n : nodes) {
    if (n->shape.size() != first.size() || !std::equal(lead.begin(), lead.end(), n->shape.begin())) {
      throw DimensionError("concat: leading dims differ " + to_string(first) + " vs " + to_string(n->shape));
    }
    widths.push_back(n->shape.back());
    total_width += n->shape.back();
  }
  const std::size_t rows = element_count(lead);
  std::vector<double> out(rows * total_width);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < nodes.size(); ++p) {
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(nodes[p]->value.data() + r * widths[p], widths[p], out.data() + r * total_width + offset);
    offset += widths[p];
  }
  Shape out_shape = lead;
  out_shape.push_back(total_width);
  return make_result(std::move(out_shape), std::move(out), std::move(nodes),
                     [widths, rows, total_width](Node& self) {
                       std::size_t offset = 0;
                       for (std::size_t p = 0; p < self.parents.size(); ++p) {
                         auto& parent = *self.parents[p];
                         if (parent.requires_grad) {
                           auto& g = grad_of(parent);
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t c = 0; c < widths[p]; ++c)
                               g[r * widths[p] + c] += self.grad[r * total_width + offset + c];
                         }
                         offset += widths[p];
                       }
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  const auto& n = require(x, "reshape");
  if (element_count(shape) != n->value.size()) {
    throw DimensionError("reshape: cannot view " + to_string(n->shape) + " as " + to_string(shape));
  }
  return make_result(std::move(shape), n->value, {n}, [](Node& self) {
    auto& g = grad_of(*self.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const auto& n = require(x, "permute");
  const std::size_t rank = n->shape.size();
  std::vector<bool> seen(rank, false);
  if (order.size() != rank) throw DimensionError("permute: order length differs from rank of " + to_string(n->shape));
  for (std::size_t a : order) {
    if (a >= rank || seen[a]) throw DimensionError("permute: invalid axis order");
    seen[a] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = n->shape[order[i]];
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * n->shape[i];
  // source index for each destination element
  std::vector<std::size_t> source(n->value.size());
  std::vector<std::size_t> counter(rank, 0);
  for (std::size_t dst = 0; dst < source.size(); ++dst) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < rank; ++i) src += counter[i] * in_strides[order[i]];
    source[dst] = src;
    for (std::size_t i = rank; i-- > 0;) {
      if (++counter[i] < out_shape[i]) break;
      counter[i] = 0;
    }
  }
  std::vector<double> out(source.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = n->value[source[i]];
  return make_result(std::move(out_shape), std::move(out), {n}, [source = std::move(source)](Node& self) {
    auto& g = grad_of(*self.parents[0]);
    for (std::size_t i = 0; i < source.size(); ++i) g[source[i]] += self.grad[i];
  });
}

Tensor take(const Tensor& x, std::size_t axis, std::size_t index) {
  const auto& n = require(x, "take");
  const AxisView v = axis_view(n->shape, axis, "take");
  if (index >= v.length) {
    throw IndexError("take: index " + std::to_string(index) + " out of range for axis " + std::to_string(axis) +
                     " of " + to_string(n->shape));
  }
  Shape out_shape = n->shape;
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(v.outer * v.inner);
  for (std::size_t o = 0; o < v.outer; ++o)
    std::copy_n(n->value.data() + (o * v.length + index) * v.inner, v.inner, out.data() + o * v.inner);
  return make_result(std::move(out_shape), std::move(out), {n}, [v, index](Node& self) {
    auto& g = grad_of(*self.parents[0]);
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t i = 0; i < v.inner; ++i) g[(o * v.length + index) * v.inner + i] += self.grad[o * v.inner + i];
  });
}

// ---------------------------------------------------------------------------
// Backward

void backward(const Tensor& loss) {
  const auto& root = require(loss, "backward");
  if (root->value.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + to_string(root->shape));
  }
  if (!root->requires_grad) return;

  // Iterative post-order DFS over nodes that carry gradients.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior gradients belong to this pass only; leaves accumulate.
  for (Node* node : order) {
    if (!node->parents.empty()) {
      node->grad.assign(node->value.size(), 0.0);
    } else {
      grad_of(*node);
    }
  }
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backprop && !node->parents.empty()) node->backprop(*node);
  }
}

}  // namespace sttm::numerics
