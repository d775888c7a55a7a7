// SPDX-License-Identifier: Apache-2.0
#include "naepro/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <unordered_set>
#include <utility>

#include "naepro/error.hpp"

namespace naepro::ad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

thread_local bool g_grad_enabled = true;

ConstMap as_matrix(const Tensor& t) { return ConstMap(t.data(), t.rows(), t.cols()); }
MutMap as_matrix(Tensor& t) { return MutMap(t.data(), t.rows(), t.cols()); }

Var make_node(Tensor value, std::initializer_list<Var> parents, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->is_leaf = false;
  if (g_grad_enabled) {
    const bool any = std::any_of(parents.begin(), parents.end(),
                                 [](const Var& p) { return p.defined() && p.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      for (const Var& p : parents) node->parents.push_back(p.handle());
      node->backward = std::move(backward);
    }
  }
  return Var(std::move(node));
}

Var make_node(Tensor value, const std::vector<Var>& parents, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->is_leaf = false;
  if (g_grad_enabled) {
    const bool any = std::any_of(parents.begin(), parents.end(),
                                 [](const Var& p) { return p.defined() && p.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      for (const Var& p : parents) node->parents.push_back(p.handle());
      node->backward = std::move(backward);
    }
  }
  return Var(std::move(node));
}

// Adjoint buffer of parent i, or nullptr when that parent does not need one.
Tensor* parent_grad(Node& self, std::size_t i) {
  Node* p = self.parents[i].get();
  return (p && p->requires_grad) ? &p->grad_buffer() : nullptr;
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a rank-2 tensor, got " + shape_string(t.shape()));
  }
}

// ---- broadcasting ----------------------------------------------------------

struct Broadcast {
  Shape out;
  std::vector<std::size_t> dims;       // out shape padded to common rank
  std::vector<std::size_t> stride_a;   // 0 on broadcast axes
  std::vector<std::size_t> stride_b;
  enum class Mode { kSame, kScalarA, kScalarB, kSuffixA, kSuffixB, kColumnA, kColumnB, kGeneral } mode;
  std::size_t size_a = 0;
  std::size_t size_b = 0;
};

std::vector<std::size_t> padded(const Shape& s, std::size_t rank) {
  std::vector<std::size_t> out(rank - s.size(), 1);
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

std::vector<std::size_t> strides_for(const std::vector<std::size_t>& dims) {
  std::vector<std::size_t> st(dims.size(), 0);
  std::size_t acc = 1;
  for (std::size_t i = dims.size(); i-- > 0;) {
    st[i] = dims[i] == 1 ? 0 : acc;
    acc *= dims[i];
  }
  return st;
}

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast bc;
  bc.size_a = shape_size(a);
  bc.size_b = shape_size(b);
  const std::size_t rank = std::max(a.size(), b.size());
  auto pa = padded(a, rank);
  auto pb = padded(b, rank);
  bc.dims.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
      throw DimensionError(std::string(op) + ": shapes " + shape_string(a) + " and " + shape_string(b) +
                           " are not broadcast-compatible");
    }
    bc.dims[i] = pa[i] == 1 ? pb[i] : pa[i];
  }
  bc.out = Shape(bc.dims.begin(), bc.dims.end());
  if (rank == 0) bc.out = Shape{};
  bc.stride_a = strides_for(pa);
  bc.stride_b = strides_for(pb);

  const std::size_t n = shape_size(bc.out);
  auto is_suffix = [&](const std::vector<std::size_t>& p) {
    // leading ones, then identical to the output's trailing dims
    std::size_t i = 0;
    while (i < rank && p[i] == 1) ++i;
    for (std::size_t j = i; j < rank; ++j)
      if (p[j] != bc.dims[j]) return false;
    return true;
  };
  auto is_column = [&](const std::vector<std::size_t>& p) {
    if (rank < 2 || p[rank - 1] != 1 || bc.dims[rank - 1] == 1) return false;
    for (std::size_t j = 0; j + 1 < rank; ++j)
      if (p[j] != bc.dims[j]) return false;
    return true;
  };
  if (bc.size_a == n && bc.size_b == n) {
    bc.mode = Broadcast::Mode::kSame;
  } else if (bc.size_a == n && bc.size_b == 1) {
    bc.mode = Broadcast::Mode::kScalarB;
  } else if (bc.size_b == n && bc.size_a == 1) {
    bc.mode = Broadcast::Mode::kScalarA;
  } else if (bc.size_a == n && is_suffix(pb)) {
    bc.mode = Broadcast::Mode::kSuffixB;
  } else if (bc.size_b == n && is_suffix(pa)) {
    bc.mode = Broadcast::Mode::kSuffixA;
  } else if (bc.size_a == n && is_column(pb)) {
    bc.mode = Broadcast::Mode::kColumnB;
  } else if (bc.size_b == n && is_column(pa)) {
    bc.mode = Broadcast::Mode::kColumnA;
  } else {
    bc.mode = Broadcast::Mode::kGeneral;
  }
  return bc;
}

// Calls f(i, ia, ib) for every output element i.
template <class F>
void for_each_broadcast(const Broadcast& bc, F&& f) {
  const std::size_t n = shape_size(bc.out);
  const std::size_t last = bc.dims.empty() ? 1 : bc.dims.back();
  switch (bc.mode) {
    case Broadcast::Mode::kSame:
      for (std::size_t i = 0; i < n; ++i) f(i, i, i);
      return;
    case Broadcast::Mode::kScalarB:
      for (std::size_t i = 0; i < n; ++i) f(i, i, std::size_t{0});
      return;
    case Broadcast::Mode::kScalarA:
      for (std::size_t i = 0; i < n; ++i) f(i, std::size_t{0}, i);
      return;
    case Broadcast::Mode::kSuffixB:
      for (std::size_t i = 0; i < n; ++i) f(i, i, i % bc.size_b);
      return;
    case Broadcast::Mode::kSuffixA:
      for (std::size_t i = 0; i < n; ++i) f(i, i % bc.size_a, i);
      return;
    case Broadcast::Mode::kColumnB:
      for (std::size_t i = 0; i < n; ++i) f(i, i, i / last);
      return;
    case Broadcast::Mode::kColumnA:
      for (std::size_t i = 0; i < n; ++i) f(i, i / last, i);
      return;
    case Broadcast::Mode::kGeneral:
      break;
  }
  const std::size_t rank = bc.dims.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0;
  std::size_t ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (std::size_t axis = rank; axis-- > 0;) {
      ++idx[axis];
      ia += bc.stride_a[axis];
      ib += bc.stride_b[axis];
      if (idx[axis] < bc.dims[axis]) break;
      ia -= bc.stride_a[axis] * idx[axis];
      ib -= bc.stride_b[axis] * idx[axis];
      idx[axis] = 0;
    }
  }
}

template <class Fwd, class Bwd>
Var binary(const Var& a, const Var& b, const char* op, Fwd fwd, Bwd bwd) {
  auto bc = std::make_shared<Broadcast>(plan_broadcast(a.shape(), b.shape(), op));
  Tensor out(bc->out);
  const double* pa = a.value().data();
  const double* pb = b.value().data();
  double* po = out.data();
  for_each_broadcast(*bc, [&](std::size_t i, std::size_t ia, std::size_t ib) { po[i] = fwd(pa[ia], pb[ib]); });
  return make_node(std::move(out), {a, b}, [bc, bwd](Node& self) {
    Tensor* ga = parent_grad(self, 0);
    Tensor* gb = parent_grad(self, 1);
    const double* va = self.parents[0]->value.data();
    const double* vb = self.parents[1]->value.data();
    const double* g = self.grad.data();
    double* dga = ga ? ga->data() : nullptr;
    double* dgb = gb ? gb->data() : nullptr;
    for_each_broadcast(*bc, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      const auto [da, db] = bwd(va[ia], vb[ib], g[i]);
      if (dga) dga[ia] += da;
      if (dgb) dgb[ib] += db;
    });
  });
}

// dfn(x, y, g) returns the adjoint contribution for input x with output y.
template <class Fwd, class Bwd>
Var unary(const Var& a, Fwd fwd, Bwd dfn) {
  Tensor out(a.shape());
  const double* pa = a.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(pa[i]);
  return make_node(std::move(out), {a}, [dfn](Node& self) {
    Tensor* ga = parent_grad(self, 0);
    if (!ga) return;
    const Tensor& x = self.parents[0]->value;
    for (std::size_t i = 0; i < x.size(); ++i) (*ga)[i] += dfn(x[i], self.value[i], self.grad[i]);
  });
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---- Node / Var --------------------------------------------------------------

Tensor& Node::grad_buffer() {
  if (grad.shape() != value.shape() || grad.size() != value.size()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

const Tensor& Var::grad() const { return node_->grad_buffer(); }

void Var::zero_grad() { node_->grad = Tensor(node_->value.shape(), 0.0); }

Var parameter(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Var& root) {
  if (!root.defined() || root.value().size() != 1) {
    throw DimensionError("backward() needs a scalar root, got " +
                         (root.defined() ? shape_string(root.shape()) : std::string("<undefined>")));
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS; the reverse is a valid backward schedule.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent && parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order) {
    if (!n->is_leaf) n->grad = Tensor(n->value.shape(), 0.0);
  }
  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward) n->backward(*n);
  }
}

// ---- linear algebra ----------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  const Tensor& va = a.value();
  const Tensor& vb = b.value();
  if (va.rank() != 2 || vb.rank() != 2 || va.dim(1) != vb.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_string(va.shape()) + " by " +
                         shape_string(vb.shape()));
  }
  Tensor out(Shape{va.dim(0), vb.dim(1)});
  as_matrix(out).noalias() = as_matrix(va) * as_matrix(vb);
  return make_node(std::move(out), {a, b}, [](Node& self) {
    const auto g = as_matrix(self.grad);
    if (Tensor* ga = parent_grad(self, 0)) as_matrix(*ga).noalias() += g * as_matrix(self.parents[1]->value).transpose();
    if (Tensor* gb = parent_grad(self, 1)) as_matrix(*gb).noalias() += as_matrix(self.parents[0]->value).transpose() * g;
  });
}

Var transpose(const Var& a) {
  require_rank2(a.value(), "transpose");
  Tensor out(Shape{a.shape()[1], a.shape()[0]});
  as_matrix(out) = as_matrix(a.value()).transpose();
  return make_node(std::move(out), {a}, [](Node& self) {
    if (Tensor* ga = parent_grad(self, 0)) as_matrix(*ga) += as_matrix(self.grad).transpose();
  });
}

// ---- elementwise ---------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double g) { return std::pair{g, g}; });
}

Var sub(const Var& a, const Var& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double g) { return std::pair{g, -g}; });
}

Var mul(const Var& a, const Var& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double x, double y, double g) { return std::pair{g * y, g * x}; });
}

Var div(const Var& a, const Var& b) {
  return binary(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double x, double y, double g) { return std::pair{g / y, -g * x / (y * y)}; });
}

Var scale(const Var& a, double factor) {
  return unary(
      a, [factor](double x) { return x * factor; }, [factor](double, double, double g) { return g * factor; });
}

Var add_scalar(const Var& a, double offset) {
  return unary(
      a, [offset](double x) { return x + offset; }, [](double, double, double g) { return g; });
}

Var silu(const Var& a) {
  return unary(
      a, [](double x) { return x * sigmoid_scalar(x); },
      [](double x, double, double g) {
        const double s = sigmoid_scalar(x);
        return g * (s + x * s * (1.0 - s));
      });
}

Var relu(const Var& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double, double g) { return x > 0.0 ? g : 0.0; });
}

Var sigmoid(const Var& a) {
  return unary(
      a, [](double x) { return sigmoid_scalar(x); }, [](double, double y, double g) { return g * y * (1.0 - y); });
}

Var exp(const Var& a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y, double g) { return g * y; });
}

Var log(const Var& a) {
  return unary(
      a, [](double x) { return std::log(x); }, [](double x, double, double g) { return g / x; });
}

Var square(const Var& a) {
  return unary(
      a, [](double x) { return x * x; }, [](double x, double, double g) { return 2.0 * x * g; });
}

Var clamp_min(const Var& a, double floor) {
  return unary(
      a, [floor](double x) { return x < floor ? floor : x; },
      [floor](double x, double, double g) { return x < floor ? 0.0 : g; });
}

// ---- normalisation -----------------------------------------------------------------

Var softmax(const Var& a, std::size_t axis) {
  const Shape& s = a.shape();
  if (axis >= s.size()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_string(s));
  }
  const std::size_t n = s[axis];
  if (n == 0) throw DimensionError("softmax over an empty axis");
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];

  Tensor out(s);
  const Tensor& x = a.value();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = x[base];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[base + j * inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double e = std::exp(x[base + j * inner] - mx);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= total;
    }
  }
  return make_node(std::move(out), {a}, [outer, n, inner](Node& self) {
    Tensor* ga = parent_grad(self, 0);
    if (!ga) return;
    const Tensor& y = self.value;
    const Tensor& g = self.grad;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t k = base + j * inner;
          (*ga)[k] += y[k] * (g[k] - dot);
        }
      }
    }
  });
}

Var log_softmax(const Var& a) {
  const std::size_t n = a.value().cols();
  const std::size_t rows = a.value().rows();
  if (n == 0) throw DimensionError("log_softmax over an empty axis");
  Tensor out(a.shape());
  const Tensor& x = a.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * n;
    const double mx = *std::max_element(xr, xr + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(xr[j] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = xr[j] - lse;
  }
  return make_node(std::move(out), {a}, [rows, n](Node& self) {
    Tensor* ga = parent_grad(self, 0);
    if (!ga) return;
    for (std::size_t r = 0; r < rows; ++r) {
      double gsum = 0.0;
      for (std::size_t j = 0; j < n; ++j) gsum += self.grad[r * n + j];
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t k = r * n + j;
        (*ga)[k] += self.grad[k] - std::exp(self.value[k]) * gsum;
      }
    }
  });
}

Var layernorm(const Var& x, const Var& gain, const Var& bias) {
  const std::size_t d = x.value().cols();
  const std::size_t rows = x.value().rows();
  if (d == 0) throw DimensionError("layernorm over an empty axis");
  if (gain.value().size() != d || bias.value().size() != d) {
    throw DimensionError("layernorm: input " + shape_string(x.shape()) + " with gain " +
                         shape_string(gain.shape()) + " and bias " + shape_string(bias.shape()));
  }
  Tensor out(x.shape());
  const Tensor& v = x.value();
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = v.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = (xr[j] - mu) * rstd * gv[j] + bv[j];
  }
  return make_node(std::move(out), {x, gain, bias}, [rows, d](Node& self) {
    Tensor* gx = parent_grad(self, 0);
    Tensor* ggain = parent_grad(self, 1);
    Tensor* gbias = parent_grad(self, 2);
    const Tensor& v = self.parents[0]->value;
    const Tensor& gv = self.parents[1]->value;
    std::vector<double> xhat(d);
    std::vector<double> gh(d);
    const double inv_d = 1.0 / static_cast<double>(d);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* xr = v.data() + r * d;
      const double* g = self.grad.data() + r * d;
      double mu = 0.0;
      for (std::size_t j = 0; j < d; ++j) mu += xr[j];
      mu *= inv_d;
      double var = 0.0;
      for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
      var *= inv_d;
      const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
      double sum_gh = 0.0;
      double sum_ghx = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        xhat[j] = (xr[j] - mu) * rstd;
        gh[j] = g[j] * gv[j];
        sum_gh += gh[j];
        sum_ghx += gh[j] * xhat[j];
        if (ggain) (*ggain)[j] += g[j] * xhat[j];
        if (gbias) (*gbias)[j] += g[j];
      }
      if (gx) {
        for (std::size_t j = 0; j < d; ++j) {
          (*gx)[r * d + j] += rstd * (gh[j] - inv_d * sum_gh - xhat[j] * inv_d * sum_ghx);
        }
      }
    }
  });
}

// ---- reductions --------------------------------------------------------------------

Var sum(const Var& a) {
  double total = 0.0;
  for (double v : a.value().values()) total += v;
  return make_node(Tensor::scalar(total), {a}, [](Node& self) {
    Tensor* ga = parent_grad(self, 0);
    if (!ga) return;
    const double g = self.grad[0];
    for (double& v : ga->values()) v += g;
  });
}

Var mean(const Var& a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var sum_last(const Var& a) {
  const std::size_t n = a.value().cols();
  const std::size_t rows = a.value().rows();
  Shape s = a.shape();
  if (s.empty()) s = Shape{1};
  s.back() = 1;
  Tensor out(s);
  for (std::size_t r = 0; r < rows; ++r) {
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += a.value()[r * n + j];
    out[r] = total;
  }
  return make_node(std::move(out), {a}, [rows, n](Node& self) {
    Tensor* ga = parent_grad(self, 0);
    if (!ga) return;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < n; ++j) (*ga)[r * n + j] += self.grad[r];
  });
}

Var group_sum(const Var& a, std::size_t group) {
  const Tensor& v = a.value();
  require_rank2(v, "group_sum");
  const std::size_t rows = v.dim(0);
  const std::size_t cols = v.dim(1);
  if (group == 0 || rows % group != 0) {
    throw DimensionError("group_sum: " + std::to_string(rows) + " rows do not split into groups of " +
                         std::to_string(group));
  }
  const std::size_t groups = rows / group;
  Tensor out(Shape{groups, cols});
  for (std::size_t gi = 0; gi < groups; ++gi)
    for (std::size_t r = gi * group; r < (gi + 1) * group; ++r)
      for (std::size_t c = 0; c < cols; ++c) out[gi * cols + c] += v[r * cols + c];
  return make_node(std::move(out), {a}, [group, groups, cols](Node& self) {
    Tensor* ga = parent_grad(self, 0);
    if (!ga) return;
    for (std::size_t gi = 0; gi < groups; ++gi)
      for (std::size_t r = gi * group; r < (gi + 1) * group; ++r)
        for (std::size_t c = 0; c < cols; ++c) (*ga)[r * cols + c] += self.grad[gi * cols + c];
  });
}

Var row_norm(const Var& a) {
  const std::size_t n = a.value().cols();
  const std::size_t rows = a.value().rows();
  Shape s = a.shape();
  if (s.empty()) s = Shape{1};
  s.back() = 1;
  Tensor out(s);
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::size_t j = 0; j < n; ++j) sq += a.value()[r * n + j] * a.value()[r * n + j];
    out[r] = std::sqrt(sq);
  }
  return make_node(std::move(out), {a}, [rows, n](Node& self) {
    Tensor* ga = parent_grad(self, 0);
    if (!ga) return;
    const Tensor& x = self.parents[0]->value;
    for (std::size_t r = 0; r < rows; ++r) {
      const double norm = self.value[r];
      if (norm == 0.0) continue;  // subgradient 0 at the origin
      const double f = self.grad[r] / norm;
      for (std::size_t j = 0; j < n; ++j) (*ga)[r * n + j] += f * x[r * n + j];
    }
  });
}

Var norm2(const Var& a) {
  const std::size_t n = a.value().size();
  return reshape(row_norm(reshape(a, Shape{1, n})), Shape{});
}

// ---- indexing ------------------------------------------------------------------------

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return make_node(std::move(out), {a}, [](Node& self) {
    Tensor* ga = parent_grad(self, 0);
    if (!ga) return;
    for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += self.grad[i];
  });
}

Var gather_rows(const Var& a, std::span<const std::size_t> rows) {
  const Tensor& v = a.value();
  require_rank2(v, "gather_rows");
  const std::size_t n = v.dim(0);
  const std::size_t cols = v.dim(1);
  Tensor out(Shape{rows.size(), cols});
  for (std::size_t e = 0; e < rows.size(); ++e) {
    if (rows[e] >= n) throw DimensionError("gather_rows: row " + std::to_string(rows[e]) + " out of range");
    std::copy_n(v.data() + rows[e] * cols, cols, out.data() + e * cols);
  }
  std::vector<std::size_t> index(rows.begin(), rows.end());
  return make_node(std::move(out), {a}, [index = std::move(index), cols](Node& self) {
    Tensor* ga = parent_grad(self, 0);
    if (!ga) return;
    for (std::size_t e = 0; e < index.size(); ++e) {
      double* dst = ga->data() + index[e] * cols;
      const double* src = self.grad.data() + e * cols;
      for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
    }
  });
}

Var take(const Var& a, std::span<const std::size_t> rows, std::span<const std::size_t> cols) {
  const Tensor& v = a.value();
  require_rank2(v, "take");
  if (rows.size() != cols.size()) throw DimensionError("take: row and column index lists differ in length");
  Tensor out(Shape{rows.size()});
  std::vector<std::size_t> flat(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= v.dim(0) || cols[i] >= v.dim(1)) {
      throw DimensionError("take: index (" + std::to_string(rows[i]) + "," + std::to_string(cols[i]) +
                           ") out of range for " + shape_string(v.shape()));
    }
    flat[i] = rows[i] * v.dim(1) + cols[i];
    out[i] = v[flat[i]];
  }
  return make_node(std::move(out), {a}, [flat = std::move(flat)](Node& self) {
    Tensor* ga = parent_grad(self, 0);
    if (!ga) return;
    for (std::size_t i = 0; i < flat.size(); ++i) (*ga)[flat[i]] += self.grad[i];
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols of nothing");
  const std::size_t rows = parts[0].value().rank() == 2 ? parts[0].shape()[0] : 0;
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    require_rank2(p.value(), "concat_cols");
    if (p.shape()[0] != rows) {
      throw DimensionError("concat_cols: row mismatch " + shape_string(parts[0].shape()) + " vs " +
                           shape_string(p.shape()));
    }
    widths.push_back(p.shape()[1]);
    total += p.shape()[1];
  }
  Tensor out(Shape{rows, total});
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(v.data() + r * widths[k], widths[k], out.data() + r * total + offset);
    offset += widths[k];
  }
  std::vector<Var> parents(parts.begin(), parts.end());
  return make_node(std::move(out), parents, [widths, rows, total](Node& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (Tensor* g = parent_grad(self, k)) {
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < widths[k]; ++c) (*g)[r * widths[k] + c] += self.grad[r * total + offset + c];
      }
      offset += widths[k];
    }
  });
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
  const Tensor& v = a.value();
  require_rank2(v, "slice_cols");
  if (begin > end || end > v.dim(1)) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for " +
                         shape_string(v.shape()));
  }
  const std::size_t rows = v.dim(0);
  const std::size_t cols = v.dim(1);
  const std::size_t w = end - begin;
  Tensor out(Shape{rows, w});
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(v.data() + r * cols + begin, w, out.data() + r * w);
  return make_node(std::move(out), {a}, [rows, cols, begin, w](Node& self) {
    Tensor* ga = parent_grad(self, 0);
    if (!ga) return;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < w; ++c) (*ga)[r * cols + begin + c] += self.grad[r * w + c];
  });
}

Var pair_linear(const Var& a, const Var& extra, std::span<const std::size_t> src,
                std::span<const std::size_t> dst, const Var& weight, const Var& bias) {
  const Tensor& va = a.value();
  const Tensor& vw = weight.value();
  require_rank2(va, "pair_linear");
  require_rank2(vw, "pair_linear");
  const std::size_t n = va.dim(0);
  const std::size_t d = va.dim(1);
  const std::size_t edges = dst.size();
  const bool use_src = !src.empty();
  if (use_src && src.size() != edges) throw DimensionError("pair_linear: src/dst edge lists differ in length");
  const std::size_t e = extra.defined() ? extra.value().cols() : 0;
  if (extra.defined() && extra.value().rows() != edges) {
    throw DimensionError("pair_linear: extra features " + shape_string(extra.shape()) + " for " +
                         std::to_string(edges) + " edges");
  }
  const std::size_t in = (use_src ? d : 0) + d + e;
  const std::size_t out_w = vw.dim(1);
  if (vw.dim(0) != in) {
    throw DimensionError("pair_linear: weight " + shape_string(vw.shape()) + " does not match input width " +
                         std::to_string(in));
  }
  if (bias.defined() && bias.value().size() != out_w) {
    throw DimensionError("pair_linear: bias " + shape_string(bias.shape()) + " for output width " +
                         std::to_string(out_w));
  }
  for (std::size_t k = 0; k < edges; ++k) {
    if (dst[k] >= n || (use_src && src[k] >= n)) throw DimensionError("pair_linear: edge endpoint out of range");
  }

  const std::size_t src_off = 0;
  const std::size_t dst_off = use_src ? d : 0;
  const std::size_t extra_off = dst_off + d;
  const auto W = as_matrix(vw);
  RowMatrix p_dst = as_matrix(va) * W.middleRows(dst_off, d);
  RowMatrix p_src;
  if (use_src) p_src = as_matrix(va) * W.middleRows(src_off, d);

  Tensor out(Shape{edges, out_w});
  auto O = as_matrix(out);
  if (e > 0) O.noalias() = as_matrix(extra.value()) * W.middleRows(extra_off, e);
  for (std::size_t k = 0; k < edges; ++k) {
    O.row(k) += p_dst.row(dst[k]);
    if (use_src) O.row(k) += p_src.row(src[k]);
    if (bias.defined()) O.row(k) += ConstMap(bias.value().data(), 1, out_w);
  }

  std::vector<std::size_t> src_idx(src.begin(), src.end());
  std::vector<std::size_t> dst_idx(dst.begin(), dst.end());
  return make_node(
      std::move(out), {a, extra, weight, bias},
      [src_idx = std::move(src_idx), dst_idx = std::move(dst_idx), n, d, e, out_w, src_off, dst_off,
       extra_off](Node& self) {
        const bool use_src = !src_idx.empty();
        const auto G = as_matrix(self.grad);
        const Tensor& va = self.parents[0]->value;
        const auto W = as_matrix(self.parents[2]->value);
        RowMatrix g_dst = RowMatrix::Zero(n, out_w);
        RowMatrix g_src;
        if (use_src) g_src = RowMatrix::Zero(n, out_w);
        for (std::size_t k = 0; k < dst_idx.size(); ++k) {
          g_dst.row(dst_idx[k]) += G.row(k);
          if (use_src) g_src.row(src_idx[k]) += G.row(k);
        }
        if (Tensor* ga = parent_grad(self, 0)) {
          auto A = as_matrix(*ga);
          A.noalias() += g_dst * W.middleRows(dst_off, d).transpose();
          if (use_src) A.noalias() += g_src * W.middleRows(src_off, d).transpose();
        }
        if (e > 0) {
          if (Tensor* gx = parent_grad(self, 1)) as_matrix(*gx).noalias() += G * W.middleRows(extra_off, e).transpose();
        }
        if (Tensor* gw = parent_grad(self, 2)) {
          auto GW = as_matrix(*gw);
          const auto A = as_matrix(va);
          GW.middleRows(dst_off, d).noalias() += A.transpose() * g_dst;
          if (use_src) GW.middleRows(src_off, d).noalias() += A.transpose() * g_src;
          if (e > 0) GW.middleRows(extra_off, e).noalias() += as_matrix(self.parents[1]->value).transpose() * G;
        }
        if (self.parents[3]) {
          if (Tensor* gb = parent_grad(self, 3)) {
            for (Eigen::Index k = 0; k < G.rows(); ++k)
              for (std::size_t c = 0; c < out_w; ++c) (*gb)[c] += G(k, c);
          }
        }
      });
}

}  // namespace naepro::ad
