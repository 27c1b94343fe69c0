#include "flowplan/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace flowplan::ag {
namespace {

thread_local bool t_grad_enabled = true;

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) +
                              "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                              "x" + std::to_string(b.cols()) + ")");
}

std::shared_ptr<Node> make_node(std::size_t rows, std::size_t cols, std::vector<double> value) {
  auto n = std::make_shared<Node>();
  n->rows = rows;
  n->cols = cols;
  n->value = std::move(value);
  return n;
}

// Attaches history when recording and any input needs a gradient.
Tensor finish(std::shared_ptr<Node> out, std::initializer_list<const Tensor*> inputs,
              std::function<void(Node&)> fn) {
  if (t_grad_enabled) {
    bool any = false;
    for (const Tensor* t : inputs) any = any || t->requires_grad();
    if (any) {
      out->requires_grad = true;
      for (const Tensor* t : inputs) out->parents.push_back(t->node());
      out->backward = std::move(fn);
    }
  }
  return Tensor(std::move(out));
}

Tensor finish_many(std::shared_ptr<Node> out, const std::vector<Tensor>& inputs,
                   std::function<void(Node&)> fn) {
  if (t_grad_enabled) {
    bool any = std::any_of(inputs.begin(), inputs.end(),
                           [](const Tensor& t) { return t.requires_grad(); });
    if (any) {
      out->requires_grad = true;
      for (const Tensor& t : inputs) out->parents.push_back(t.node());
      out->backward = std::move(fn);
    }
  }
  return Tensor(std::move(out));
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus_scalar(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace

std::vector<double>& Node::ensure_grad() {
  if (grad.size() != size()) grad.assign(size(), 0.0);
  return grad;
}

Tensor Tensor::constant(std::size_t rows, std::size_t cols, std::vector<double> values) {
  if (values.size() != rows * cols) throw std::invalid_argument("constant: size mismatch");
  return Tensor(make_node(rows, cols, std::move(values)));
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols) {
  return constant(rows, cols, std::vector<double>(rows * cols, 0.0));
}

Tensor Tensor::row(std::vector<double> values) {
  const auto n = values.size();
  return constant(1, n, std::move(values));
}

Tensor Tensor::scalar(double v) { return constant(1, 1, {v}); }

Tensor Tensor::parameter(std::size_t rows, std::size_t cols, std::vector<double> values) {
  Tensor t = constant(rows, cols, std::move(values));
  t.node_->requires_grad = true;
  return t;
}

std::span<const double> Tensor::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("item() on a non-scalar tensor");
  return node_->value[0];
}

Tensor Tensor::detach() const { return constant(rows(), cols(), value()); }

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

void backward(const Tensor& loss) {
  if (loss.size() != 1) throw std::invalid_argument("backward: loss must be a scalar");
  if (!loss.requires_grad()) return;
  // Iterative post-order DFS yields a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }
  loss.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  // Intermediate gradients are not needed again; leaves keep theirs.
  for (Node* n : order)
    if (n->backward) std::vector<double>().swap(n->grad);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a, b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  const double* A = a.value().data();
  const double* B = b.value().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* o = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* br = B + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  return finish(make_node(m, n, std::move(out)), {&a, &b}, [pa, pb, m, k, n](Node& self) {
    const double* G = self.grad.data();
    if (pa->requires_grad) {
      auto& ga = pa->ensure_grad();
      const double* B = pb->value.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          const double* g = G + i * n;
          const double* br = B + p * n;
          for (std::size_t j = 0; j < n; ++j) s += g[j] * br[j];
          ga[i * k + p] += s;
        }
    }
    if (pb->requires_grad) {
      auto& gb = pb->ensure_grad();
      const double* A = pa->value.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A[i * k + p];
          if (av == 0.0) continue;
          const double* g = G + i * n;
          double* o = gb.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) o[j] += av * g[j];
        }
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) shape_error("matmul_nt", a, b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  std::vector<double> out(m * n, 0.0);
  const double* A = a.value().data();
  const double* B = b.value().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += A[i * k + p] * B[j * k + p];
      out[i * n + j] = s;
    }
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  return finish(make_node(m, n, std::move(out)), {&a, &b}, [pa, pb, m, k, n](Node& self) {
    const double* G = self.grad.data();
    const double* A = pa->value.data();
    const double* B = pb->value.data();
    if (pa->requires_grad) {
      auto& ga = pa->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double g = G[i * n + j];
          for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += g * B[j * k + p];
        }
    }
    if (pb->requires_grad) {
      auto& gb = pb->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double g = G[i * n + j];
          for (std::size_t p = 0; p < k; ++p) gb[j * k + p] += g * A[i * k + p];
        }
    }
  });
}

namespace {

template <typename Fwd, typename Bwd>
Tensor binary_same_shape(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error(name, a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.value()[i], b.value()[i]);
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  return finish(make_node(a.rows(), a.cols(), std::move(out)), {&a, &b}, [pa, pb, bwd](Node& self) {
    const std::size_t n = self.size();
    double* ga = pa->requires_grad ? pa->ensure_grad().data() : nullptr;
    double* gb = pb->requires_grad ? pb->ensure_grad().data() : nullptr;
    for (std::size_t i = 0; i < n; ++i) {
      auto [da, db] = bwd(pa->value[i], pb->value[i], self.grad[i]);
      if (ga) ga[i] += da;
      if (gb) gb[i] += db;
    }
  });
}

template <typename Fwd, typename Bwd>
Tensor unary(const Tensor& a, Fwd fwd, Bwd bwd) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.value()[i]);
  Node* pa = a.node().get();
  return finish(make_node(a.rows(), a.cols(), std::move(out)), {&a}, [pa, bwd](Node& self) {
    auto& ga = pa->ensure_grad();
    for (std::size_t i = 0; i < self.size(); ++i)
      ga[i] += self.grad[i] * bwd(pa->value[i], self.value[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double g) { return std::pair{g, g}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double g) { return std::pair{g, -g}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double g) { return std::pair{g * y, g * x}; });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) shape_error("add_row", a, row);
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(a.value());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += row.value()[j];
  Node* pa = a.node().get();
  Node* pr = row.node().get();
  return finish(make_node(m, n, std::move(out)), {&a, &row}, [pa, pr, m, n](Node& self) {
    if (pa->requires_grad) {
      auto& ga = pa->ensure_grad();
      for (std::size_t i = 0; i < m * n; ++i) ga[i] += self.grad[i];
    }
    if (pr->requires_grad) {
      auto& gr = pr->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gr[j] += self.grad[i * n + j];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor add_constant(const Tensor& a, const std::vector<double>& c) {
  if (c.size() != a.size()) throw std::invalid_argument("add_constant: size mismatch");
  std::vector<double> out(a.value());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += c[i];
  Node* pa = a.node().get();
  return finish(make_node(a.rows(), a.cols(), std::move(out)), {&a}, [pa](Node& self) {
    auto& ga = pa->ensure_grad();
    for (std::size_t i = 0; i < self.size(); ++i) ga[i] += self.grad[i];
  });
}

Tensor silu(const Tensor& a) {
  return unary(
      a, [](double x) { return x * sigmoid(x); },
      [](double x, double) {
        const double s = sigmoid(x);
        return s * (1.0 + x * (1.0 - s));
      });
}

Tensor softplus(const Tensor& a) {
  return unary(a, softplus_scalar, [](double x, double) { return sigmoid(x); });
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor softmax_rows(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* x = a.value().data() + i * n;
    double* y = out.data() + i * n;
    const double mx = *std::max_element(x, x + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < n; ++j) y[j] /= z;
  }
  Node* pa = a.node().get();
  return finish(make_node(m, n, std::move(out)), {&a}, [pa, m, n](Node& self) {
    auto& ga = pa->ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      const double* y = self.value.data() + i * n;
      const double* g = self.grad.data() + i * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor log_softmax_rows(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* x = a.value().data() + i * n;
    double* y = out.data() + i * n;
    const double mx = *std::max_element(x, x + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(x[j] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) y[j] = x[j] - lz;
  }
  Node* pa = a.node().get();
  return finish(make_node(m, n, std::move(out)), {&a}, [pa, m, n](Node& self) {
    auto& ga = pa->ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      const double* y = self.value.data() + i * n;
      const double* g = self.grad.data() + i * n;
      double gs = 0.0;
      for (std::size_t j = 0; j < n; ++j) gs += g[j];
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j] - std::exp(y[j]) * gs;
    }
  });
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t m = x.rows(), n = x.cols();
  if (gamma.size() != n || beta.size() != n) shape_error("layer_norm_rows", x, gamma);
  std::vector<double> out(m * n), xhat(m * n), inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* r = x.value().data() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += r[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (r[j] - mean) * (r[j] - mean);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (r[j] - mean) * inv_std[i];
      out[i * n + j] = xhat[i * n + j] * gamma.value()[j] + beta.value()[j];
    }
  }
  Node* px = x.node().get();
  Node* pg = gamma.node().get();
  Node* pb = beta.node().get();
  return finish(make_node(m, n, std::move(out)), {&x, &gamma, &beta},
                [px, pg, pb, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                  const double* G = self.grad.data();
                  if (pg->requires_grad) {
                    auto& gg = pg->ensure_grad();
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) gg[j] += G[i * n + j] * xhat[i * n + j];
                  }
                  if (pb->requires_grad) {
                    auto& gb = pb->ensure_grad();
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) gb[j] += G[i * n + j];
                  }
                  if (px->requires_grad) {
                    auto& gx = px->ensure_grad();
                    const double inv_n = 1.0 / static_cast<double>(n);
                    for (std::size_t i = 0; i < m; ++i) {
                      double s1 = 0.0, s2 = 0.0;
                      for (std::size_t j = 0; j < n; ++j) {
                        const double dxh = G[i * n + j] * pg->value[j];
                        s1 += dxh;
                        s2 += dxh * xhat[i * n + j];
                      }
                      for (std::size_t j = 0; j < n; ++j) {
                        const double dxh = G[i * n + j] * pg->value[j];
                        gx[i * n + j] +=
                            inv_std[i] * (dxh - inv_n * s1 - xhat[i * n + j] * inv_n * s2);
                      }
                    }
                  }
                });
}

Tensor transpose(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.value()[i * n + j];
  Node* pa = a.node().get();
  return finish(make_node(n, m, std::move(out)), {&a}, [pa, m, n](Node& self) {
    auto& ga = pa->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += self.grad[j * m + i];
  });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  const std::size_t m = a.rows(), n = a.cols();
  if (begin + count > n) throw std::invalid_argument("slice_cols: out of range");
  std::vector<double> out(m * count);
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(a.value().data() + i * n + begin, count, out.data() + i * count);
  Node* pa = a.node().get();
  return finish(make_node(m, count, std::move(out)), {&a}, [pa, m, n, begin, count](Node& self) {
    auto& ga = pa->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < count; ++j) ga[i * n + begin + j] += self.grad[i * count + j];
  });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
  const std::size_t n = a.cols();
  if (begin + count > a.rows()) throw std::invalid_argument("slice_rows: out of range");
  std::vector<double> out(a.value().begin() + static_cast<std::ptrdiff_t>(begin * n),
                          a.value().begin() + static_cast<std::ptrdiff_t>((begin + count) * n));
  Node* pa = a.node().get();
  return finish(make_node(count, n, std::move(out)), {&a}, [pa, n, begin](Node& self) {
    auto& ga = pa->ensure_grad();
    for (std::size_t i = 0; i < self.size(); ++i) ga[begin * n + i] += self.grad[i];
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t m = parts.front().rows();
  std::size_t n = 0;
  for (const auto& p : parts) {
    if (p.rows() != m) shape_error("concat_cols", parts.front(), p);
    n += p.cols();
  }
  std::vector<double> out(m * n);
  std::size_t off = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(p.value().data() + i * p.cols(), p.cols(), out.data() + i * n + off);
    off += p.cols();
  }
  std::vector<Node*> raw;
  for (const auto& p : parts) raw.push_back(p.node().get());
  return finish_many(make_node(m, n, std::move(out)), parts, [raw, m, n](Node& self) {
    std::size_t off = 0;
    for (Node* p : raw) {
      if (p->requires_grad) {
        auto& g = p->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < p->cols; ++j) g[i * p->cols + j] += self.grad[i * n + off + j];
      }
      off += p->cols;
    }
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const std::size_t n = parts.front().cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    if (p.cols() != n) shape_error("concat_rows", parts.front(), p);
    m += p.rows();
  }
  std::vector<double> out;
  out.reserve(m * n);
  for (const auto& p : parts) out.insert(out.end(), p.value().begin(), p.value().end());
  std::vector<Node*> raw;
  for (const auto& p : parts) raw.push_back(p.node().get());
  return finish_many(make_node(m, n, std::move(out)), parts, [raw](Node& self) {
    std::size_t off = 0;
    for (Node* p : raw) {
      if (p->requires_grad) {
        auto& g = p->ensure_grad();
        for (std::size_t i = 0; i < p->size(); ++i) g[i] += self.grad[off + i];
      }
      off += p->size();
    }
  });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows) {
  const std::size_t n = table.cols();
  std::vector<double> out(rows.size() * n);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= table.rows()) throw std::invalid_argument("gather_rows: index out of range");
    std::copy_n(table.value().data() + rows[i] * n, n, out.data() + i * n);
  }
  Node* pt = table.node().get();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return finish(make_node(rows.size(), n, std::move(out)), {&table},
                [pt, n, idx = std::move(idx)](Node& self) {
                  auto& g = pt->ensure_grad();
                  for (std::size_t i = 0; i < idx.size(); ++i)
                    for (std::size_t j = 0; j < n; ++j) g[idx[i] * n + j] += self.grad[i * n + j];
                });
}

Tensor mean_rows(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  if (m == 0) throw std::invalid_argument("mean_rows: no rows");
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += a.value()[i * n + j];
  for (double& v : out) v /= static_cast<double>(m);
  Node* pa = a.node().get();
  return finish(make_node(1, n, std::move(out)), {&a}, [pa, m, n](Node& self) {
    auto& ga = pa->ensure_grad();
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += self.grad[j] * inv;
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.value()) s += v;
  Node* pa = a.node().get();
  return finish(make_node(1, 1, {s}), {&a}, [pa](Node& self) {
    auto& ga = pa->ensure_grad();
    for (double& g : ga) g += self.grad[0];
  });
}

Tensor nll_rows(const Tensor& log_probs, std::span<const std::size_t> targets) {
  const std::size_t n = log_probs.cols();
  if (targets.size() != log_probs.rows())
    throw std::invalid_argument("nll_rows: one target per row required");
  double s = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] >= n) throw std::invalid_argument("nll_rows: target out of range");
    s -= log_probs.value()[i * n + targets[i]];
  }
  Node* pa = log_probs.node().get();
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  return finish(make_node(1, 1, {s}), {&log_probs}, [pa, n, tgt = std::move(tgt)](Node& self) {
    auto& ga = pa->ensure_grad();
    for (std::size_t i = 0; i < tgt.size(); ++i) ga[i * n + tgt[i]] -= self.grad[0];
  });
}

Tensor maximum(const Tensor& a, double floor) {
  return unary(
      a, [floor](double x) { return std::max(x, floor); },
      [floor](double x, double) { return x >= floor ? 1.0 : 0.0; });
}

Tensor dropout(const Tensor& a, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return a;
  if (p >= 1.0) throw std::invalid_argument("dropout: p must be < 1");
  std::bernoulli_distribution keep(1.0 - p);
  std::vector<double> mask(a.size());
  const double s = 1.0 / (1.0 - p);
  for (double& m : mask) m = keep(rng) ? s : 0.0;
  return mul(a, Tensor::constant(a.rows(), a.cols(), std::move(mask)));
}

double kl_term(double mu_q, double sigma_q, double mu_p, double sigma_p) {
  const double d = mu_q - mu_p;
  return std::log(sigma_p / sigma_q) + (sigma_q * sigma_q + d * d) / (2.0 * sigma_p * sigma_p) -
         0.5;
}

Tensor kl_diag_gaussian_terms(const Tensor& mu_q, const Tensor& sigma_q, const Tensor& mu_p,
                              const Tensor& sigma_p) {
  const std::size_t d = mu_q.size();
  if (sigma_q.size() != d || mu_p.size() != d || sigma_p.size() != d)
    throw std::invalid_argument("kl_diag_gaussian: dimension mismatch");
  std::vector<double> out(d);
  for (std::size_t k = 0; k < d; ++k)
    out[k] = kl_term(mu_q.value()[k], sigma_q.value()[k], mu_p.value()[k], sigma_p.value()[k]);
  Node* mq = mu_q.node().get();
  Node* sq = sigma_q.node().get();
  Node* mp = mu_p.node().get();
  Node* sp = sigma_p.node().get();
  return finish(make_node(1, d, std::move(out)), {&mu_q, &sigma_q, &mu_p, &sigma_p},
                [mq, sq, mp, sp, d](Node& self) {
                  for (std::size_t k = 0; k < d; ++k) {
                    const double g = self.grad[k];
                    const double diff = mq->value[k] - mp->value[k];
                    const double s_q = sq->value[k];
                    const double s_p = sp->value[k];
                    const double inv_p2 = 1.0 / (s_p * s_p);
                    if (mq->requires_grad) mq->ensure_grad()[k] += g * diff * inv_p2;
                    if (mp->requires_grad) mp->ensure_grad()[k] -= g * diff * inv_p2;
                    if (sq->requires_grad) sq->ensure_grad()[k] += g * (-1.0 / s_q + s_q * inv_p2);
                    if (sp->requires_grad)
                      sp->ensure_grad()[k] +=
                          g * (1.0 / s_p - (s_q * s_q + diff * diff) * inv_p2 / s_p);
                  }
                });
}

}  // namespace flowplan::ag
