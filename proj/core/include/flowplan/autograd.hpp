#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices of doubles. Every op records its parents and a backward closure
// when gradient recording is enabled and at least one input requires a
// gradient; the graph is released with the last Tensor referencing it.
namespace flowplan::ag {

struct Node {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::size_t size() const noexcept { return rows * cols; }
  std::vector<double>& ensure_grad();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor constant(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor zeros(std::size_t rows, std::size_t cols);
  static Tensor row(std::vector<double> values);  // 1 x n constant
  static Tensor scalar(double v);
  // Leaf whose gradient accumulates across backward passes.
  static Tensor parameter(std::size_t rows, std::size_t cols, std::vector<double> values);

  bool defined() const noexcept { return node_ != nullptr; }
  std::size_t rows() const { return node_->rows; }
  std::size_t cols() const { return node_->cols; }
  std::size_t size() const { return node_->size(); }
  bool requires_grad() const { return node_->requires_grad; }

  const std::vector<double>& value() const { return node_->value; }
  std::vector<double>& mutable_value() { return node_->value; }
  std::span<const double> grad() const;
  void zero_grad();

  double at(std::size_t r, std::size_t c) const { return node_->value[r * node_->cols + c]; }
  double item() const;

  const std::shared_ptr<Node>& node() const noexcept { return node_; }
  // Same values, no graph history.
  Tensor detach() const;

 private:
  std::shared_ptr<Node> node_;
};

// Thread-local switch; while disabled no graph is recorded.
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Seeds d(loss)/d(loss) = 1 and propagates to every reachable leaf.
void backward(const Tensor& loss);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a * b^T
Tensor add(const Tensor& a, const Tensor& b);
Tensor add_row(const Tensor& a, const Tensor& row);  // broadcast a 1 x n row over a's rows
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_constant(const Tensor& a, const std::vector<double>& c);  // c has a's shape
Tensor silu(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);
Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       double eps = 1e-5);
Tensor transpose(const Tensor& a);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows);
Tensor mean_rows(const Tensor& a);  // 1 x cols
Tensor sum(const Tensor& a);        // 1 x 1
// -sum_r log_probs[r, targets[r]]
Tensor nll_rows(const Tensor& log_probs, std::span<const std::size_t> targets);
// Elementwise max(a, floor); gradient flows only where a >= floor.
Tensor maximum(const Tensor& a, double floor);
// Inverted dropout; identity when p == 0.
Tensor dropout(const Tensor& a, double p, std::mt19937_64& rng);

// Per-dimension KL(N(mu_q, s_q^2) || N(mu_p, s_p^2)) as a 1 x d row.
Tensor kl_diag_gaussian_terms(const Tensor& mu_q, const Tensor& sigma_q, const Tensor& mu_p,
                              const Tensor& sigma_p);

// The closed-form term shared by the differentiable op and value-only callers.
double kl_term(double mu_q, double sigma_q, double mu_p, double sigma_p);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

}  // namespace flowplan::ag
