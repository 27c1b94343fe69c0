#include "flowplan/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace flowplan::nn {

ag::Tensor ParamStore::create(const std::string& name, std::size_t rows, std::size_t cols,
                              Init init, std::mt19937_64& rng) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  std::vector<double> values(rows * cols, 0.0);
  switch (init) {
    case Init::zeros:
      break;
    case Init::ones:
      std::fill(values.begin(), values.end(), 1.0);
      break;
    case Init::xavier: {
      const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (double& v : values) v = dist(rng);
      break;
    }
    case Init::normal_small: {
      std::normal_distribution<double> dist(0.0, 0.1);
      for (double& v : values) v = dist(rng);
      break;
    }
  }
  ag::Tensor t = ag::Tensor::parameter(rows, cols, std::move(values));
  entries_.push_back({name, t});
  return t;
}

ag::Tensor ParamStore::get(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.tensor;
  throw std::out_of_range("no parameter named '" + name + "'");
}

bool ParamStore::contains(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return true;
  return false;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

void ParamStore::assign(const std::vector<std::vector<double>>& values) {
  if (values.size() != entries_.size()) throw std::invalid_argument("assign: entry count mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto& dst = entries_[i].tensor.mutable_value();
    if (dst.size() != values[i].size())
      throw std::invalid_argument("assign: shape mismatch for '" + entries_[i].name + "'");
    dst = values[i];
  }
}

Linear::Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
               std::mt19937_64& rng, Init weight_init)
    : weight(store.create(name + ".weight", in, out, weight_init, rng)),
      bias(store.create(name + ".bias", 1, out, Init::zeros, rng)) {}

ag::Tensor Linear::operator()(const ag::Tensor& x) const {
  return ag::add_row(ag::matmul(x, weight), bias);
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, std::size_t dim,
                     std::mt19937_64& rng)
    : gamma(store.create(name + ".gamma", 1, dim, Init::ones, rng)),
      beta(store.create(name + ".beta", 1, dim, Init::zeros, rng)) {}

ag::Tensor LayerNorm::operator()(const ag::Tensor& x) const {
  return ag::layer_norm_rows(x, gamma, beta);
}

Trunk::Trunk(ParamStore& store, const std::string& name, std::size_t in, std::size_t hidden,
             std::mt19937_64& rng)
    : first(store, name + ".0", in, hidden, rng), second(store, name + ".1", hidden, hidden, rng) {}

ag::Tensor Trunk::operator()(const ag::Tensor& x) const {
  return ag::silu(second(ag::silu(first(x))));
}

}  // namespace flowplan::nn
