#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "flowplan/autograd.hpp"

namespace flowplan::nn {

enum class Init { zeros, ones, xavier, normal_small };

// Named, ordered collection of trainable leaves. Handles returned by create()
// share storage with the store, so optimizer updates are visible to modules.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    ag::Tensor tensor;
  };

  ag::Tensor create(const std::string& name, std::size_t rows, std::size_t cols, Init init,
                    std::mt19937_64& rng);

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  ag::Tensor get(const std::string& name) const;
  bool contains(const std::string& name) const;

  void zero_grad();
  std::size_t scalar_count() const;
  // Overwrites all values in place (entry order and shapes must match).
  void assign(const std::vector<std::vector<double>>& values);

 private:
  std::vector<Entry> entries_;
};

// Passed through forward computations; dropout is active only when train is set.
struct Context {
  bool train = false;
  std::mt19937_64* rng = nullptr;
  double dropout = 0.0;

  static Context eval() { return {}; }
};

struct Linear {
  ag::Tensor weight;  // in x out
  ag::Tensor bias;    // 1 x out

  Linear() = default;
  Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
         std::mt19937_64& rng, Init weight_init = Init::xavier);
  ag::Tensor operator()(const ag::Tensor& x) const;
  std::size_t in() const { return weight.rows(); }
  std::size_t out() const { return weight.cols(); }
};

struct LayerNorm {
  ag::Tensor gamma;
  ag::Tensor beta;

  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, std::size_t dim, std::mt19937_64& rng);
  ag::Tensor operator()(const ag::Tensor& x) const;
};

// Linear -> SiLU -> Linear -> SiLU trunk used by the latent and act heads.
struct Trunk {
  Linear first;
  Linear second;

  Trunk() = default;
  Trunk(ParamStore& store, const std::string& name, std::size_t in, std::size_t hidden,
        std::mt19937_64& rng);
  ag::Tensor operator()(const ag::Tensor& x) const;
};

}  // namespace flowplan::nn
