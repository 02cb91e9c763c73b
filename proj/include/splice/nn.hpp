#pragma once

#include <random>
#include <string>
#include <vector>

#include "splice/ops.hpp"
#include "splice/serialize.hpp"

namespace splice::nn {

using ad::Var;

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}
  Scalar normal(Scalar stddev = 1) {
    return std::normal_distribution<float>(0, stddev)(eng_);
  }
  Scalar uniform(Scalar lo, Scalar hi) {
    return std::uniform_real_distribution<float>(lo, hi)(eng_);
  }
  std::uint64_t integer(std::uint64_t n) {
    return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(eng_);
  }
  bool bernoulli(Scalar p) {
    return std::bernoulli_distribution(p)(eng_);
  }
  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

Tensor randn(Shape shape, Rng& rng, Scalar stddev = 1);
Tensor kaiming_conv_init(Shape shape, Rng& rng, Scalar leaky_slope = 0.2f);
Tensor kaiming_linear_init(Index out, Index in, Rng& rng);

struct Param {
  std::string name;
  Var var;
};

/// Flat named-parameter registry shared by all trainable models.
class ParamStore {
 public:
  Var add(const std::string& name, Tensor init, bool trainable = true);
  const std::vector<Param>& params() const { return params_; }
  Index scalar_count() const;
  void zero_grads();
  std::uint64_t checksum() const;
  TensorArchive to_archive(const std::string& prefix = "") const;
  void load_archive(const TensorArchive& a, const std::string& prefix = "");

 private:
  std::vector<Param> params_;
};

// ----------------------------------------------------------------- layers

struct Linear {
  Var w, b;  // w [out,in]
  Linear() = default;
  Linear(ParamStore& ps, const std::string& name, Index in, Index out,
         Rng& rng, Scalar bias_init = 0);
  Var forward(const Var& x) const {  // x [R,in] -> [R,out]
    return ad::add_row_bias(ad::matmul(x, w, false, true), b);
  }
};

struct Conv2d {
  Var w, b;
  Index stride = 1, pad = 0;
  Conv2d() = default;
  Conv2d(ParamStore& ps, const std::string& name, Index in, Index out,
         Index kernel, Index stride, Index pad, Rng& rng);
  Var forward(const Var& x) const { return ad::conv2d(x, w, b, stride, pad); }
};

struct BatchNorm2d {
  Var gamma, beta;
  Tensor running_mean, running_var;
  Scalar momentum = 0.1f;
  Scalar eps = 1e-5f;
  BatchNorm2d() = default;
  BatchNorm2d(ParamStore& ps, const std::string& name, Index channels,
              Rng& rng);
  Var forward(const Var& x, bool training);
  // Running stats travel with checkpoints but are not optimized.
  void save_stats(TensorArchive& a, const std::string& prefix) const;
  void load_stats(const TensorArchive& a, const std::string& prefix);
};

/// StyleGAN2-style modulated convolution: the style vector scales input
/// channels, the result is demodulated by the RMS of the scaled weights.
struct ModulatedConv2d {
  Var w, b;
  Linear affine;  // maps the mapping-network output to per-channel styles
  Index stride = 1, pad = 0;
  Scalar demod_eps = 1e-8f;
  ModulatedConv2d() = default;
  ModulatedConv2d(ParamStore& ps, const std::string& name, Index in, Index out,
                  Index kernel, Index pad, Index style_dim, Rng& rng);
  Var forward(const Var& x, const Var& mapped_style) const;
};

// -------------------------------------------------------------- optimizer

class Adam {
 public:
  Adam(Scalar lr, Scalar beta1, Scalar beta2, Scalar eps = 1e-8f)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(ParamStore& ps);
  long iterations() const { return t_; }
  void save(TensorArchive& a, const std::string& prefix) const;
  void load(const TensorArchive& a, const std::string& prefix,
            const ParamStore& ps);

 private:
  Scalar lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace splice::nn
