#include "splice/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace splice::nn {

Tensor randn(Shape shape, Rng& rng, Scalar stddev) {
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.normal(stddev);
  return t;
}

Tensor kaiming_conv_init(Shape shape, Rng& rng, Scalar leaky_slope) {
  // shape [O,I,kh,kw]; gain for leaky_relu
  const Scalar fan_in =
      static_cast<Scalar>(shape[1] * shape[2] * shape[3]);
  const Scalar gain =
      std::sqrt(Scalar(2) / (Scalar(1) + leaky_slope * leaky_slope));
  return randn(std::move(shape), rng, gain / std::sqrt(fan_in));
}

Tensor kaiming_linear_init(Index out, Index in, Rng& rng) {
  return randn({out, in}, rng, Scalar(1) / std::sqrt(static_cast<Scalar>(in)));
}

Var ParamStore::add(const std::string& name, Tensor init, bool trainable) {
  for (const auto& p : params_)
    if (p.name == name)
      throw std::logic_error("duplicate parameter name: " + name);
  Var v = trainable ? ad::leaf(std::move(init)) : ad::constant(std::move(init));
  params_.push_back({name, v});
  return v;
}

Index ParamStore::scalar_count() const {
  Index n = 0;
  for (const auto& p : params_) n += p.var->value.size();
  return n;
}

void ParamStore::zero_grads() {
  for (const auto& p : params_) p.var->zero_grad();
}

std::uint64_t ParamStore::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& p : params_) {
    h = bytes_checksum(p.name.data(), p.name.size(), h);
    h = bytes_checksum(p.var->value.data(),
                       p.var->value.size() * sizeof(Scalar), h);
  }
  return h;
}

TensorArchive ParamStore::to_archive(const std::string& prefix) const {
  TensorArchive a;
  for (const auto& p : params_) a.put(prefix + p.name, p.var->value);
  return a;
}

void ParamStore::load_archive(const TensorArchive& a,
                              const std::string& prefix) {
  for (auto& p : params_) {
    const Tensor& t = a.get(prefix + p.name);
    if (!t.same_shape(p.var->value))
      throw std::runtime_error("parameter '" + p.name + "' shape mismatch: " +
                               t.shape_str() + " vs " +
                               p.var->value.shape_str());
    p.var->value = t;
  }
}

Linear::Linear(ParamStore& ps, const std::string& name, Index in, Index out,
               Rng& rng, Scalar bias_init) {
  w = ps.add(name + ".weight", kaiming_linear_init(out, in, rng));
  b = ps.add(name + ".bias", Tensor::full({out}, bias_init));
}

Conv2d::Conv2d(ParamStore& ps, const std::string& name, Index in, Index out,
               Index kernel, Index stride_, Index pad_, Rng& rng) {
  w = ps.add(name + ".weight",
             kaiming_conv_init({out, in, kernel, kernel}, rng));
  b = ps.add(name + ".bias", Tensor::zeros({out}));
  stride = stride_;
  pad = pad_;
}

BatchNorm2d::BatchNorm2d(ParamStore& ps, const std::string& name,
                         Index channels, Rng&) {
  gamma = ps.add(name + ".gamma", Tensor::full({channels}, 1));
  beta = ps.add(name + ".beta", Tensor::zeros({channels}));
  running_mean = Tensor::zeros({channels});
  running_var = Tensor::full({channels}, 1);
}

Var BatchNorm2d::forward(const Var& x, bool training) {
  if (training) {
    Tensor mu, var;
    Var y = ad::batch_norm2d(x, gamma, beta, eps, &mu, &var);
    running_mean.array() =
        (1 - momentum) * running_mean.array() + momentum * mu.array();
    running_var.array() =
        (1 - momentum) * running_var.array() + momentum * var.array();
    return y;
  }
  // Inference path: affine transform with the frozen running stats.
  const Index c = x->value.dim(0);
  Tensor s({c}), t({c});
  for (Index i = 0; i < c; ++i) {
    const Scalar is = Scalar(1) / std::sqrt(running_var[i] + eps);
    s[i] = is;
    t[i] = -running_mean[i] * is;
  }
  Var xhat = ad::add_channel_bias(ad::scale_channels(x, ad::constant(s)),
                                  ad::constant(t));
  return ad::add_channel_bias(ad::scale_channels(xhat, gamma), beta);
}

void BatchNorm2d::save_stats(TensorArchive& a,
                             const std::string& prefix) const {
  a.put(prefix + ".running_mean", running_mean);
  a.put(prefix + ".running_var", running_var);
}

void BatchNorm2d::load_stats(const TensorArchive& a,
                             const std::string& prefix) {
  running_mean = a.get(prefix + ".running_mean");
  running_var = a.get(prefix + ".running_var");
}

ModulatedConv2d::ModulatedConv2d(ParamStore& ps, const std::string& name,
                                 Index in, Index out, Index kernel, Index pad_,
                                 Index style_dim, Rng& rng) {
  w = ps.add(name + ".weight",
             kaiming_conv_init({out, in, kernel, kernel}, rng));
  b = ps.add(name + ".bias", Tensor::zeros({out}));
  // Style affine biased at 1 so an untrained mapping is near-neutral.
  affine = Linear(ps, name + ".affine", style_dim, in, rng, 1);
  pad = pad_;
}

Var ModulatedConv2d::forward(const Var& x, const Var& mapped_style) const {
  Var style_row = mapped_style->value.rank() == 1
                      ? ad::reshape(mapped_style, {1, mapped_style->value.size()})
                      : mapped_style;
  Var s = ad::reshape(affine.forward(style_row), {w->value.dim(1)});
  Var y = ad::conv2d(ad::scale_channels(x, s), w, nullptr, stride, pad);
  Var d = ad::demod_coeff(w, s, demod_eps);
  return ad::add_channel_bias(ad::scale_channels(y, d), b);
}

void Adam::step(ParamStore& ps) {
  const auto& params = ps.params();
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      m_[i] = Tensor::zeros(params[i].var->value.shape());
      v_[i] = Tensor::zeros(params[i].var->value.shape());
    }
  }
  ++t_;
  const Scalar bc1 = 1 - std::pow(beta1_, static_cast<Scalar>(t_));
  const Scalar bc2 = 1 - std::pow(beta2_, static_cast<Scalar>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& node = *params[i].var;
    if (!node.requires_grad || node.grad.empty()) continue;
    m_[i].array() = beta1_ * m_[i].array() + (1 - beta1_) * node.grad.array();
    v_[i].array() =
        beta2_ * v_[i].array() + (1 - beta2_) * node.grad.array().square();
    node.value.array() -=
        lr_ * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + eps_);
  }
  ps.zero_grads();
}

void Adam::save(TensorArchive& a, const std::string& prefix) const {
  a.put(prefix + "t", Tensor::scalar(static_cast<Scalar>(t_)));
  for (size_t i = 0; i < m_.size(); ++i) {
    a.put(prefix + "m." + std::to_string(i), m_[i]);
    a.put(prefix + "v." + std::to_string(i), v_[i]);
  }
}

void Adam::load(const TensorArchive& a, const std::string& prefix,
                const ParamStore& ps) {
  t_ = static_cast<long>(a.get(prefix + "t").item());
  const size_t n = ps.params().size();
  m_.resize(n);
  v_.resize(n);
  for (size_t i = 0; i < n; ++i) {
    m_[i] = a.get(prefix + "m." + std::to_string(i));
    v_[i] = a.get(prefix + "v." + std::to_string(i));
  }
}

}  // namespace splice::nn
