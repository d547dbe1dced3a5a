#include "fskws/optim.hpp"

#include <cmath>

#include "fskws/error.hpp"

namespace fskws::ad {

template <typename Real>
Parameter<Real>& ParameterSet<Real>::add(std::string name, Tensor<Real> tensor) {
  if (find(name)) throw Error(Errc::InvalidHyperparameter, "duplicate parameter name " + name);
  params_.emplace_back(std::move(name), std::move(tensor));
  return params_.back();
}

template <typename Real>
Parameter<Real>* ParameterSet<Real>::find(std::string_view name) {
  for (auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

template <typename Real>
const Parameter<Real>* ParameterSet<Real>::find(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

template <typename Real>
std::size_t ParameterSet<Real>::element_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

template <typename Real>
void ParameterSet<Real>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template <typename Real>
void adam_step(ParameterSet<Real>& params, const AdamOptions& opt) {
  for (auto& p : params) {
    if (!p.tensor.has_grad()) throw Error(Errc::MissingGrad, "parameter " + p.name + " has no gradient");
  }
  for (auto& p : params) {
    ++p.adam_step;
    const double t = static_cast<double>(p.adam_step);
    const double c1 = 1.0 - std::pow(opt.beta1, t);
    const double c2 = 1.0 - std::pow(opt.beta2, t);
    auto value = p.tensor.mutable_data();
    auto grad = p.tensor.mutable_grad();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = static_cast<double>(grad[i]);
      const double m = opt.beta1 * static_cast<double>(p.adam_m[i]) + (1.0 - opt.beta1) * g;
      const double v = opt.beta2 * static_cast<double>(p.adam_v[i]) + (1.0 - opt.beta2) * g * g;
      p.adam_m[i] = static_cast<Real>(m);
      p.adam_v[i] = static_cast<Real>(v);
      const double update = opt.lr * (m / c1) / (std::sqrt(v / c2) + opt.eps);
      value[i] = static_cast<Real>(static_cast<double>(value[i]) - update);
      grad[i] = Real(0);
    }
  }
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template void adam_step<float>(ParameterSet<float>&, const AdamOptions&);
template void adam_step<double>(ParameterSet<double>&, const AdamOptions&);

}  // namespace fskws::ad
