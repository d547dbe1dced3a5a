#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fskws/tensor.hpp"

namespace fskws::ad {

template <typename Real>
struct Parameter {
  std::string name;
  Tensor<Real> tensor;
  std::vector<Real> adam_m;
  std::vector<Real> adam_v;
  std::uint64_t adam_step = 0;

  Parameter(std::string n, Tensor<Real> t)
      : name(std::move(n)), tensor(std::move(t)), adam_m(tensor.numel(), Real(0)), adam_v(tensor.numel(), Real(0)) {
    tensor.set_requires_grad(true);
  }
};

/// Ordered parameters with unique names.
template <typename Real>
class ParameterSet {
 public:
  Parameter<Real>& add(std::string name, Tensor<Real> tensor);

  std::size_t size() const { return params_.size(); }
  Parameter<Real>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<Real>& operator[](std::size_t i) const { return params_[i]; }
  Parameter<Real>* find(std::string_view name);
  const Parameter<Real>* find(std::string_view name) const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t element_count() const;
  void zero_grad();

 private:
  std::vector<Parameter<Real>> params_;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update of every parameter, followed by zeroing the
/// gradients. Throws MissingGrad if a parameter never received a gradient.
template <typename Real>
void adam_step(ParameterSet<Real>& params, const AdamOptions& opt);

extern template class ParameterSet<float>;
extern template class ParameterSet<double>;
extern template void adam_step<float>(ParameterSet<float>&, const AdamOptions&);
extern template void adam_step<double>(ParameterSet<double>&, const AdamOptions&);

}  // namespace fskws::ad
