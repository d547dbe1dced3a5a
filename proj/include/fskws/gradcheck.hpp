#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "fskws/rng.hpp"
#include "fskws/tensor.hpp"

namespace fskws::ad {

template <typename Real>
struct NamedTensor {
  std::string name;
  Tensor<Real> tensor;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;  // max|analytic - numeric| / max(|analytic|_inf, |numeric|_inf)
  double max_abs_error = 0.0;
  std::size_t checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;

  double max_rel_error() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_error);
    return m;
  }
};

struct GradCheckOptions {
  double step = 1e-4;
  /// 0 checks every element; otherwise a seeded random subset per tensor.
  std::size_t max_elements_per_tensor = 0;
  std::uint64_t seed = 0;
};

/// Central-difference check of d(loss)/d(t) for every named tensor.
///
/// `loss_fn` must rebuild the graph on every call. The relative error of a
/// tensor is its worst absolute discrepancy scaled by the larger infinity
/// norm of the two gradient estimates over the checked elements.
template <typename Real>
GradCheckReport grad_check(const std::function<Tensor<Real>()>& loss_fn,
                           std::vector<NamedTensor<Real>> wrt, const GradCheckOptions& opt = {}) {
  for (auto& nt : wrt) {
    nt.tensor.set_requires_grad(true);
    nt.tensor.clear_grad();
  }
  backward(loss_fn());

  Rng rng(opt.seed, "grad-check");
  GradCheckReport report;
  for (auto& nt : wrt) {
    const std::size_t n = nt.tensor.numel();
    std::vector<Real> analytic = nt.tensor.has_grad() ? std::vector<Real>(nt.tensor.grad().begin(), nt.tensor.grad().end())
                                                      : std::vector<Real>(n, Real(0));
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (opt.max_elements_per_tensor != 0 && n > opt.max_elements_per_tensor) {
      rng.shuffle(std::span<std::size_t>(idx));
      idx.resize(opt.max_elements_per_tensor);
      std::sort(idx.begin(), idx.end());
    }
    GradCheckEntry entry{nt.name, 0.0, 0.0, idx.size()};
    double scale = 0.0;
    auto data = nt.tensor.mutable_data();
    for (std::size_t i : idx) {
      const Real saved = data[i];
      data[i] = static_cast<Real>(static_cast<double>(saved) + opt.step);
      const double plus = static_cast<double>(loss_fn().item());
      data[i] = static_cast<Real>(static_cast<double>(saved) - opt.step);
      const double minus = static_cast<double>(loss_fn().item());
      data[i] = saved;
      const double numeric = (plus - minus) / (2.0 * opt.step);
      const double a = static_cast<double>(analytic[i]);
      entry.max_abs_error = std::max(entry.max_abs_error, std::abs(a - numeric));
      scale = std::max({scale, std::abs(a), std::abs(numeric)});
    }
    entry.max_rel_error = scale > 0.0 ? entry.max_abs_error / scale : entry.max_abs_error;
    report.entries.push_back(entry);
  }
  return report;
}

}  // namespace fskws::ad
