#include "fskws/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fskws/error.hpp"

namespace fskws::ad {

namespace {

template <typename Real>
bool tracks(const Tensor<Real>& t) {
  return t && t.requires_grad();
}

template <typename Real>
bool needs_graph(std::initializer_list<const Tensor<Real>*> inputs) {
  if (!grad_enabled()) return false;
  for (const auto* t : inputs) {
    if (tracks(*t)) return true;
  }
  return false;
}

/// Marks `out` as an interior node fed by `inputs` with the given backward.
template <typename Real, typename MakeBackward>
void attach(Tensor<Real>& out, std::initializer_list<const Tensor<Real>*> inputs, MakeBackward&& make) {
  Node<Real>* self = out.node().get();
  self->requires_grad = true;
  for (const auto* t : inputs) {
    if (*t) self->inputs.push_back(t->node());
  }
  self->backward_fn = make(self);
}

void require(bool ok, Errc code, const std::string& what) {
  if (!ok) throw Error(code, what);
}

template <typename Real>
void require_rank(const Tensor<Real>& t, std::size_t rank, const char* what) {
  require(t && t.rank() == rank, Errc::ShapeMismatch,
          std::string(what) + " must have rank " + std::to_string(rank) +
              (t ? ", got " + to_string(t.shape()) : std::string(", got empty tensor")));
}

// Output positions t in [lo, hi) read input index t*stride + offset inside [0, length).
std::pair<std::size_t, std::size_t> valid_range(std::ptrdiff_t offset, std::size_t stride,
                                                std::size_t length, std::size_t out_len) {
  const auto s = static_cast<std::ptrdiff_t>(stride);
  std::ptrdiff_t lo = 0;
  if (offset < 0) lo = (-offset + s - 1) / s;
  const std::ptrdiff_t last = static_cast<std::ptrdiff_t>(length) - 1 - offset;
  std::ptrdiff_t hi = last < 0 ? 0 : last / s + 1;
  hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(out_len));
  if (hi < lo) hi = lo;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace

std::size_t conv_output_length(std::size_t length, std::size_t kernel, std::size_t stride,
                               std::size_t dilation, std::size_t padding) {
  if (kernel < 1 || stride < 1 || dilation < 1) {
    throw Error(Errc::InvalidHyperparameter, "kernel, stride and dilation must be >= 1");
  }
  const std::size_t span = dilation * (kernel - 1) + 1;
  if (length + 2 * padding < span) {
    throw Error(Errc::InvalidHyperparameter,
                "padded length " + std::to_string(length + 2 * padding) +
                    " shorter than dilated kernel span " + std::to_string(span));
  }
  return (length + 2 * padding - span) / stride + 1;
}

// ---------------------------------------------------------------- conv1d

template <typename Real>
Tensor<Real> conv1d(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& bias,
                    const Conv1dOptions& opt) {
  require_rank(x, 3, "conv1d input");
  require_rank(w, 3, "conv1d weight");
  const std::size_t B = x.dim(0), C = x.dim(1), L = x.dim(2);
  const std::size_t O = w.dim(0), K = w.dim(2);
  require(w.dim(1) == C, Errc::ShapeMismatch,
          "conv1d weight expects " + std::to_string(w.dim(1)) + " input channels, got " + std::to_string(C));
  if (bias) require(bias.rank() == 1 && bias.dim(0) == O, Errc::ShapeMismatch, "conv1d bias shape");
  const std::size_t stride = opt.stride, dil = opt.dilation;
  const std::size_t Lo = conv_output_length(L, K, stride, dil, opt.padding);
  const auto pad = static_cast<std::ptrdiff_t>(opt.padding);

  std::vector<Real> out(B * O * Lo, Real(0));
  const auto xv = x.data();
  const auto wv = w.data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t o = 0; o < O; ++o) {
      Real* orow = out.data() + (b * O + o) * Lo;
      for (std::size_t c = 0; c < C; ++c) {
        const Real* xrow = xv.data() + (b * C + c) * L;
        const Real* wrow = wv.data() + (o * C + c) * K;
        for (std::size_t j = 0; j < K; ++j) {
          const Real wj = wrow[j];
          const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(j * dil) - pad;
          const auto [lo, hi] = valid_range(off, stride, L, Lo);
          if (stride == 1) {
            const Real* src = xrow + off;
            for (std::size_t t = lo; t < hi; ++t) orow[t] += wj * src[t];
          } else {
            for (std::size_t t = lo; t < hi; ++t) orow[t] += wj * xrow[static_cast<std::ptrdiff_t>(t * stride) + off];
          }
        }
      }
      if (bias) {
        const Real bo = bias.data()[o];
        for (std::size_t t = 0; t < Lo; ++t) orow[t] += bo;
      }
    }
  }

  auto result = Tensor<Real>::from_data({B, O, Lo}, std::move(out));
  if (needs_graph({&x, &w, &bias})) {
    attach(result, {&x, &w, &bias}, [&](Node<Real>* self) {
      return [self, xn = x.node().get(), wn = w.node().get(), bn = bias ? bias.node().get() : nullptr,
              B, C, L, O, K, Lo, stride, dil, pad]() {
        const auto& g = self->grad;
        Real* gx = xn->requires_grad ? xn->ensure_grad().data() : nullptr;
        Real* gw = wn->requires_grad ? wn->ensure_grad().data() : nullptr;
        Real* gb = bn && bn->requires_grad ? bn->ensure_grad().data() : nullptr;
        const Real* xv = xn->value.data();
        const Real* wv = wn->value.data();
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t o = 0; o < O; ++o) {
            const Real* grow = g.data() + (b * O + o) * Lo;
            if (gb) {
              Real acc = 0;
              for (std::size_t t = 0; t < Lo; ++t) acc += grow[t];
              gb[o] += acc;
            }
            for (std::size_t c = 0; c < C; ++c) {
              const Real* xrow = xv + (b * C + c) * L;
              Real* gxrow = gx ? gx + (b * C + c) * L : nullptr;
              for (std::size_t j = 0; j < K; ++j) {
                const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(j * dil) - pad;
                const auto [lo, hi] = valid_range(off, stride, L, Lo);
                if (gw) {
                  Real acc = 0;
                  for (std::size_t t = lo; t < hi; ++t) acc += grow[t] * xrow[static_cast<std::ptrdiff_t>(t * stride) + off];
                  gw[(o * C + c) * K + j] += acc;
                }
                if (gxrow) {
                  const Real wj = wv[(o * C + c) * K + j];
                  for (std::size_t t = lo; t < hi; ++t) gxrow[static_cast<std::ptrdiff_t>(t * stride) + off] += wj * grow[t];
                }
              }
            }
          }
        }
      };
    });
  }
  return result;
}

// ---------------------------------------------------------------- conv2d

namespace {

struct Conv2dGeometry {
  std::size_t C, H, W, KH, KW, Ho, Wo, sh, sw;
  std::ptrdiff_t ph, pw;
  std::size_t rows() const { return C * KH * KW; }
  std::size_t cols() const { return Ho * Wo; }
};

// col[(c*KH + i)*KW + j][oh*Wo + ow] = x[c][oh*sh + i - ph][ow*sw + j - pw], zero outside.
template <typename Real>
void im2col(const Real* x, const Conv2dGeometry& g, Real* col) {
  std::fill(col, col + g.rows() * g.cols(), Real(0));
  for (std::size_t c = 0; c < g.C; ++c) {
    for (std::size_t i = 0; i < g.KH; ++i) {
      const std::ptrdiff_t offh = static_cast<std::ptrdiff_t>(i) - g.ph;
      const auto [hlo, hhi] = valid_range(offh, g.sh, g.H, g.Ho);
      for (std::size_t j = 0; j < g.KW; ++j) {
        const std::ptrdiff_t offw = static_cast<std::ptrdiff_t>(j) - g.pw;
        const auto [wlo, whi] = valid_range(offw, g.sw, g.W, g.Wo);
        Real* crow = col + ((c * g.KH + i) * g.KW + j) * g.cols();
        for (std::size_t oh = hlo; oh < hhi; ++oh) {
          const Real* xrow =
              x + (c * g.H + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(oh * g.sh) + offh)) * g.W;
          for (std::size_t ow = wlo; ow < whi; ++ow)
            crow[oh * g.Wo + ow] = xrow[static_cast<std::ptrdiff_t>(ow * g.sw) + offw];
        }
      }
    }
  }
}

template <typename Real>
void col2im_add(const Real* col, const Conv2dGeometry& g, Real* x) {
  for (std::size_t c = 0; c < g.C; ++c) {
    for (std::size_t i = 0; i < g.KH; ++i) {
      const std::ptrdiff_t offh = static_cast<std::ptrdiff_t>(i) - g.ph;
      const auto [hlo, hhi] = valid_range(offh, g.sh, g.H, g.Ho);
      for (std::size_t j = 0; j < g.KW; ++j) {
        const std::ptrdiff_t offw = static_cast<std::ptrdiff_t>(j) - g.pw;
        const auto [wlo, whi] = valid_range(offw, g.sw, g.W, g.Wo);
        const Real* crow = col + ((c * g.KH + i) * g.KW + j) * g.cols();
        for (std::size_t oh = hlo; oh < hhi; ++oh) {
          Real* xrow = x + (c * g.H + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(oh * g.sh) + offh)) * g.W;
          for (std::size_t ow = wlo; ow < whi; ++ow)
            xrow[static_cast<std::ptrdiff_t>(ow * g.sw) + offw] += crow[oh * g.Wo + ow];
        }
      }
    }
  }
}

// Fixed eight-lane summation order, so the result does not depend on
// compiler vectorisation choices.
template <typename Real>
Real lane_dot(const Real* a, const Real* b, std::size_t n) {
  Real lanes[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t l = 0; l < 8; ++l) lanes[l] += a[i + l] * b[i + l];
  }
  for (std::size_t l = 0; i < n; ++i, ++l) lanes[l] += a[i] * b[i];
  Real total = 0;
  for (Real v : lanes) total += v;
  return total;
}

}  // namespace

template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& bias,
                    const Conv2dOptions& opt) {
  require_rank(x, 4, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  require(w.dim(1) == C, Errc::ShapeMismatch,
          "conv2d weight expects " + std::to_string(w.dim(1)) + " input channels, got " + std::to_string(C));
  if (bias) require(bias.rank() == 1 && bias.dim(0) == O, Errc::ShapeMismatch, "conv2d bias shape");
  const Conv2dGeometry geo{C,
                           H,
                           W,
                           KH,
                           KW,
                           conv_output_length(H, KH, opt.stride_h, 1, opt.pad_h),
                           conv_output_length(W, KW, opt.stride_w, 1, opt.pad_w),
                           opt.stride_h,
                           opt.stride_w,
                           static_cast<std::ptrdiff_t>(opt.pad_h),
                           static_cast<std::ptrdiff_t>(opt.pad_w)};
  const std::size_t R = geo.rows(), P = geo.cols();

  std::vector<Real> out(B * O * P, Real(0));
  std::vector<Real> col(R * P);
  const auto xv = x.data();
  const auto wv = w.data();
  for (std::size_t b = 0; b < B; ++b) {
    im2col(xv.data() + b * C * H * W, geo, col.data());
    for (std::size_t o = 0; o < O; ++o) {
      Real* oplane = out.data() + (b * O + o) * P;
      const Real* wrow = wv.data() + o * R;
      for (std::size_t r = 0; r < R; ++r) {
        const Real wr = wrow[r];
        const Real* crow = col.data() + r * P;
        for (std::size_t p = 0; p < P; ++p) oplane[p] += wr * crow[p];
      }
      if (bias) {
        const Real bo = bias.data()[o];
        for (std::size_t p = 0; p < P; ++p) oplane[p] += bo;
      }
    }
  }

  auto result = Tensor<Real>::from_data({B, O, geo.Ho, geo.Wo}, std::move(out));
  if (needs_graph({&x, &w, &bias})) {
    attach(result, {&x, &w, &bias}, [&](Node<Real>* self) {
      return [self, xn = x.node().get(), wn = w.node().get(), bn = bias ? bias.node().get() : nullptr, B, O,
              geo]() {
        const std::size_t R = geo.rows(), P = geo.cols(), in_size = geo.C * geo.H * geo.W;
        const auto& g = self->grad;
        Real* gx = xn->requires_grad ? xn->ensure_grad().data() : nullptr;
        Real* gw = wn->requires_grad ? wn->ensure_grad().data() : nullptr;
        Real* gb = bn && bn->requires_grad ? bn->ensure_grad().data() : nullptr;
        const Real* wv = wn->value.data();
        std::vector<Real> col(gw ? R * P : 0), gcol(gx ? R * P : 0);
        for (std::size_t b = 0; b < B; ++b) {
          if (gw) im2col(xn->value.data() + b * in_size, geo, col.data());
          if (gx) std::fill(gcol.begin(), gcol.end(), Real(0));
          for (std::size_t o = 0; o < O; ++o) {
            const Real* gplane = g.data() + (b * O + o) * P;
            if (gb) {
              Real acc = 0;
              for (std::size_t p = 0; p < P; ++p) acc += gplane[p];
              gb[o] += acc;
            }
            for (std::size_t r = 0; r < R; ++r) {
              if (gw) gw[o * R + r] += lane_dot(gplane, col.data() + r * P, P);
              if (gx) {
                const Real wr = wv[o * R + r];
                Real* gcrow = gcol.data() + r * P;
                for (std::size_t p = 0; p < P; ++p) gcrow[p] += wr * gplane[p];
              }
            }
          }
          if (gx) col2im_add(gcol.data(), geo, gx + b * in_size);
        }
      };
    });
  }
  return result;
}

// ------------------------------------------------------------- batch_norm

template <typename Real>
Tensor<Real> batch_norm(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta,
                        BatchNormState<Real>& state, Mode mode, const BatchNormOptions& opt) {
  require(x && x.rank() >= 2, Errc::ShapeMismatch, "batch_norm input must be [B, C, ...]");
  const std::size_t B = x.dim(0), C = x.dim(1);
  const std::size_t S = x.numel() / std::max<std::size_t>(1, B * C);
  require(gamma.numel() == C && beta.numel() == C, Errc::ShapeMismatch,
          "batch_norm affine parameters must have " + std::to_string(C) + " entries");
  require(state.running_mean.size() == C && state.running_var.size() == C, Errc::ShapeMismatch,
          "batch_norm running statistics size");
  const std::size_t n = B * S;
  const auto xv = x.data();
  const auto gv = gamma.data();
  const auto bv = beta.data();

  std::vector<Real> mean(C), inv_std(C);
  if (mode == Mode::Train) {
    require(n > 0, Errc::ShapeMismatch, "batch_norm over empty batch");
    for (std::size_t c = 0; c < C; ++c) {
      double acc = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const Real* p = xv.data() + (b * C + c) * S;
        for (std::size_t s = 0; s < S; ++s) acc += static_cast<double>(p[s]);
      }
      const double m = acc / static_cast<double>(n);
      double sq = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const Real* p = xv.data() + (b * C + c) * S;
        for (std::size_t s = 0; s < S; ++s) {
          const double d = static_cast<double>(p[s]) - m;
          sq += d * d;
        }
      }
      const double var = sq / static_cast<double>(n);
      mean[c] = static_cast<Real>(m);
      inv_std[c] = static_cast<Real>(1.0 / std::sqrt(var + opt.eps));
      const double unbiased = n > 1 ? sq / static_cast<double>(n - 1) : var;
      state.running_mean[c] = static_cast<Real>((1.0 - opt.momentum) * state.running_mean[c] + opt.momentum * m);
      state.running_var[c] = static_cast<Real>((1.0 - opt.momentum) * state.running_var[c] + opt.momentum * unbiased);
    }
    ++state.tracked_batches;
  } else {
    if (state.tracked_batches == 0) {
      throw Error(Errc::EvalWithoutStats, "batch_norm in eval mode before any training batch");
    }
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = state.running_mean[c];
      inv_std[c] = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(state.running_var[c]) + opt.eps));
    }
  }

  std::vector<Real> xhat(x.numel());
  std::vector<Real> out(x.numel());
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (b * C + c) * S;
      for (std::size_t s = 0; s < S; ++s) {
        const Real h = (xv[base + s] - mean[c]) * inv_std[c];
        xhat[base + s] = h;
        out[base + s] = gv[c] * h + bv[c];
      }
    }
  }

  auto result = Tensor<Real>::from_data(x.shape(), std::move(out));
  if (needs_graph({&x, &gamma, &beta})) {
    attach(result, {&x, &gamma, &beta}, [&](Node<Real>* self) {
      return [self, xn = x.node().get(), gn = gamma.node().get(), bn = beta.node().get(),
              xhat = std::move(xhat), inv_std = std::move(inv_std), B, C, S, n, mode]() {
        const auto& g = self->grad;
        const Real* gam = gn->value.data();
        std::vector<double> sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t base = (b * C + c) * S;
            for (std::size_t s = 0; s < S; ++s) {
              sum_dy[c] += static_cast<double>(g[base + s]);
              sum_dy_xhat[c] += static_cast<double>(g[base + s]) * static_cast<double>(xhat[base + s]);
            }
          }
        }
        if (gn->requires_grad) {
          auto& gg = gn->ensure_grad();
          for (std::size_t c = 0; c < C; ++c) gg[c] += static_cast<Real>(sum_dy_xhat[c]);
        }
        if (bn->requires_grad) {
          auto& gb = bn->ensure_grad();
          for (std::size_t c = 0; c < C; ++c) gb[c] += static_cast<Real>(sum_dy[c]);
        }
        if (!xn->requires_grad) return;
        auto& gx = xn->ensure_grad();
        const double dn = static_cast<double>(n);
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t base = (b * C + c) * S;
            const double scale = static_cast<double>(gam[c]) * static_cast<double>(inv_std[c]);
            if (mode == Mode::Train) {
              // dx = gamma*inv_std/n * (n*dy - sum(dy) - xhat*sum(dy*xhat))
              for (std::size_t s = 0; s < S; ++s) {
                const double v = dn * static_cast<double>(g[base + s]) - sum_dy[c] -
                                 static_cast<double>(xhat[base + s]) * sum_dy_xhat[c];
                gx[base + s] += static_cast<Real>(scale * v / dn);
              }
            } else {
              for (std::size_t s = 0; s < S; ++s) gx[base + s] += static_cast<Real>(scale * static_cast<double>(g[base + s]));
            }
          }
        }
      };
    });
  }
  return result;
}

// ------------------------------------------------------------ elementwise

template <typename Real>
Tensor<Real> relu(const Tensor<Real>& x) {
  std::vector<Real> out(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] < Real(0) ? Real(0) : xv[i];  // NaN passes through
  auto result = Tensor<Real>::from_data(x.shape(), std::move(out));
  if (needs_graph({&x})) {
    attach(result, {&x}, [&](Node<Real>* self) {
      return [self, xn = x.node().get()]() {
        auto& gx = xn->ensure_grad();
        for (std::size_t i = 0; i < gx.size(); ++i) {
          if (xn->value[i] > Real(0)) gx[i] += self->grad[i];
        }
      };
    });
  }
  return result;
}

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  require(a && b && a.shape() == b.shape(), Errc::ShapeMismatch,
          "add of " + (a ? to_string(a.shape()) : "[]") + " and " + (b ? to_string(b.shape()) : "[]"));
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto result = Tensor<Real>::from_data(a.shape(), std::move(out));
  if (needs_graph({&a, &b})) {
    attach(result, {&a, &b}, [&](Node<Real>* self) {
      return [self, an = a.node().get(), bn = b.node().get()]() {
        // an == bn when a tensor is added to itself; both paths accumulate.
        for (Node<Real>* in : {an, bn}) {
          if (!in->requires_grad) continue;
          auto& g = in->ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i];
        }
      };
    });
  }
  return result;
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  require(a && b && a.shape() == b.shape(), Errc::ShapeMismatch, "mul needs identical shapes");
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto result = Tensor<Real>::from_data(a.shape(), std::move(out));
  if (needs_graph({&a, &b})) {
    attach(result, {&a, &b}, [&](Node<Real>* self) {
      return [self, an = a.node().get(), bn = b.node().get()]() {
        if (an->requires_grad) {
          auto& g = an->ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i] * bn->value[i];
        }
        if (bn->requires_grad) {
          auto& g = bn->ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i] * an->value[i];
        }
      };
    });
  }
  return result;
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& x, Real c) {
  std::vector<Real> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * c;
  auto result = Tensor<Real>::from_data(x.shape(), std::move(out));
  if (needs_graph({&x})) {
    attach(result, {&x}, [&](Node<Real>* self) {
      return [self, xn = x.node().get(), c]() {
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i] * c;
      };
    });
  }
  return result;
}

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& x) {
  double acc = 0.0;
  for (Real v : x.data()) acc += static_cast<double>(v);
  auto result = Tensor<Real>::from_data({1}, {static_cast<Real>(acc)});
  if (needs_graph({&x})) {
    attach(result, {&x}, [&](Node<Real>* self) {
      return [self, xn = x.node().get()]() {
        auto& g = xn->ensure_grad();
        for (auto& v : g) v += self->grad[0];
      };
    });
  }
  return result;
}

// ------------------------------------------------------------ reshaping

template <typename Real>
Tensor<Real> global_avg_pool(const Tensor<Real>& x) {
  require(x && x.rank() >= 3, Errc::ShapeMismatch, "global_avg_pool input must be [B, C, ...]");
  const std::size_t B = x.dim(0), C = x.dim(1);
  const std::size_t S = x.numel() / (B * C);
  std::vector<Real> out(B * C);
  for (std::size_t i = 0; i < B * C; ++i) {
    double acc = 0.0;
    for (std::size_t s = 0; s < S; ++s) acc += static_cast<double>(x.data()[i * S + s]);
    out[i] = static_cast<Real>(acc / static_cast<double>(S));
  }
  auto result = Tensor<Real>::from_data({B, C}, std::move(out));
  if (needs_graph({&x})) {
    attach(result, {&x}, [&](Node<Real>* self) {
      return [self, xn = x.node().get(), S]() {
        auto& g = xn->ensure_grad();
        const Real inv = Real(1) / static_cast<Real>(S);
        for (std::size_t i = 0; i < self->grad.size(); ++i) {
          const Real d = self->grad[i] * inv;
          for (std::size_t s = 0; s < S; ++s) g[i * S + s] += d;
        }
      };
    });
  }
  return result;
}

template <typename Real>
Tensor<Real> max_pool2d(const Tensor<Real>& x, const Pool2dOptions& opt) {
  require_rank(x, 4, "max_pool2d input");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Ho = conv_output_length(H, opt.kernel_h, opt.stride_h, 1, 0);
  const std::size_t Wo = conv_output_length(W, opt.kernel_w, opt.stride_w, 1, 0);
  std::vector<Real> out(B * C * Ho * Wo);
  std::vector<std::size_t> argmax(out.size());
  const auto xv = x.data();
  for (std::size_t p = 0; p < B * C; ++p) {
    const std::size_t in_base = p * H * W;
    for (std::size_t oh = 0; oh < Ho; ++oh) {
      for (std::size_t ow = 0; ow < Wo; ++ow) {
        std::size_t best = in_base + (oh * opt.stride_h) * W + ow * opt.stride_w;
        for (std::size_t i = 0; i < opt.kernel_h; ++i) {
          for (std::size_t j = 0; j < opt.kernel_w; ++j) {
            const std::size_t idx = in_base + (oh * opt.stride_h + i) * W + ow * opt.stride_w + j;
            if (xv[idx] > xv[best]) best = idx;
          }
        }
        const std::size_t o = (p * Ho + oh) * Wo + ow;
        out[o] = xv[best];
        argmax[o] = best;
      }
    }
  }
  auto result = Tensor<Real>::from_data({B, C, Ho, Wo}, std::move(out));
  if (needs_graph({&x})) {
    attach(result, {&x}, [&](Node<Real>* self) {
      return [self, xn = x.node().get(), argmax = std::move(argmax)]() {
        auto& g = xn->ensure_grad();
        for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += self->grad[o];
      };
    });
  }
  return result;
}

template <typename Real>
Tensor<Real> flatten(const Tensor<Real>& x) {
  require(x && x.rank() >= 1, Errc::ShapeMismatch, "flatten of empty tensor");
  const std::size_t B = x.dim(0);
  const std::size_t rest = B ? x.numel() / B : 0;
  auto result = Tensor<Real>::from_data({B, rest}, std::vector<Real>(x.data().begin(), x.data().end()));
  if (needs_graph({&x})) {
    attach(result, {&x}, [&](Node<Real>* self) {
      return [self, xn = x.node().get()]() {
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i];
      };
    });
  }
  return result;
}

template <typename Real>
Tensor<Real> linear(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& bias) {
  require_rank(x, 2, "linear input");
  require_rank(w, 2, "linear weight");
  const std::size_t B = x.dim(0), In = x.dim(1), Out = w.dim(0);
  require(w.dim(1) == In, Errc::ShapeMismatch,
          "linear weight expects " + std::to_string(w.dim(1)) + " features, got " + std::to_string(In));
  if (bias) require(bias.numel() == Out, Errc::ShapeMismatch, "linear bias shape");
  std::vector<Real> out(B * Out);
  for (std::size_t b = 0; b < B; ++b) {
    const Real* xr = x.data().data() + b * In;
    for (std::size_t o = 0; o < Out; ++o) {
      const Real* wr = w.data().data() + o * In;
      Real acc = 0;
      for (std::size_t i = 0; i < In; ++i) acc += wr[i] * xr[i];
      out[b * Out + o] = acc + (bias ? bias.data()[o] : Real(0));
    }
  }
  auto result = Tensor<Real>::from_data({B, Out}, std::move(out));
  if (needs_graph({&x, &w, &bias})) {
    attach(result, {&x, &w, &bias}, [&](Node<Real>* self) {
      return [self, xn = x.node().get(), wn = w.node().get(), bn = bias ? bias.node().get() : nullptr, B, In,
              Out]() {
        const auto& g = self->grad;
        Real* gx = xn->requires_grad ? xn->ensure_grad().data() : nullptr;
        Real* gw = wn->requires_grad ? wn->ensure_grad().data() : nullptr;
        Real* gb = bn && bn->requires_grad ? bn->ensure_grad().data() : nullptr;
        for (std::size_t b = 0; b < B; ++b) {
          const Real* xr = xn->value.data() + b * In;
          for (std::size_t o = 0; o < Out; ++o) {
            const Real go = g[b * Out + o];
            if (gb) gb[o] += go;
            const Real* wr = wn->value.data() + o * In;
            if (gw) {
              Real* gwr = gw + o * In;
              for (std::size_t i = 0; i < In; ++i) gwr[i] += go * xr[i];
            }
            if (gx) {
              Real* gxr = gx + b * In;
              for (std::size_t i = 0; i < In; ++i) gxr[i] += go * wr[i];
            }
          }
        }
      };
    });
  }
  return result;
}

template <typename Real>
Tensor<Real> slice_rows(const Tensor<Real>& x, std::size_t begin, std::size_t end) {
  require(x && x.rank() >= 1 && begin <= end && end <= x.dim(0), Errc::ShapeMismatch,
          "slice_rows range out of bounds");
  const std::size_t row = x.numel() / std::max<std::size_t>(1, x.dim(0));
  Shape shape = x.shape();
  shape[0] = end - begin;
  auto first = x.data().begin() + static_cast<std::ptrdiff_t>(begin * row);
  auto result = Tensor<Real>::from_data(shape, std::vector<Real>(first, first + static_cast<std::ptrdiff_t>((end - begin) * row)));
  if (needs_graph({&x})) {
    attach(result, {&x}, [&](Node<Real>* self) {
      return [self, xn = x.node().get(), offset = begin * row]() {
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < self->grad.size(); ++i) g[offset + i] += self->grad[i];
      };
    });
  }
  return result;
}

// ------------------------------------------------------ prototype maths

template <typename Real>
Tensor<Real> class_means(const Tensor<Real>& x, std::span<const int> labels, std::size_t classes) {
  require_rank(x, 2, "class_means input");
  const std::size_t M = x.dim(0), D = x.dim(1);
  require(labels.size() == M, Errc::ShapeMismatch, "class_means needs one label per row");
  std::vector<std::size_t> counts(classes, 0);
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= classes) {
      throw Error(Errc::LabelOutOfRange, "label " + std::to_string(l) + " outside [0, " + std::to_string(classes) + ")");
    }
    ++counts[static_cast<std::size_t>(l)];
  }
  for (std::size_t c = 0; c < classes; ++c) {
    if (counts[c] == 0) throw Error(Errc::EmptyCategory, "category " + std::to_string(c) + " has no support rows");
  }
  std::vector<double> acc(classes * D, 0.0);
  for (std::size_t m = 0; m < M; ++m) {
    const auto c = static_cast<std::size_t>(labels[m]);
    for (std::size_t d = 0; d < D; ++d) acc[c * D + d] += static_cast<double>(x.data()[m * D + d]);
  }
  std::vector<Real> out(classes * D);
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t d = 0; d < D; ++d) out[c * D + d] = static_cast<Real>(acc[c * D + d] / static_cast<double>(counts[c]));
  }
  auto result = Tensor<Real>::from_data({classes, D}, std::move(out));
  if (needs_graph({&x})) {
    attach(result, {&x}, [&](Node<Real>* self) {
      return [self, xn = x.node().get(), lab = std::vector<int>(labels.begin(), labels.end()), counts, D]() {
        auto& g = xn->ensure_grad();
        for (std::size_t m = 0; m < lab.size(); ++m) {
          const auto c = static_cast<std::size_t>(lab[m]);
          const Real inv = Real(1) / static_cast<Real>(counts[c]);
          for (std::size_t d = 0; d < D; ++d) g[m * D + d] += self->grad[c * D + d] * inv;
        }
      };
    });
  }
  return result;
}

template <typename Real>
Tensor<Real> squared_euclidean(const Tensor<Real>& a, const Tensor<Real>& b) {
  require(a && b && a.rank() == 2 && b.rank() == 2, Errc::ShapeMismatch, "squared_euclidean needs matrices");
  const std::size_t M = a.dim(0), C = b.dim(0), D = a.dim(1);
  if (b.dim(1) != D) {
    throw Error(Errc::DimensionMismatch,
                "embedding widths differ: " + std::to_string(D) + " vs " + std::to_string(b.dim(1)));
  }
  std::vector<Real> out(M * C);
  for (std::size_t m = 0; m < M; ++m) {
    for (std::size_t c = 0; c < C; ++c) {
      Real acc = 0;
      for (std::size_t d = 0; d < D; ++d) {
        const Real diff = a.data()[m * D + d] - b.data()[c * D + d];
        acc += diff * diff;
      }
      out[m * C + c] = acc;
    }
  }
  auto result = Tensor<Real>::from_data({M, C}, std::move(out));
  if (needs_graph({&a, &b})) {
    attach(result, {&a, &b}, [&](Node<Real>* self) {
      return [self, an = a.node().get(), bn = b.node().get(), M, C, D]() {
        Real* ga = an->requires_grad ? an->ensure_grad().data() : nullptr;
        Real* gb = bn->requires_grad ? bn->ensure_grad().data() : nullptr;
        for (std::size_t m = 0; m < M; ++m) {
          for (std::size_t c = 0; c < C; ++c) {
            const Real g2 = Real(2) * self->grad[m * C + c];
            for (std::size_t d = 0; d < D; ++d) {
              const Real diff = an->value[m * D + d] - bn->value[c * D + d];
              if (ga) ga[m * D + d] += g2 * diff;
              if (gb) gb[c * D + d] -= g2 * diff;
            }
          }
        }
      };
    });
  }
  return result;
}

template <typename Real>
Tensor<Real> log_softmax_rows(const Tensor<Real>& x) {
  require_rank(x, 2, "log_softmax_rows input");
  const std::size_t M = x.dim(0), C = x.dim(1);
  std::vector<Real> out(M * C);
  for (std::size_t m = 0; m < M; ++m) {
    const Real* row = x.data().data() + m * C;
    const double mx = static_cast<double>(*std::max_element(row, row + C));
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += std::exp(static_cast<double>(row[c]) - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < C; ++c) out[m * C + c] = static_cast<Real>(static_cast<double>(row[c]) - lse);
  }
  auto result = Tensor<Real>::from_data({M, C}, std::move(out));
  if (needs_graph({&x})) {
    attach(result, {&x}, [&](Node<Real>* self) {
      return [self, xn = x.node().get(), M, C]() {
        auto& g = xn->ensure_grad();
        for (std::size_t m = 0; m < M; ++m) {
          double gs = 0.0;
          for (std::size_t c = 0; c < C; ++c) gs += static_cast<double>(self->grad[m * C + c]);
          for (std::size_t c = 0; c < C; ++c) {
            const double p = std::exp(static_cast<double>(self->value[m * C + c]));
            g[m * C + c] += static_cast<Real>(static_cast<double>(self->grad[m * C + c]) - p * gs);
          }
        }
      };
    });
  }
  return result;
}

template <typename Real>
Tensor<Real> nll_loss(const Tensor<Real>& log_probs, std::span<const int> labels) {
  require_rank(log_probs, 2, "nll_loss input");
  const std::size_t M = log_probs.dim(0), C = log_probs.dim(1);
  require(labels.size() == M && M > 0, Errc::ShapeMismatch, "nll_loss needs one label per row");
  double acc = 0.0;
  for (std::size_t m = 0; m < M; ++m) {
    if (labels[m] < 0 || static_cast<std::size_t>(labels[m]) >= C) {
      throw Error(Errc::LabelOutOfRange, "label " + std::to_string(labels[m]) + " outside [0, " + std::to_string(C) + ")");
    }
    acc -= static_cast<double>(log_probs.data()[m * C + static_cast<std::size_t>(labels[m])]);
  }
  auto result = Tensor<Real>::from_data({1}, {static_cast<Real>(acc / static_cast<double>(M))});
  if (needs_graph({&log_probs})) {
    attach(result, {&log_probs}, [&](Node<Real>* self) {
      return [self, xn = log_probs.node().get(), lab = std::vector<int>(labels.begin(), labels.end()), M, C]() {
        auto& g = xn->ensure_grad();
        const Real d = -self->grad[0] / static_cast<Real>(M);
        for (std::size_t m = 0; m < M; ++m) g[m * C + static_cast<std::size_t>(lab[m])] += d;
      };
    });
  }
  return result;
}

#define FSKWS_INSTANTIATE(R)                                                                               \
  template Tensor<R> conv1d(const Tensor<R>&, const Tensor<R>&, const Tensor<R>&, const Conv1dOptions&);  \
  template Tensor<R> conv2d(const Tensor<R>&, const Tensor<R>&, const Tensor<R>&, const Conv2dOptions&);  \
  template Tensor<R> batch_norm(const Tensor<R>&, const Tensor<R>&, const Tensor<R>&, BatchNormState<R>&, \
                                Mode, const BatchNormOptions&);                                            \
  template Tensor<R> relu(const Tensor<R>&);                                                               \
  template Tensor<R> global_avg_pool(const Tensor<R>&);                                                    \
  template Tensor<R> max_pool2d(const Tensor<R>&, const Pool2dOptions&);                                   \
  template Tensor<R> linear(const Tensor<R>&, const Tensor<R>&, const Tensor<R>&);                        \
  template Tensor<R> flatten(const Tensor<R>&);                                                            \
  template Tensor<R> add(const Tensor<R>&, const Tensor<R>&);                                              \
  template Tensor<R> mul(const Tensor<R>&, const Tensor<R>&);                                              \
  template Tensor<R> scale(const Tensor<R>&, R);                                                           \
  template Tensor<R> sum(const Tensor<R>&);                                                                \
  template Tensor<R> slice_rows(const Tensor<R>&, std::size_t, std::size_t);                               \
  template Tensor<R> class_means(const Tensor<R>&, std::span<const int>, std::size_t);                     \
  template Tensor<R> squared_euclidean(const Tensor<R>&, const Tensor<R>&);                                \
  template Tensor<R> log_softmax_rows(const Tensor<R>&);                                                   \
  template Tensor<R> nll_loss(const Tensor<R>&, std::span<const int>);

FSKWS_INSTANTIATE(float)
FSKWS_INSTANTIATE(double)

#undef FSKWS_INSTANTIATE

}  // namespace fskws::ad
