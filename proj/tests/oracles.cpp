#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace oracle {

std::vector<double> naive_power_spectrum(std::span<const double> frame, std::size_t n_fft) {
  std::vector<double> cos_table(n_fft), sin_table(n_fft);
  for (std::size_t i = 0; i < n_fft; ++i) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n_fft);
    cos_table[i] = std::cos(a);
    sin_table[i] = std::sin(a);
  }
  std::vector<double> out(n_fft / 2 + 1);
  for (std::size_t k = 0; k < out.size(); ++k) {
    double re = 0.0, im = 0.0;
    for (std::size_t n = 0; n < frame.size(); ++n) {
      const std::size_t idx = (k * n) % n_fft;
      re += frame[n] * cos_table[idx];
      im -= frame[n] * sin_table[idx];
    }
    out[k] = re * re + im * im;
  }
  return out;
}

std::vector<double> naive_dct2(std::span<const double> x) {
  const double n = static_cast<double>(x.size());
  std::vector<double> out(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      acc += x[i] * std::cos(std::numbers::pi * static_cast<double>(k) * (2.0 * static_cast<double>(i) + 1.0) / (2.0 * n));
    }
    out[k] = acc * std::sqrt((k == 0 ? 1.0 : 2.0) / n);
  }
  return out;
}

std::vector<double> naive_mfcc(std::span<const float> clip) {
  constexpr std::size_t kLen = 640, kStep = 320, kFft = 1024, kMel = 40;
  constexpr double kRate = 16000.0;
  const std::size_t frames = (clip.size() - kLen) / kStep + 1;

  auto mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  auto inv_mel = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
  std::vector<double> pts(kMel + 2);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    pts[i] = inv_mel(mel(20.0) + (mel(8000.0) - mel(20.0)) * static_cast<double>(i) / (kMel + 1));
  }

  std::vector<double> out;
  out.reserve(frames * kMel);
  for (std::size_t t = 0; t < frames; ++t) {
    std::vector<double> frame(kLen);
    for (std::size_t n = 0; n < kLen; ++n) {
      const std::size_t i = t * kStep + n;
      const double prev = i == 0 ? 0.0 : static_cast<double>(clip[i - 1]);
      const double y = static_cast<double>(clip[i]) - 0.97 * prev;
      const double w = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / (kLen - 1));
      frame[n] = y * w;
    }
    const auto power = naive_power_spectrum(frame, kFft);
    std::vector<double> logmel(kMel);
    for (std::size_t m = 0; m < kMel; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < power.size(); ++k) {
        const double f = static_cast<double>(k) * kRate / kFft;
        double w = 0.0;
        if (f > pts[m] && f <= pts[m + 1]) w = (f - pts[m]) / (pts[m + 1] - pts[m]);
        if (f > pts[m + 1] && f < pts[m + 2]) w = (pts[m + 2] - f) / (pts[m + 2] - pts[m + 1]);
        e += w * power[k];
      }
      logmel[m] = std::log(std::max(e, 1e-10));
    }
    const auto c = naive_dct2(logmel);
    out.insert(out.end(), c.begin(), c.end());
  }
  return out;
}

std::vector<double> naive_conv1d(std::span<const double> x, std::size_t batch, std::size_t in_ch, std::size_t length,
                                 std::span<const double> w, std::size_t out_ch, std::size_t kernel,
                                 std::size_t stride, std::size_t dilation, std::size_t padding) {
  const std::size_t out_len = (length + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1;
  std::vector<double> out(batch * out_ch * out_len);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < out_ch; ++o) {
      for (std::size_t t = 0; t < out_len; ++t) {
        double acc = 0.0;
        for (std::size_t c = 0; c < in_ch; ++c) {
          for (std::size_t j = 0; j < kernel; ++j) {
            const auto pos = static_cast<long>(t * stride + j * dilation) - static_cast<long>(padding);
            if (pos < 0 || pos >= static_cast<long>(length)) continue;
            acc += w[(o * in_ch + c) * kernel + j] * x[(b * in_ch + c) * length + static_cast<std::size_t>(pos)];
          }
        }
        out[(b * out_ch + o) * out_len + t] = acc;
      }
    }
  }
  return out;
}

std::vector<double> naive_squared_distances(std::span<const double> a, std::size_t rows_a,
                                            std::span<const double> b, std::size_t rows_b, std::size_t dim) {
  std::vector<double> out(rows_a * rows_b);
  for (std::size_t i = 0; i < rows_a; ++i) {
    for (std::size_t j = 0; j < rows_b; ++j) {
      double acc = 0.0;
      for (std::size_t d = 0; d < dim; ++d) acc += (a[i * dim + d] - b[j * dim + d]) * (a[i * dim + d] - b[j * dim + d]);
      out[i * rows_b + j] = acc;
    }
  }
  return out;
}

std::vector<double> naive_class_means(std::span<const double> x, std::size_t dim, std::span<const int> labels,
                                      std::size_t classes) {
  std::vector<double> out(classes * dim, 0.0);
  for (std::size_t c = 0; c < classes; ++c) {
    std::size_t count = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] != static_cast<int>(c)) continue;
      ++count;
      for (std::size_t d = 0; d < dim; ++d) out[c * dim + d] += x[i * dim + d];
    }
    for (std::size_t d = 0; d < dim; ++d) out[c * dim + d] /= static_cast<double>(count);
  }
  return out;
}

}  // namespace oracle
