#include "fskws/features.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fskws/error.hpp"

namespace fskws::features {

namespace {

std::size_t ms_to_samples(double ms) {
  return static_cast<std::size_t>(std::llround(ms * audio::kSampleRate / 1000.0));
}

std::vector<double> hamming(std::size_t n) {
  std::vector<double> w(n);
  if (n == 1) {
    w[0] = 1.0;
    return w;
  }
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                  static_cast<double>(n - 1));
  }
  return w;
}

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

}  // namespace

std::size_t FeatureConfig::frame_len() const { return ms_to_samples(frame_len_ms); }
std::size_t FeatureConfig::stride() const { return ms_to_samples(stride_ms); }

std::size_t FeatureConfig::num_frames(std::size_t clip_samples) const {
  if (clip_samples < frame_len()) return 0;
  return (clip_samples - frame_len()) / stride() + 1;
}

void FeatureConfig::validate() const {
  if (frame_len() == 0 || stride() == 0) {
    throw Error(Errc::InvalidHyperparameter, "frame length and stride must be positive");
  }
  if (frame_len() > fft_size || !is_power_of_two(fft_size)) {
    throw Error(Errc::InvalidHyperparameter, "fft_size must be a power of two >= frame length");
  }
  if (n_mfcc > n_mel_filters || n_mel_filters == 0) {
    throw Error(Errc::InvalidHyperparameter, "need 0 < n_mfcc <= n_mel_filters");
  }
  if (!(mel_low_hz >= 0.0 && mel_low_hz < mel_high_hz && mel_high_hz <= audio::kSampleRate / 2.0)) {
    throw Error(Errc::InvalidHyperparameter, "mel range must lie within [0, Nyquist]");
  }
  if (!(log_floor > 0.0)) throw Error(Errc::InvalidHyperparameter, "log floor must be positive");
}

FeatureMatrix::FeatureMatrix(std::size_t frames, std::size_t coeffs, std::vector<double> values)
    : frames_(frames), coeffs_(coeffs), values_(std::move(values)) {
  if (values_.size() != frames_ * coeffs_) {
    throw Error(Errc::ShapeMismatch, "feature storage does not match frames x coeffs");
  }
}

double FeatureMatrix::at(std::size_t frame, std::size_t coeff) const {
  return layout_ == Layout::FrameMajor ? values_[frame * coeffs_ + coeff]
                                       : values_[coeff * frames_ + frame];
}

std::pair<std::size_t, std::size_t> FeatureMatrix::storage_shape() const {
  return layout_ == Layout::FrameMajor ? std::pair{frames_, coeffs_} : std::pair{coeffs_, frames_};
}

FeatureMatrix reshape_for_temporal_conv(const FeatureMatrix& m) {
  if (m.layout_ != Layout::FrameMajor) {
    throw Error(Errc::AlreadyReshaped, "matrix is already in temporal-conv layout");
  }
  FeatureMatrix out = m;
  out.layout_ = Layout::TemporalConv;
  for (std::size_t t = 0; t < m.frames_; ++t) {
    for (std::size_t c = 0; c < m.coeffs_; ++c) out.values_[c * m.frames_ + t] = m.values_[t * m.coeffs_ + c];
  }
  return out;
}

FeatureMatrix reshape_to_frame_major(const FeatureMatrix& m) {
  if (m.layout_ == Layout::FrameMajor) return m;
  FeatureMatrix out = m;
  out.layout_ = Layout::FrameMajor;
  for (std::size_t t = 0; t < m.frames_; ++t) {
    for (std::size_t c = 0; c < m.coeffs_; ++c) out.values_[t * m.coeffs_ + c] = m.values_[c * m.frames_ + t];
  }
  return out;
}

std::vector<std::vector<double>> frame_signal(const audio::AudioClip& clip, const FeatureConfig& cfg) {
  if (!clip.is_one_second()) {
    throw Error(Errc::WrongClipLength, "expected " + std::to_string(audio::kClipSamples) +
                                           " samples, got " + std::to_string(clip.size()));
  }
  const auto x = clip.samples();
  std::vector<double> emphasized(x.size());
  emphasized[0] = x[0];
  for (std::size_t n = 1; n < x.size(); ++n) {
    emphasized[n] = static_cast<double>(x[n]) - cfg.preemphasis * static_cast<double>(x[n - 1]);
  }
  const std::size_t len = cfg.frame_len();
  const std::size_t step = cfg.stride();
  const auto window = hamming(len);
  std::vector<std::vector<double>> frames(cfg.num_frames(x.size()), std::vector<double>(len));
  for (std::size_t t = 0; t < frames.size(); ++t) {
    for (std::size_t n = 0; n < len; ++n) frames[t][n] = emphasized[t * step + n] * window[n];
  }
  return frames;
}

void fft(std::span<std::complex<double>> a) {
  const std::size_t n = a.size();
  if (!is_power_of_two(n)) throw Error(Errc::InvalidHyperparameter, "FFT size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double angle = -2.0 * std::numbers::pi / static_cast<double>(len);
    const std::size_t half = len / 2;
    for (std::size_t k = 0; k < half; ++k) {
      // Per-twiddle evaluation keeps the error flat instead of compounding
      // through a running product.
      const std::complex<double> w(std::cos(angle * static_cast<double>(k)),
                                   std::sin(angle * static_cast<double>(k)));
      for (std::size_t i = 0; i < n; i += len) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + half] * w;
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }
}

std::vector<double> power_spectrum(std::span<const double> frame, const FeatureConfig& cfg) {
  if (frame.size() > cfg.fft_size) {
    throw Error(Errc::InvalidHyperparameter, "frame longer than FFT size");
  }
  std::vector<std::complex<double>> buf(cfg.fft_size);
  std::copy(frame.begin(), frame.end(), buf.begin());
  fft(buf);
  std::vector<double> power(cfg.num_bins());
  for (std::size_t k = 0; k < power.size(); ++k) power[k] = std::norm(buf[k]);
  return power;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

MelFilterbank::MelFilterbank(const FeatureConfig& cfg)
    : num_bins_(cfg.num_bins()), log_floor_(cfg.log_floor) {
  cfg.validate();
  const std::size_t m_count = cfg.n_mel_filters;
  const double lo = hz_to_mel(cfg.mel_low_hz);
  const double hi = hz_to_mel(cfg.mel_high_hz);
  edges_hz_.resize(m_count + 2);
  for (std::size_t i = 0; i < edges_hz_.size(); ++i) {
    edges_hz_[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(m_count + 1));
  }
  centers_hz_.assign(edges_hz_.begin() + 1, edges_hz_.end() - 1);
  weights_.assign(m_count * num_bins_, 0.0);
  const double bin_hz = static_cast<double>(audio::kSampleRate) / static_cast<double>(cfg.fft_size);
  for (std::size_t m = 0; m < m_count; ++m) {
    const double left = edges_hz_[m];
    const double center = edges_hz_[m + 1];
    const double right = edges_hz_[m + 2];
    for (std::size_t k = 0; k < num_bins_; ++k) {
      const double f = bin_hz * static_cast<double>(k);
      double w = 0.0;
      if (f > left && f <= center) {
        w = (f - left) / (center - left);
      } else if (f > center && f < right) {
        w = (right - f) / (right - center);
      }
      weights_[m * num_bins_ + k] = w;
    }
  }
}

std::vector<double> MelFilterbank::apply(std::span<const double> spectrum) const {
  if (spectrum.size() != num_bins_) throw Error(Errc::ShapeMismatch, "spectrum length mismatch");
  std::vector<double> out(size());
  for (std::size_t m = 0; m < out.size(); ++m) {
    const double* w = weights_.data() + m * num_bins_;
    double e = 0.0;
    for (std::size_t k = 0; k < num_bins_; ++k) e += w[k] * spectrum[k];
    out[m] = std::log(std::max(e, log_floor_));
  }
  return out;
}

std::vector<double> mel_filterbank(std::span<const double> spectrum, const FeatureConfig& cfg) {
  return MelFilterbank(cfg).apply(spectrum);
}

std::vector<double> dct2(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<double> c(n, 0.0);
  const double dn = static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      acc += x[i] * std::cos(std::numbers::pi * static_cast<double>(k) * (2.0 * static_cast<double>(i) + 1.0) /
                             (2.0 * dn));
    }
    c[k] = acc * (k == 0 ? std::sqrt(1.0 / dn) : std::sqrt(2.0 / dn));
  }
  return c;
}

std::vector<double> idct2(std::span<const double> c) {
  const std::size_t n = c.size();
  std::vector<double> x(n, 0.0);
  const double dn = static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double s = k == 0 ? std::sqrt(1.0 / dn) : std::sqrt(2.0 / dn);
      acc += s * c[k] *
             std::cos(std::numbers::pi * static_cast<double>(k) * (2.0 * static_cast<double>(i) + 1.0) / (2.0 * dn));
    }
    x[i] = acc;
  }
  return x;
}

namespace {

// Cached cosine table for the per-frame DCT; the pipeline evaluates it 49
// times per clip.
struct DctTable {
  std::size_t n_in = 0;
  std::size_t n_out = 0;
  std::vector<double> basis;

  DctTable(std::size_t in, std::size_t out) : n_in(in), n_out(out), basis(in * out) {
    const double dn = static_cast<double>(in);
    for (std::size_t k = 0; k < out; ++k) {
      const double s = k == 0 ? std::sqrt(1.0 / dn) : std::sqrt(2.0 / dn);
      for (std::size_t i = 0; i < in; ++i) {
        basis[k * in + i] =
            s * std::cos(std::numbers::pi * static_cast<double>(k) * (2.0 * static_cast<double>(i) + 1.0) / (2.0 * dn));
      }
    }
  }
};

}  // namespace

FeatureMatrix mfcc(const audio::AudioClip& clip, const FeatureConfig& cfg) {
  cfg.validate();
  const auto frames = frame_signal(clip, cfg);
  const MelFilterbank bank(cfg);
  const DctTable dct(cfg.n_mel_filters, cfg.n_mfcc);
  std::vector<double> values(frames.size() * cfg.n_mfcc);
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const auto log_mels = bank.apply(power_spectrum(frames[t], cfg));
    for (std::size_t k = 0; k < cfg.n_mfcc; ++k) {
      double acc = 0.0;
      for (std::size_t i = 0; i < cfg.n_mel_filters; ++i) acc += dct.basis[k * cfg.n_mel_filters + i] * log_mels[i];
      values[t * cfg.n_mfcc + k] = acc;
    }
  }
  return FeatureMatrix(frames.size(), cfg.n_mfcc, std::move(values));
}

}  // namespace fskws::features
