#pragma once

#include <array>
#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "fskws/audio.hpp"

namespace fskws::features {

struct FeatureConfig {
  double frame_len_ms = 40.0;
  double stride_ms = 20.0;
  std::size_t n_mfcc = 40;
  std::size_t n_mel_filters = 40;
  std::size_t fft_size = 1024;
  double preemphasis = 0.97;
  double mel_low_hz = 20.0;
  double mel_high_hz = 8000.0;
  double log_floor = 1e-10;

  std::size_t frame_len() const;
  std::size_t stride() const;
  std::size_t num_frames(std::size_t clip_samples) const;
  std::size_t num_bins() const { return fft_size / 2 + 1; }
  /// Throws InvalidHyperparameter when the invariants do not hold.
  void validate() const;
};

inline constexpr std::size_t kFrames = 49;
inline constexpr std::size_t kCoeffs = 40;

enum class Layout {
  FrameMajor,    // row t holds the coefficients of frame t
  TemporalConv,  // row c holds coefficient c over time: channels x length (x width 1)
};

/// T x F MFCC matrix. Values are kept in double so the front end can be
/// compared tightly against a reference; networks cast on batch assembly.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  FeatureMatrix(std::size_t frames, std::size_t coeffs, std::vector<double> frame_major_values);

  std::size_t frames() const { return frames_; }
  std::size_t coeffs() const { return coeffs_; }
  Layout layout() const { return layout_; }

  /// Value of coefficient `coeff` in frame `frame`, independent of layout.
  double at(std::size_t frame, std::size_t coeff) const;

  /// Raw storage in the current layout's row-major order.
  std::span<const double> values() const { return values_; }

  /// (rows, cols) of the raw storage: (frames, coeffs) or (coeffs, frames).
  std::pair<std::size_t, std::size_t> storage_shape() const;

  friend FeatureMatrix reshape_for_temporal_conv(const FeatureMatrix& m);
  friend FeatureMatrix reshape_to_frame_major(const FeatureMatrix& m);

  bool operator==(const FeatureMatrix&) const = default;

 private:
  std::size_t frames_ = 0;
  std::size_t coeffs_ = 0;
  Layout layout_ = Layout::FrameMajor;
  std::vector<double> values_;
};

/// Pre-emphasis over the whole clip followed by per-frame Hamming windows.
std::vector<std::vector<double>> frame_signal(const audio::AudioClip& clip,
                                              const FeatureConfig& cfg = {});

/// |X[k]|^2 for k in [0, fft_size/2] of the zero-padded frame.
std::vector<double> power_spectrum(std::span<const double> frame, const FeatureConfig& cfg = {});

/// Triangular filters with centres equally spaced in mel between
/// mel_low_hz and mel_high_hz. Weights are evaluated at the exact bin
/// frequencies, so neighbouring triangles meet at each other's apex.
class MelFilterbank {
 public:
  explicit MelFilterbank(const FeatureConfig& cfg = {});

  std::size_t size() const { return centers_hz_.size(); }
  double center_hz(std::size_t m) const { return centers_hz_[m]; }
  double lower_edge_hz(std::size_t m) const { return edges_hz_[m]; }
  double upper_edge_hz(std::size_t m) const { return edges_hz_[m + 2]; }
  /// Weight of filter m at FFT bin k.
  double weight(std::size_t m, std::size_t k) const { return weights_[m * num_bins_ + k]; }

  /// log(max(sum_k w[m,k] P[k], floor)) per filter.
  std::vector<double> apply(std::span<const double> spectrum) const;

 private:
  std::size_t num_bins_;
  double log_floor_;
  std::vector<double> edges_hz_;
  std::vector<double> centers_hz_;
  std::vector<double> weights_;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

std::vector<double> mel_filterbank(std::span<const double> spectrum, const FeatureConfig& cfg = {});

/// Orthonormal DCT-II.
std::vector<double> dct2(std::span<const double> x);
/// Inverse of dct2 (the orthonormal DCT-III).
std::vector<double> idct2(std::span<const double> c);

/// In-place radix-2 complex FFT; size must be a power of two.
void fft(std::span<std::complex<double>> data);

FeatureMatrix mfcc(const audio::AudioClip& clip, const FeatureConfig& cfg = {});

FeatureMatrix reshape_for_temporal_conv(const FeatureMatrix& m);
FeatureMatrix reshape_to_frame_major(const FeatureMatrix& m);

}  // namespace fskws::features
