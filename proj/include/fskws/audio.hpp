#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fskws/rng.hpp"

namespace fskws::audio {

inline constexpr int kSampleRate = 16000;
inline constexpr std::size_t kClipSamples = 16000;

/// Mono 16 kHz waveform with every sample in [-1, 1].
///
/// Clips of any length can be represented (the dataset filter needs to see
/// short utterances); the feature pipeline insists on exactly kClipSamples.
class AudioClip {
 public:
  AudioClip() = default;
  explicit AudioClip(std::vector<float> samples,
                     std::optional<std::filesystem::path> source = std::nullopt);

  std::span<const float> samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }
  int sample_rate_hz() const { return kSampleRate; }
  bool is_one_second() const { return samples_.size() == kClipSamples; }
  const std::optional<std::filesystem::path>& source_path() const { return source_; }

 private:
  std::vector<float> samples_;
  std::optional<std::filesystem::path> source_;
};

/// Long recording that one-second snippets are cut from.
class BackgroundTrack {
 public:
  BackgroundTrack(std::vector<float> samples, std::filesystem::path source);

  std::span<const float> samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }
  const std::filesystem::path& source_path() const { return source_; }

 private:
  std::vector<float> samples_;
  std::filesystem::path source_;
};

struct WavInfo {
  int sample_rate_hz = 0;
  int channels = 0;
  int bits_per_sample = 0;
  std::size_t frames = 0;
};

/// Header-only probe; does not read or validate the sample payload beyond
/// its declared size.
WavInfo read_wav_info(const std::filesystem::path& path);

/// Reads 16-bit mono 16 kHz PCM. Integer value i maps to i / 32768.
AudioClip load_wav(const std::filesystem::path& path);
BackgroundTrack load_background(const std::filesystem::path& path);

/// Parses an in-memory RIFF/WAVE image (used by load_wav).
std::vector<std::int16_t> decode_wav(std::span<const std::uint8_t> bytes, WavInfo* info = nullptr);

std::vector<std::uint8_t> encode_wav(std::span<const std::int16_t> pcm);

/// Quantizes to 16-bit PCM (round to nearest, saturating) and writes a
/// canonical 44-byte-header WAV file.
void save_wav(const std::filesystem::path& path, std::span<const float> samples);

std::int16_t quantize(float sample);

AudioClip generate_tone(double freq_hz, double duration_s, double amplitude);

/// A contiguous kClipSamples window at a uniformly drawn offset.
AudioClip random_snippet(const BackgroundTrack& track, Rng& rng);

/// out[n] = clamp(clip[n] + volume * snippet[n], -1, 1)
AudioClip mix_background(const AudioClip& clip, const AudioClip& snippet, double volume);

}  // namespace fskws::audio
