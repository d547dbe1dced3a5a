#include "fskws/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "fskws/error.hpp"

namespace fskws::audio {

namespace {

void check_amplitudes(std::span<const float> samples) {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const float s = samples[i];
    if (!(s >= -1.0f && s <= 1.0f)) {
      throw Error(Errc::AmplitudeOutOfRange,
                  "sample " + std::to_string(i) + " = " + std::to_string(s));
    }
  }
}

std::uint32_t read_u32(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | (static_cast<std::uint32_t>(b[at + 1]) << 8) |
         (static_cast<std::uint32_t>(b[at + 2]) << 16) |
         (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

std::uint16_t read_u16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

struct ParsedWav {
  WavInfo info;
  std::size_t data_offset = 0;
  std::size_t data_bytes = 0;
};

ParsedWav parse_header(std::span<const std::uint8_t> b, bool require_full_data) {
  if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) != 0 ||
      std::memcmp(b.data() + 8, "WAVE", 4) != 0) {
    throw Error(Errc::MalformedWav, "missing RIFF/WAVE signature");
  }
  ParsedWav parsed;
  bool have_fmt = false;
  bool have_data = false;
  std::size_t pos = 12;
  while (pos + 8 <= b.size()) {
    const std::uint32_t size = read_u32(b, pos + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(b.data() + pos, "fmt ", 4) == 0) {
      if (size < 16 || body + size > b.size()) {
        throw Error(Errc::MalformedWav, "truncated fmt chunk");
      }
      std::uint16_t format = read_u16(b, body);
      parsed.info.channels = read_u16(b, body + 2);
      parsed.info.sample_rate_hz = static_cast<int>(read_u32(b, body + 4));
      parsed.info.bits_per_sample = read_u16(b, body + 14);
      if (format == 0xFFFE && size >= 40) format = read_u16(b, body + 24);  // extensible
      if (format != 1) throw Error(Errc::UnsupportedFormat, "not integer PCM");
      have_fmt = true;
    } else if (std::memcmp(b.data() + pos, "data", 4) == 0) {
      if (!have_fmt) throw Error(Errc::MalformedWav, "data chunk precedes fmt chunk");
      if (require_full_data && body + size > b.size()) {
        throw Error(Errc::MalformedWav, "data chunk runs past end of file");
      }
      parsed.data_offset = body;
      parsed.data_bytes = size;
      have_data = true;
      break;
    }
    pos = body + size + (size & 1u);
  }
  if (!have_fmt) throw Error(Errc::MalformedWav, "missing fmt chunk");
  if (!have_data) throw Error(Errc::MalformedWav, "missing data chunk");
  const WavInfo& info = parsed.info;
  if (info.channels != 1 || info.bits_per_sample != 16 || info.sample_rate_hz != kSampleRate) {
    throw Error(Errc::UnsupportedFormat,
                std::to_string(info.channels) + " channel(s), " +
                    std::to_string(info.bits_per_sample) + " bit, " +
                    std::to_string(info.sample_rate_hz) + " Hz; need 16-bit mono 16000 Hz");
  }
  if (parsed.data_bytes % 2 != 0) throw Error(Errc::MalformedWav, "odd data chunk size");
  parsed.info.frames = parsed.data_bytes / 2;
  return parsed;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path, std::size_t limit = 0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes;
  if (limit == 0) {
    in.seekg(0, std::ios::end);
    bytes.resize(static_cast<std::size_t>(in.tellg()));
    in.seekg(0);
  } else {
    bytes.resize(limit);
  }
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  bytes.resize(static_cast<std::size_t>(in.gcount()));
  return bytes;
}

std::vector<float> to_real(std::span<const std::int16_t> pcm) {
  std::vector<float> out(pcm.size());
  for (std::size_t i = 0; i < pcm.size(); ++i) out[i] = static_cast<float>(pcm[i]) / 32768.0f;
  return out;
}

}  // namespace

AudioClip::AudioClip(std::vector<float> samples, std::optional<std::filesystem::path> source)
    : samples_(std::move(samples)), source_(std::move(source)) {
  check_amplitudes(samples_);
}

BackgroundTrack::BackgroundTrack(std::vector<float> samples, std::filesystem::path source)
    : samples_(std::move(samples)), source_(std::move(source)) {
  if (samples_.size() < kClipSamples) {
    throw Error(Errc::TrackTooShort, source_.string() + " has " +
                                         std::to_string(samples_.size()) + " samples");
  }
  check_amplitudes(samples_);
}

std::vector<std::int16_t> decode_wav(std::span<const std::uint8_t> bytes, WavInfo* info) {
  const ParsedWav parsed = parse_header(bytes, true);
  std::vector<std::int16_t> pcm(parsed.info.frames);
  for (std::size_t i = 0; i < pcm.size(); ++i) {
    pcm[i] = static_cast<std::int16_t>(read_u16(bytes, parsed.data_offset + 2 * i));
  }
  if (info) *info = parsed.info;
  return pcm;
}

std::vector<std::uint8_t> encode_wav(std::span<const std::int16_t> pcm) {
  const auto data_bytes = static_cast<std::uint32_t>(pcm.size() * 2);
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, kSampleRate);
  put_u32(out, kSampleRate * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, data_bytes);
  for (std::int16_t s : pcm) put_u16(out, static_cast<std::uint16_t>(s));
  return out;
}

WavInfo read_wav_info(const std::filesystem::path& path) {
  // Speech Commands headers fit comfortably in the first 4 KiB.
  const auto head = read_file(path, 4096);
  return parse_header(head, false).info;
}

AudioClip load_wav(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const auto pcm = decode_wav(bytes);
  return AudioClip(to_real(pcm), path);
}

BackgroundTrack load_background(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const auto pcm = decode_wav(bytes);
  return BackgroundTrack(to_real(pcm), path);
}

std::int16_t quantize(float sample) {
  const double scaled = std::nearbyint(static_cast<double>(sample) * 32768.0);
  return static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
}

void save_wav(const std::filesystem::path& path, std::span<const float> samples) {
  std::vector<std::int16_t> pcm(samples.size());
  std::transform(samples.begin(), samples.end(), pcm.begin(), quantize);
  const auto bytes = encode_wav(pcm);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::Io, "short write to " + path.string());
}

AudioClip generate_tone(double freq_hz, double duration_s, double amplitude) {
  if (!(freq_hz > 0.0) || freq_hz >= kSampleRate / 2.0) {
    throw Error(Errc::FrequencyAboveNyquist, std::to_string(freq_hz) + " Hz");
  }
  if (std::abs(amplitude) > 1.0 || duration_s < 0.0) {
    throw Error(Errc::InvalidHyperparameter, "amplitude must be <= 1, duration >= 0");
  }
  const auto n = static_cast<std::size_t>(std::llround(duration_s * kSampleRate));
  std::vector<float> samples(n);
  for (std::size_t i = 0; i < n; ++i) {
    samples[i] = static_cast<float>(
        amplitude * std::sin(2.0 * std::numbers::pi * freq_hz * static_cast<double>(i) / kSampleRate));
  }
  return AudioClip(std::move(samples));
}

AudioClip random_snippet(const BackgroundTrack& track, Rng& rng) {
  if (track.size() < kClipSamples) throw Error(Errc::TrackTooShort, track.source_path().string());
  const std::size_t offset = rng.uniform_index(track.size() - kClipSamples + 1);
  auto first = track.samples().begin() + static_cast<std::ptrdiff_t>(offset);
  return AudioClip(std::vector<float>(first, first + kClipSamples), track.source_path());
}

AudioClip mix_background(const AudioClip& clip, const AudioClip& snippet, double volume) {
  if (clip.size() != kClipSamples || snippet.size() != kClipSamples) {
    throw Error(Errc::LengthMismatch, "mixing needs two one-second clips, got " +
                                          std::to_string(clip.size()) + " and " +
                                          std::to_string(snippet.size()));
  }
  if (!(volume >= 0.0 && volume <= 1.0)) {
    throw Error(Errc::InvalidHyperparameter, "background volume must lie in [0, 1]");
  }
  std::vector<float> out(kClipSamples);
  const auto a = clip.samples();
  const auto b = snippet.samples();
  for (std::size_t i = 0; i < kClipSamples; ++i) {
    const double mixed = static_cast<double>(a[i]) + volume * static_cast<double>(b[i]);
    out[i] = static_cast<float>(std::clamp(mixed, -1.0, 1.0));
  }
  return AudioClip(std::move(out), clip.source_path());
}

}  // namespace fskws::audio
