#include "fskws/error.hpp"
#include "fskws/rng.hpp"

#include <limits>

namespace fskws {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::MalformedWav: return "MalformedWav";
    case Errc::UnsupportedFormat: return "UnsupportedFormat";
    case Errc::FrequencyAboveNyquist: return "FrequencyAboveNyquist";
    case Errc::TrackTooShort: return "TrackTooShort";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::AmplitudeOutOfRange: return "AmplitudeOutOfRange";
    case Errc::WrongClipLength: return "WrongClipLength";
    case Errc::AlreadyReshaped: return "AlreadyReshaped";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::InvalidHyperparameter: return "InvalidHyperparameter";
    case Errc::EvalWithoutStats: return "EvalWithoutStats";
    case Errc::NotScalar: return "NotScalar";
    case Errc::DetachedGraph: return "DetachedGraph";
    case Errc::MissingGrad: return "MissingGrad";
    case Errc::LayoutMismatch: return "LayoutMismatch";
    case Errc::EmptyCategory: return "EmptyCategory";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::LabelOutOfRange: return "LabelOutOfRange";
    case Errc::MissingBackgroundFolder: return "MissingBackgroundFolder";
    case Errc::EmptyKeywordFolder: return "EmptyKeywordFolder";
    case Errc::QuotaUnreachable: return "QuotaUnreachable";
    case Errc::InsufficientClasses: return "InsufficientClasses";
    case Errc::InsufficientSamples: return "InsufficientSamples";
    case Errc::BadManifest: return "BadManifest";
    case Errc::NanLoss: return "NanLoss";
    case Errc::InsufficientData: return "InsufficientData";
    case Errc::BadMagic: return "BadMagic";
    case Errc::VersionUnsupported: return "VersionUnsupported";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::string_view stream) {
  // FNV-1a over the stream name, then mixed with the master seed.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : stream) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(splitmix64(master) ^ h);
}

std::size_t Rng::uniform_index(std::size_t n) {
  const std::uint64_t range = n;
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % range;
  std::uint64_t draw;
  do {
    draw = engine_();
  } while (draw >= limit);
  return static_cast<std::size_t>(draw % range);
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

}  // namespace fskws
