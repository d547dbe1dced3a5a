#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fskws {

enum class Errc {
  // audio
  MalformedWav,
  UnsupportedFormat,
  FrequencyAboveNyquist,
  TrackTooShort,
  LengthMismatch,
  AmplitudeOutOfRange,
  // features
  WrongClipLength,
  AlreadyReshaped,
  // tensor
  ShapeMismatch,
  InvalidHyperparameter,
  EvalWithoutStats,
  NotScalar,
  DetachedGraph,
  MissingGrad,
  // nets
  LayoutMismatch,
  // protonet
  EmptyCategory,
  DimensionMismatch,
  LabelOutOfRange,
  // dataset
  MissingBackgroundFolder,
  EmptyKeywordFolder,
  QuotaUnreachable,
  InsufficientClasses,
  InsufficientSamples,
  BadManifest,
  // trainer
  NanLoss,
  InsufficientData,
  BadMagic,
  VersionUnsupported,
  // cli / io
  InvalidConfig,
  Io,
};

std::string_view errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace fskws
