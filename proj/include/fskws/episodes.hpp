#pragma once

#include <array>
#include <memory>
#include <optional>
#include <vector>

#include "fskws/dataset.hpp"
#include "fskws/protonet.hpp"
#include "json.hpp"

namespace fskws::episodes {

/// Produces fully loaded episodes. `sample_rng` decides which items are
/// drawn and `mix_rng` drives background mixing, so the two streams can be
/// consumed independently.
class EpisodeSource {
 public:
  virtual ~EpisodeSource() = default;
  virtual protonet::Episode draw(const dataset::EpisodeSpec& spec, Rng& sample_rng, Rng& mix_rng,
                                 features::Layout layout) = 0;
  virtual nlohmann::json describe() const = 0;
};

class ManifestEpisodeSource : public EpisodeSource {
 public:
  explicit ManifestEpisodeSource(dataset::Manifest manifest, features::FeatureConfig fcfg = {});

  protonet::Episode draw(const dataset::EpisodeSpec& spec, Rng& sample_rng, Rng& mix_rng,
                         features::Layout layout) override;
  nlohmann::json describe() const override;

  const dataset::Manifest& manifest() const { return *manifest_; }
  const dataset::ManifestIndex& index() const { return index_; }

 private:
  std::unique_ptr<const dataset::Manifest> manifest_;
  dataset::ManifestIndex index_;
  features::FeatureConfig fcfg_;
  std::optional<std::vector<audio::BackgroundTrack>> backgrounds_;
};

/// Pure-tone classes: every sample of a class is a sine near the class
/// frequency with random phase, amplitude and a small frequency jitter.
struct ToneOptions {
  std::array<std::vector<double>, 3> phase_frequencies{
      std::vector<double>{200.0, 2000.0}, std::vector<double>{200.0, 2000.0}, std::vector<double>{200.0, 2000.0}};
  double min_amplitude = 0.3;
  double max_amplitude = 0.9;
  double frequency_jitter = 0.02;  // relative
  double noise = 0.0;              // peak of additive uniform noise
};

class ToneEpisodeSource : public EpisodeSource {
 public:
  explicit ToneEpisodeSource(ToneOptions opt = {}, features::FeatureConfig fcfg = {});

  protonet::Episode draw(const dataset::EpisodeSpec& spec, Rng& sample_rng, Rng& mix_rng,
                         features::Layout layout) override;
  nlohmann::json describe() const override;

  audio::AudioClip tone_sample(double freq_hz, Rng& rng) const;

 private:
  ToneOptions opt_;
  features::FeatureConfig fcfg_;
};

}  // namespace fskws::episodes
