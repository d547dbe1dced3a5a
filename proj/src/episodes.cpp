#include "fskws/episodes.hpp"

#include <cmath>
#include <numbers>

#include "fskws/error.hpp"

namespace fskws::episodes {

ManifestEpisodeSource::ManifestEpisodeSource(dataset::Manifest manifest, features::FeatureConfig fcfg)
    : manifest_(std::make_unique<const dataset::Manifest>(std::move(manifest))),
      index_(*manifest_),
      fcfg_(fcfg) {}

protonet::Episode ManifestEpisodeSource::draw(const dataset::EpisodeSpec& spec, Rng& sample_rng, Rng& mix_rng,
                                              features::Layout layout) {
  const auto plan = dataset::sample_episode(index_, spec, sample_rng);
  if (spec.background && !backgrounds_) backgrounds_ = dataset::load_backgrounds(manifest_->background_tracks);
  static const std::vector<audio::BackgroundTrack> none;
  return dataset::load_episode(plan, spec, backgrounds_ ? *backgrounds_ : none, mix_rng, layout, fcfg_);
}

nlohmann::json ManifestEpisodeSource::describe() const {
  return {{"source", "manifest"},
          {"entries", manifest_->entries.size()},
          {"synthesis_seed", manifest_->synthesis_seed},
          {"source_dataset_version", manifest_->source_dataset_version}};
}

ToneEpisodeSource::ToneEpisodeSource(ToneOptions opt, features::FeatureConfig fcfg) : opt_(std::move(opt)), fcfg_(fcfg) {}

audio::AudioClip ToneEpisodeSource::tone_sample(double freq_hz, Rng& rng) const {
  const double f = freq_hz * (1.0 + rng.uniform(-opt_.frequency_jitter, opt_.frequency_jitter));
  const double amp = rng.uniform(opt_.min_amplitude, opt_.max_amplitude);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  std::vector<float> v(audio::kClipSamples);
  for (std::size_t n = 0; n < v.size(); ++n) {
    double s = amp * std::sin(2.0 * std::numbers::pi * f * static_cast<double>(n) / audio::kSampleRate + phase);
    if (opt_.noise > 0.0) s += rng.uniform(-opt_.noise, opt_.noise);
    v[n] = static_cast<float>(std::clamp(s, -1.0, 1.0));
  }
  return audio::AudioClip(std::move(v));
}

protonet::Episode ToneEpisodeSource::draw(const dataset::EpisodeSpec& spec, Rng& sample_rng, Rng&,
                                          features::Layout layout) {
  spec.validate();
  if (spec.include_unknown || spec.include_silence || spec.background) {
    throw Error(Errc::InvalidConfig, "tone episodes support core categories only");
  }
  const auto& freqs = opt_.phase_frequencies[static_cast<std::size_t>(spec.phase)];
  if (freqs.size() < spec.n_way) {
    throw Error(Errc::InsufficientClasses, std::to_string(freqs.size()) + " tone classes, episode needs " +
                                               std::to_string(spec.n_way));
  }
  std::vector<std::size_t> idx(freqs.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  sample_rng.shuffle(std::span<std::size_t>(idx));
  idx.resize(spec.n_way);

  protonet::Episode ep;
  ep.n_core = spec.n_way;
  ep.k_shot = spec.k_shot;
  ep.n_query = spec.n_query;
  auto features_of = [&](double f) {
    auto fm = features::mfcc(tone_sample(f, sample_rng), fcfg_);
    return layout == features::Layout::TemporalConv ? features::reshape_for_temporal_conv(fm) : fm;
  };
  for (std::size_t c = 0; c < idx.size(); ++c) {
    const double f = freqs[idx[c]];
    ep.categories.push_back({"tone-" + std::to_string(static_cast<long long>(std::lround(f))) + "hz",
                             protonet::CategoryKind::Core});
    const int label = static_cast<int>(c);
    for (std::size_t i = 0; i < spec.k_shot; ++i) ep.support.push_back({features_of(f), label});
    for (std::size_t i = 0; i < spec.n_query; ++i) ep.query.push_back({features_of(f), label});
  }
  return ep;
}

nlohmann::json ToneEpisodeSource::describe() const {
  return {{"source", "tones"},
          {"train_hz", opt_.phase_frequencies[0]},
          {"val_hz", opt_.phase_frequencies[1]},
          {"test_hz", opt_.phase_frequencies[2]},
          {"amplitude", {opt_.min_amplitude, opt_.max_amplitude}},
          {"frequency_jitter", opt_.frequency_jitter},
          {"noise", opt_.noise}};
}

}  // namespace fskws::episodes
