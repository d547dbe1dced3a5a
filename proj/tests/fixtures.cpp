#include "fixtures.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include <unistd.h>

#include "fskws/audio.hpp"
#include "fskws/dataset.hpp"
#include "fskws/rng.hpp"

namespace fs = std::filesystem;

namespace fixture {

namespace {

std::vector<float> keyword_clip(std::size_t keyword_index, std::size_t samples, fskws::Rng& rng, double noise) {
  const double base = 150.0 * std::pow(1.12, static_cast<double>(keyword_index));
  const double f1 = base * rng.uniform(0.97, 1.03);
  const double f2 = f1 * 2.3;
  const double amp = rng.uniform(0.2, 0.5);
  const double onset = rng.uniform(0.05, 0.3) * 16000.0;
  const double length = rng.uniform(0.4, 0.6) * 16000.0;
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  std::vector<float> out(samples);
  for (std::size_t n = 0; n < samples; ++n) {
    const double t = static_cast<double>(n) / 16000.0;
    const double pos = (static_cast<double>(n) - onset) / length;
    const double env = (pos > 0.0 && pos < 1.0) ? std::sin(std::numbers::pi * pos) : 0.0;
    double v = env * amp * (std::sin(2.0 * std::numbers::pi * f1 * t + phase) +
                            0.5 * std::sin(2.0 * std::numbers::pi * f2 * t));
    v += noise * rng.uniform(-1.0, 1.0);
    out[n] = static_cast<float>(std::clamp(v, -1.0, 1.0));
  }
  return out;
}

}  // namespace

FixtureOptions published_scale() {
  FixtureOptions opt;
  for (const auto& k : fskws::dataset::kPublishedCore) opt.keywords.push_back({std::string(k.keyword), k.speakers});
  for (const auto& k : fskws::dataset::kPublishedUnknown) opt.keywords.push_back({std::string(k.keyword), k.speakers});
  opt.second_utterance_every = 0;
  opt.short_clip_every = 50;
  return opt;
}

FixtureOptions small_scale(std::size_t n_core, std::size_t core_speakers, std::size_t n_unknown,
                           std::size_t unknown_speakers) {
  FixtureOptions opt;
  for (std::size_t i = 0; i < n_core; ++i) opt.keywords.push_back({"core" + std::to_string(i), core_speakers});
  for (std::size_t i = 0; i < n_unknown; ++i) opt.keywords.push_back({"unk" + std::to_string(i), unknown_speakers});
  return opt;
}

std::string speaker_hex(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08llx",
                static_cast<unsigned long long>(fskws::derive_seed(index, "speaker") & 0xffffffffULL));
  return buf;
}

std::size_t make_speech_commands(const fs::path& root, const FixtureOptions& opt) {
  std::size_t files = 0;
  for (std::size_t k = 0; k < opt.keywords.size(); ++k) {
    const auto& plan = opt.keywords[k];
    const fs::path dir = root / plan.keyword;
    fs::create_directories(dir);
    fskws::Rng rng(opt.seed, "fixture:" + plan.keyword);
    auto write = [&](std::size_t speaker, std::size_t utt, std::size_t samples) {
      const auto name = speaker_hex(speaker) + "_nohash_" + std::to_string(utt) + ".wav";
      fskws::audio::save_wav(dir / name, keyword_clip(k, samples, rng, opt.noise));
      ++files;
    };
    for (std::size_t s = 0; s < plan.speakers; ++s) {
      write(s, 0, 16000);
      if (opt.second_utterance_every && s % opt.second_utterance_every == 1) write(s, 1, 16000);
      if (opt.short_clip_every && s % opt.short_clip_every == 3) write(s, 2, 12000);
    }
    for (std::size_t s = 0; s < opt.short_only_speakers; ++s) write(100000 + s, 0, 15999);
  }
  const fs::path bg = root / "_background_noise_";
  fs::create_directories(bg);
  fskws::Rng rng(opt.seed, "fixture:background");
  for (std::size_t t = 0; t < opt.background_tracks; ++t) {
    std::vector<float> v(static_cast<std::size_t>(opt.background_seconds * 16000.0));
    const double tilt = rng.uniform(0.0, 0.9);
    double prev = 0.0;
    for (auto& x : v) {
      prev = tilt * prev + (1.0 - tilt) * rng.uniform(-0.8, 0.8);
      x = static_cast<float>(prev);
    }
    fskws::audio::save_wav(bg / ("noise_" + std::to_string(t) + ".wav"), v);
  }
  return files;
}

fs::path temp_dir(const std::string& tag) {
  static std::size_t counter = 0;
  const fs::path base = fs::temp_directory_path() /
                        ("fskws-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  fs::remove_all(base);
  fs::create_directories(base);
  return base;
}

}  // namespace fixture
