#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "doctest.h"
#include "fskws/error.hpp"
#include "fskws/features.hpp"
#include "oracles.hpp"

using namespace fskws;
using namespace fskws::features;

namespace {

audio::AudioClip random_clip(Rng& rng) {
  std::vector<float> s(16000);
  for (auto& v : s) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return audio::AudioClip(std::move(s));
}

std::vector<double> windowed_tone(double freq) {
  std::vector<double> frame(640);
  for (std::size_t n = 0; n < frame.size(); ++n) {
    const double w = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / 639.0);
    frame[n] = w * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(n) / 16000.0);
  }
  return frame;
}

}  // namespace

TEST_CASE("config invariants") {
  const FeatureConfig cfg;
  CHECK(cfg.frame_len() == 640);
  CHECK(cfg.stride() == 320);
  CHECK(cfg.num_frames(16000) == 49);
  CHECK(cfg.num_bins() == 513);
  CHECK_NOTHROW(cfg.validate());
  FeatureConfig bad = cfg;
  bad.n_mfcc = 41;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cfg;
  bad.fft_size = 512;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("frame_signal") {
  const auto zeros = frame_signal(audio::AudioClip(std::vector<float>(16000, 0.0f)));
  REQUIRE(zeros.size() == 49);
  for (const auto& f : zeros) {
    REQUIRE(f.size() == 640);
    REQUIRE(std::all_of(f.begin(), f.end(), [](double v) { return v == 0.0; }));
  }

  std::vector<float> impulse(16000, 0.0f);
  impulse[0] = 1.0f;
  const auto frames = frame_signal(audio::AudioClip(impulse));
  CHECK(frames[0][0] == doctest::Approx(0.08));  // Hamming w[0] = 0.54 - 0.46
  CHECK(frames[0][1] == doctest::Approx(-0.97 * (0.54 - 0.46 * std::cos(2.0 * std::numbers::pi / 639.0))));

  try {
    frame_signal(audio::AudioClip(std::vector<float>(15999, 0.0f)));
    FAIL("short clip accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::WrongClipLength);
  }
}

TEST_CASE("power_spectrum against the naive DFT") {
  const FeatureConfig cfg;
  const std::vector<double> zero(640, 0.0);
  const auto pz = power_spectrum(zero, cfg);
  CHECK(pz.size() == 513);
  CHECK(std::all_of(pz.begin(), pz.end(), [](double v) { return v == 0.0; }));

  const auto tone = windowed_tone(1000.0);
  const auto p = power_spectrum(tone, cfg);
  const auto ref = oracle::naive_power_spectrum(tone, 1024);
  const auto argmax = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
  CHECK(argmax == 64);
  CHECK(static_cast<std::size_t>(std::max_element(ref.begin(), ref.end()) - ref.begin()) == 64);
  for (std::size_t k = 0; k < p.size(); ++k) REQUIRE(p[k] == doctest::Approx(ref[k]).epsilon(1e-9).scale(1e-6));

  // Parseval over the full 1024-point spectrum: sum |X|^2 = N * sum x^2.
  Rng rng(3);
  std::vector<double> frame(640);
  for (auto& v : frame) v = rng.uniform(-1.0, 1.0);
  const auto spec = power_spectrum(frame, cfg);
  double full = spec[0] + spec[512];
  for (std::size_t k = 1; k < 512; ++k) full += 2.0 * spec[k];
  const double energy = std::inner_product(frame.begin(), frame.end(), frame.begin(), 0.0);
  CHECK(std::abs(full - 1024.0 * energy) / (1024.0 * energy) < 1e-6);
}

TEST_CASE("mel filterbank construction") {
  const FeatureConfig cfg;
  const MelFilterbank bank(cfg);
  REQUIRE(bank.size() == 40);
  CHECK(bank.lower_edge_hz(0) == doctest::Approx(20.0));
  CHECK(bank.upper_edge_hz(39) == doctest::Approx(8000.0));
  // 50% overlap: the apex of filter m is the lower edge of m+1 and the
  // upper edge of m-1.
  for (std::size_t m = 0; m + 1 < bank.size(); ++m) {
    CHECK(bank.center_hz(m) == doctest::Approx(bank.lower_edge_hz(m + 1)));
    CHECK(bank.upper_edge_hz(m) == doctest::Approx(bank.center_hz(m + 1)));
  }
  // Centres are equally spaced in mel.
  const double step = hz_to_mel(bank.center_hz(1)) - hz_to_mel(bank.center_hz(0));
  for (std::size_t m = 1; m < bank.size(); ++m) {
    CHECK(hz_to_mel(bank.center_hz(m)) - hz_to_mel(bank.center_hz(m - 1)) == doctest::Approx(step));
  }
  // Overlapping neighbours partition unity between their apexes.
  for (std::size_t k = 10; k < 500; ++k) {
    double total = 0.0;
    for (std::size_t m = 0; m < bank.size(); ++m) total += bank.weight(m, k);
    const double f = 15.625 * static_cast<double>(k);
    if (f > bank.center_hz(0) && f < bank.center_hz(39)) CHECK(total == doctest::Approx(1.0));
  }
}

TEST_CASE("mel_filterbank outputs") {
  const FeatureConfig cfg;
  const auto floor_out = mel_filterbank(std::vector<double>(513, 0.0), cfg);
  for (double v : floor_out) CHECK(v == doctest::Approx(std::log(1e-10)));

  // Energy only at bin 64 (exactly 1 kHz): the winning filter is the one whose
  // centre, computed straight from the mel formula, is closest to 1 kHz.
  std::vector<double> spec(513, 0.0);
  spec[64] = 1e3;
  const auto out = mel_filterbank(spec, cfg);
  const auto winner = static_cast<std::size_t>(std::max_element(out.begin(), out.end()) - out.begin());
  const double lo = 2595.0 * std::log10(1.0 + 20.0 / 700.0);
  const double hi = 2595.0 * std::log10(1.0 + 8000.0 / 700.0);
  std::size_t nearest = 0;
  double best = 1e9;
  for (std::size_t m = 0; m < 40; ++m) {
    const double c = 700.0 * (std::pow(10.0, (lo + (hi - lo) * static_cast<double>(m + 1) / 41.0) / 2595.0) - 1.0);
    if (std::abs(c - 1000.0) < best) {
      best = std::abs(c - 1000.0);
      nearest = m;
    }
  }
  CHECK(winner == nearest);
}

TEST_CASE("dct2") {
  const std::vector<double> constant(40, 2.5);
  const auto c = dct2(constant);
  CHECK(c[0] == doctest::Approx(2.5 * std::sqrt(40.0)));
  for (std::size_t k = 1; k < 40; ++k) CHECK(std::abs(c[k]) < 1e-12);

  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(40);
    for (auto& v : x) v = rng.uniform(-30.0, 10.0);
    const auto fwd = dct2(x);
    const auto ref = oracle::naive_dct2(x);
    const auto back = idct2(fwd);
    for (std::size_t i = 0; i < 40; ++i) {
      REQUIRE(std::abs(fwd[i] - ref[i]) < 1e-9);
      REQUIRE(std::abs(back[i] - x[i]) < 1e-10);
    }
  }
}

TEST_CASE("mfcc shape, determinism and constant input") {
  const auto m = mfcc(audio::generate_tone(700.0, 1.0, 0.3));
  CHECK(m.frames() == 49);
  CHECK(m.coeffs() == 40);
  CHECK(m.layout() == Layout::FrameMajor);
  CHECK(m == mfcc(audio::generate_tone(700.0, 1.0, 0.3)));

  const auto z = mfcc(audio::AudioClip(std::vector<float>(16000, 0.0f)));
  for (std::size_t t = 1; t < 49; ++t) {
    for (std::size_t c = 0; c < 40; ++c) REQUIRE(z.at(t, c) == z.at(0, c));
  }
  for (double v : z.values()) REQUIRE(std::isfinite(v));
}

TEST_CASE("mfcc matches the naive DFT/DCT pipeline") {
  Rng rng(77);
  for (int trial = 0; trial < 5; ++trial) {
    const auto clip = random_clip(rng);
    const auto got = mfcc(clip);
    const auto ref = oracle::naive_mfcc(clip.samples());
    REQUIRE(ref.size() == got.values().size());
    for (std::size_t i = 0; i < ref.size(); ++i) REQUIRE(std::abs(got.values()[i] - ref[i]) < 1e-6);
  }
}

TEST_CASE("property: finite features for extreme inputs") {
  Rng rng(8);
  std::vector<std::vector<float>> inputs{std::vector<float>(16000, 1.0f), std::vector<float>(16000, -1.0f)};
  std::vector<float> alt(16000);
  for (std::size_t i = 0; i < alt.size(); ++i) alt[i] = (i % 2) ? 1.0f : -1.0f;
  inputs.push_back(alt);
  std::vector<float> sparse(16000, 0.0f);
  sparse[8000] = 1e-7f;
  inputs.push_back(sparse);
  for (const auto& s : inputs) {
    const auto m = mfcc(audio::AudioClip(s));
    for (double v : m.values()) REQUIRE(std::isfinite(v));
  }
}

TEST_CASE("temporal-conv reshape") {
  Rng rng(4);
  const auto m = mfcc(random_clip(rng));
  const auto r = reshape_for_temporal_conv(m);
  CHECK(r.layout() == Layout::TemporalConv);
  CHECK(r.storage_shape() == std::pair<std::size_t, std::size_t>{40, 49});
  CHECK(r.values()[7 * 49 + 3] == m.values()[3 * 40 + 7]);
  CHECK(r.at(3, 7) == m.at(3, 7));
  CHECK(reshape_to_frame_major(r) == m);
  try {
    reshape_for_temporal_conv(r);
    FAIL("double reshape accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::AlreadyReshaped);
  }
}
