#pragma once

// Synthetic stand-ins for a Speech Commands v2 tree: one folder per keyword
// with `<speaker>_nohash_<n>.wav` files and a `_background_noise_` folder.
// Each keyword is a distinct two-tone signature so that episodic training
// on the fixture is learnable.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace fixture {

struct KeywordPlan {
  std::string keyword;
  std::size_t speakers = 0;  // speakers with at least one full-length clip
};

struct FixtureOptions {
  std::vector<KeywordPlan> keywords;
  std::size_t second_utterance_every = 7;   // every n-th speaker records twice
  std::size_t short_clip_every = 10;        // every n-th speaker also has a short clip
  std::size_t short_only_speakers = 3;      // extra speakers whose only clip is short
  std::size_t background_tracks = 2;
  double background_seconds = 5.0;
  double noise = 0.01;
  std::uint64_t seed = 1;
};

/// Published per-keyword speaker counts for all 35 keywords.
FixtureOptions published_scale();

/// n_core keywords with `core_speakers` each and n_unknown with
/// `unknown_speakers` each.
FixtureOptions small_scale(std::size_t n_core, std::size_t core_speakers, std::size_t n_unknown,
                           std::size_t unknown_speakers);

std::string speaker_hex(std::size_t index);

/// Writes the tree under `root` and returns the number of WAV files.
std::size_t make_speech_commands(const std::filesystem::path& root, const FixtureOptions& opt);

/// Fresh empty directory under the system temp dir.
std::filesystem::path temp_dir(const std::string& tag);

}  // namespace fixture
