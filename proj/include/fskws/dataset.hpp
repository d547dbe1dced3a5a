#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "fskws/audio.hpp"
#include "fskws/features.hpp"
#include "fskws/protonet.hpp"
#include "fskws/rng.hpp"
#include "json.hpp"

namespace fskws::dataset {

inline constexpr std::string_view kToolVersion = "fskws 1.0.0";
inline constexpr std::string_view kBackgroundFolder = "_background_noise_";
inline constexpr std::string_view kSilenceFolder = "_silence_";
inline constexpr std::string_view kUnknownCategory = "_unknown_";
inline constexpr std::string_view kSilenceCategory = "_silence_";

enum class Role { Core, Unknown, Silence };
enum class Phase { Train, Val, Test };

std::string_view role_name(Role r);
std::string_view phase_name(Phase p);
Role parse_role(std::string_view s);
Phase parse_phase(std::string_view s);

struct KeywordCount {
  std::string_view keyword;
  std::size_t speakers;
};

/// Published per-keyword speaker counts, largest first.
extern const std::array<KeywordCount, 30> kPublishedCore;
extern const std::array<KeywordCount, 5> kPublishedUnknown;

struct SynthesisConfig {
  std::size_t core_quota = 1062;
  std::size_t unknown_quota = 386;
  std::size_t core_speaker_threshold = 1000;  // strictly more speakers -> core
  std::array<std::size_t, 3> core_split{20, 5, 5};
  std::array<double, 3> unknown_fractions{0.6, 0.2, 0.2};
  std::size_t silence_count = 1000;
  std::array<double, 3> silence_fractions{0.6, 0.2, 0.2};
  double silence_max_volume = 0.1;
  /// When set, the published core/unknown lists decide the grouping and the
  /// speaker threshold only produces warnings.
  bool use_published_lists = true;
  std::vector<std::string> core_keywords;     // empty -> published list
  std::vector<std::string> unknown_keywords;  // empty -> published list

  std::vector<std::string> core_list() const;
  std::vector<std::string> unknown_list() const;
};

void to_json(nlohmann::json& j, const SynthesisConfig& c);
void from_json(const nlohmann::json& j, SynthesisConfig& c);

struct InventoryItem {
  std::string keyword;
  std::string speaker_id;
  std::string filename;
  std::filesystem::path path;
  std::size_t samples = 0;
};

struct Inventory {
  std::vector<InventoryItem> items;  // sorted by (keyword, filename)
  std::vector<std::filesystem::path> background_tracks;
  std::size_t keyword_folders = 0;
  std::size_t filtered_count = 0;
};

/// `0a2b400e_nohash_0.wav` -> `0a2b400e`; the whole stem when the marker
/// is absent.
std::string speaker_from_filename(std::string_view filename);

/// One folder per keyword plus `_background_noise_`. Other folders whose
/// name starts with '_' are ignored.
Inventory scan_speech_commands(const std::filesystem::path& root);

/// Drops utterances shorter than one second.
Inventory filter_short(Inventory inv);

struct KeywordGroup {
  std::string keyword;
  Role role = Role::Core;
  std::size_t speakers = 0;
  std::vector<InventoryItem> items;
};

struct Grouping {
  std::vector<KeywordGroup> core;     // sorted by keyword
  std::vector<KeywordGroup> unknown;  // sorted by keyword
  std::vector<std::string> warnings;
};

Grouping group_core_unknown(const Inventory& inv, const SynthesisConfig& cfg = {});

/// One utterance per speaker (smallest filename), then a seeded uniform
/// subsample of speakers down to the role quota.
Grouping balance(Grouping g, std::uint64_t seed, const SynthesisConfig& cfg = {});

/// Largest-remainder apportionment of `total` by `fractions`.
std::array<std::size_t, 3> apportion(std::size_t total, const std::array<double, 3>& fractions);

std::map<std::string, Phase> split_core(const Grouping& g, std::uint64_t seed, const SynthesisConfig& cfg = {});

struct ManifestEntry {
  std::filesystem::path path;
  std::string keyword;
  Role role = Role::Core;
  Phase phase = Phase::Train;
  std::string speaker_id;
};

std::vector<ManifestEntry> split_unknown(const Grouping& g, std::uint64_t seed, const SynthesisConfig& cfg = {});

/// Cuts silence clips from the background tracks and writes them as WAV
/// files under `out_dir/_silence_`.
std::vector<ManifestEntry> build_silence(const std::vector<std::filesystem::path>& tracks,
                                         const std::filesystem::path& out_dir, std::uint64_t seed,
                                         const SynthesisConfig& cfg = {});

struct Manifest {
  std::vector<ManifestEntry> entries;
  std::uint64_t synthesis_seed = 0;
  std::string tool_version{kToolVersion};
  std::string source_dataset_version;
  std::vector<std::filesystem::path> background_tracks;
  SynthesisConfig config;
};

void write_manifest(const Manifest& m, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path);
/// Throws BadManifest when phase disjointness, speaker uniqueness or the
/// per-keyword quotas do not hold.
void validate_manifest(const Manifest& m);

struct KeywordReport {
  std::string keyword;
  Role role = Role::Core;
  std::size_t raw_speakers = 0;       // before the one-second filter
  std::size_t filtered_speakers = 0;  // after it
  std::size_t min_utterances = 0;     // per speaker, before filtering
  std::size_t max_utterances = 0;
  double mean_utterances = 0.0;
  std::size_t selected = 0;
  std::map<std::string, std::size_t> phase_counts;
};

struct SynthesisReport {
  std::vector<KeywordReport> keywords;  // core by raw speakers descending, then unknown
  std::size_t scanned_files = 0;
  std::size_t filtered_files = 0;
  std::size_t silence_clips = 0;
  std::vector<std::string> warnings;
};

void to_json(nlohmann::json& j, const SynthesisReport& r);

struct SynthesisResult {
  Manifest manifest;
  SynthesisReport report;
};

/// Full pipeline; writes manifest.jsonl, report.json and the silence clips
/// into `out_dir`.
SynthesisResult synthesize_manifest(const std::filesystem::path& root, const std::filesystem::path& out_dir,
                                    std::uint64_t seed, const SynthesisConfig& cfg = {});

std::string table_summary(const SynthesisReport& r);

// ------------------------------------------------------------ episodes

struct EpisodeSpec {
  std::size_t n_way = 2;
  std::size_t k_shot = 1;
  std::size_t n_query = 5;
  bool include_unknown = false;
  bool include_silence = false;
  bool background = false;
  double background_volume = 0.1;
  double mix_probability = 1.0;
  bool mix_support = true;  // also mix support clips when background is on
  Phase phase = Phase::Train;

  void validate() const;
};

void to_json(nlohmann::json& j, const EpisodeSpec& s);

struct PlannedItem {
  const ManifestEntry* entry = nullptr;
  int label = 0;
};

/// Episode before audio is loaded.
struct EpisodePlan {
  std::vector<protonet::EpisodeCategory> categories;
  std::size_t n_core = 0;
  std::size_t k_shot = 0;
  std::size_t n_query = 0;
  std::vector<PlannedItem> support;
  std::vector<PlannedItem> query;
};

/// Per-phase lookup tables over a manifest. Holds pointers into it.
class ManifestIndex {
 public:
  explicit ManifestIndex(const Manifest& m);

  const std::vector<std::string>& core_keywords(Phase p) const;
  const std::vector<const ManifestEntry*>& keyword_entries(const std::string& keyword) const;
  const std::vector<const ManifestEntry*>& unknown_pool(Phase p) const;
  const std::vector<const ManifestEntry*>& silence_pool(Phase p) const;
  const Manifest& manifest() const { return *manifest_; }

 private:
  const Manifest* manifest_;
  std::array<std::vector<std::string>, 3> core_;
  std::map<std::string, std::vector<const ManifestEntry*>> by_keyword_;
  std::array<std::vector<const ManifestEntry*>, 3> unknown_;
  std::array<std::vector<const ManifestEntry*>, 3> silence_;
};

EpisodePlan sample_episode(const ManifestIndex& index, const EpisodeSpec& spec, Rng& rng);

/// Loads audio, optionally mixes background, extracts features in `layout`.
protonet::Episode load_episode(const EpisodePlan& plan, const EpisodeSpec& spec,
                               const std::vector<audio::BackgroundTrack>& backgrounds, Rng& mix_rng,
                               features::Layout layout, const features::FeatureConfig& fcfg = {});

std::vector<audio::BackgroundTrack> load_backgrounds(const std::vector<std::filesystem::path>& tracks);

}  // namespace fskws::dataset
