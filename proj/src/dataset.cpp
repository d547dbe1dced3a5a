#include "fskws/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "fskws/error.hpp"

namespace fskws::dataset {

namespace fs = std::filesystem;
using nlohmann::json;

const std::array<KeywordCount, 30> kPublishedCore{{
    {"down", 1465},  {"zero", 1450},  {"seven", 1450}, {"nine", 1443},  {"five", 1442},  {"yes", 1422},
    {"four", 1421},  {"left", 1416},  {"stop", 1413},  {"six", 1411},   {"right", 1409}, {"on", 1403},
    {"three", 1401}, {"off", 1387},   {"dog", 1385},   {"marvin", 1378}, {"one", 1376},  {"go", 1372},
    {"no", 1368},    {"two", 1367},   {"eight", 1358}, {"house", 1357}, {"wow", 1336},   {"happy", 1332},
    {"bird", 1315},  {"cat", 1300},   {"up", 1291},    {"sheila", 1291}, {"bed", 1257},  {"tree", 1062},
}};

const std::array<KeywordCount, 5> kPublishedUnknown{{
    {"visual", 412}, {"forward", 397}, {"backward", 396}, {"follow", 387}, {"learn", 386},
}};

namespace {

constexpr std::array<std::string_view, 3> kRoleNames{"core", "unknown", "silence"};
constexpr std::array<std::string_view, 3> kPhaseNames{"train", "val", "test"};
constexpr int kManifestVersion = 1;

std::size_t phase_index(Phase p) { return static_cast<std::size_t>(p); }

/// First k entries of a uniformly random permutation of [0, n).
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.uniform_index(n - i)]);
  idx.resize(k);
  return idx;
}

bool is_wav(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".wav";
}

std::vector<fs::path> sorted_children(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::string source_version(std::size_t keyword_folders) {
  if (keyword_folders == 35) return "speech_commands_v0.02";
  return "unrecognized (" + std::to_string(keyword_folders) + " keyword folders)";
}

std::vector<std::string> to_strings(std::span<const KeywordCount> counts) {
  std::vector<std::string> out;
  for (const auto& c : counts) out.emplace_back(c.keyword);
  return out;
}

}  // namespace

std::string_view role_name(Role r) { return kRoleNames[static_cast<std::size_t>(r)]; }
std::string_view phase_name(Phase p) { return kPhaseNames[static_cast<std::size_t>(p)]; }

Role parse_role(std::string_view s) {
  for (std::size_t i = 0; i < kRoleNames.size(); ++i) {
    if (kRoleNames[i] == s) return static_cast<Role>(i);
  }
  throw Error(Errc::BadManifest, "unknown role '" + std::string(s) + "'");
}

Phase parse_phase(std::string_view s) {
  for (std::size_t i = 0; i < kPhaseNames.size(); ++i) {
    if (kPhaseNames[i] == s) return static_cast<Phase>(i);
  }
  throw Error(Errc::BadManifest, "unknown phase '" + std::string(s) + "'");
}

std::vector<std::string> SynthesisConfig::core_list() const {
  return core_keywords.empty() ? to_strings(kPublishedCore) : core_keywords;
}

std::vector<std::string> SynthesisConfig::unknown_list() const {
  return unknown_keywords.empty() ? to_strings(kPublishedUnknown) : unknown_keywords;
}

void to_json(json& j, const SynthesisConfig& c) {
  j = json{{"core_quota", c.core_quota},
           {"unknown_quota", c.unknown_quota},
           {"core_speaker_threshold", c.core_speaker_threshold},
           {"core_split", c.core_split},
           {"unknown_fractions", c.unknown_fractions},
           {"silence_count", c.silence_count},
           {"silence_fractions", c.silence_fractions},
           {"silence_max_volume", c.silence_max_volume},
           {"use_published_lists", c.use_published_lists},
           {"core_keywords", c.core_list()},
           {"unknown_keywords", c.unknown_list()}};
}

void from_json(const json& j, SynthesisConfig& c) {
  c = SynthesisConfig{};
  c.core_quota = j.value("core_quota", c.core_quota);
  c.unknown_quota = j.value("unknown_quota", c.unknown_quota);
  c.core_speaker_threshold = j.value("core_speaker_threshold", c.core_speaker_threshold);
  c.core_split = j.value("core_split", c.core_split);
  c.unknown_fractions = j.value("unknown_fractions", c.unknown_fractions);
  c.silence_count = j.value("silence_count", c.silence_count);
  c.silence_fractions = j.value("silence_fractions", c.silence_fractions);
  c.silence_max_volume = j.value("silence_max_volume", c.silence_max_volume);
  c.use_published_lists = j.value("use_published_lists", c.use_published_lists);
  c.core_keywords = j.value("core_keywords", std::vector<std::string>{});
  c.unknown_keywords = j.value("unknown_keywords", std::vector<std::string>{});
}

// ------------------------------------------------------------- scanning

std::string speaker_from_filename(std::string_view filename) {
  const auto pos = filename.find("_nohash_");
  if (pos != std::string_view::npos) return std::string(filename.substr(0, pos));
  const auto dot = filename.rfind('.');
  return std::string(filename.substr(0, dot));
}

Inventory scan_speech_commands(const fs::path& root) {
  if (!fs::is_directory(root)) throw Error(Errc::Io, "not a directory: " + root.string());
  const fs::path base = fs::absolute(root).lexically_normal();
  Inventory inv;
  bool have_background = false;
  for (const auto& dir : sorted_children(base)) {
    if (!fs::is_directory(dir)) continue;
    const std::string name = dir.filename().string();
    if (name == kBackgroundFolder) {
      have_background = true;
      for (const auto& f : sorted_children(dir)) {
        if (is_wav(f)) inv.background_tracks.push_back(f);
      }
      continue;
    }
    if (name.empty() || name[0] == '_' || name[0] == '.') continue;
    ++inv.keyword_folders;
    std::size_t found = 0;
    for (const auto& f : sorted_children(dir)) {
      if (!is_wav(f)) continue;
      InventoryItem item;
      item.keyword = name;
      item.filename = f.filename().string();
      item.speaker_id = speaker_from_filename(item.filename);
      item.path = f;
      item.samples = audio::read_wav_info(f).frames;
      inv.items.push_back(std::move(item));
      ++found;
    }
    if (found == 0) throw Error(Errc::EmptyKeywordFolder, "no WAV files in " + dir.string());
  }
  if (!have_background) {
    throw Error(Errc::MissingBackgroundFolder, "missing " + (base / kBackgroundFolder).string());
  }
  return inv;
}

Inventory filter_short(Inventory inv) {
  const auto before = inv.items.size();
  std::erase_if(inv.items, [](const InventoryItem& it) { return it.samples < audio::kClipSamples; });
  inv.filtered_count += before - inv.items.size();
  return inv;
}

// ------------------------------------------------------------- grouping

namespace {

std::size_t distinct_speakers(const std::vector<InventoryItem>& items) {
  std::set<std::string> s;
  for (const auto& it : items) s.insert(it.speaker_id);
  return s.size();
}

std::map<std::string, std::vector<InventoryItem>> by_keyword(const Inventory& inv) {
  std::map<std::string, std::vector<InventoryItem>> out;
  for (const auto& it : inv.items) out[it.keyword].push_back(it);
  return out;
}

}  // namespace

Grouping group_core_unknown(const Inventory& inv, const SynthesisConfig& cfg) {
  auto words = by_keyword(inv);
  Grouping g;
  if (!cfg.use_published_lists) {
    for (auto& [kw, items] : words) {
      KeywordGroup grp{kw, Role::Core, distinct_speakers(items), std::move(items)};
      grp.role = grp.speakers > cfg.core_speaker_threshold ? Role::Core : Role::Unknown;
      (grp.role == Role::Core ? g.core : g.unknown).push_back(std::move(grp));
    }
    return g;
  }

  auto take = [&](const std::vector<std::string>& list, Role role, std::vector<KeywordGroup>& dest) {
    for (const auto& kw : list) {
      auto it = words.find(kw);
      if (it == words.end()) throw Error(Errc::QuotaUnreachable, "keyword folder '" + kw + "' not found");
      KeywordGroup grp{kw, role, distinct_speakers(it->second), std::move(it->second)};
      const bool by_threshold = grp.speakers > cfg.core_speaker_threshold;
      if (by_threshold != (role == Role::Core)) {
        g.warnings.push_back("'" + kw + "' has " + std::to_string(grp.speakers) + " speakers after filtering; " +
                             "threshold grouping disagrees with the published " + std::string(role_name(role)) +
                             " list, keeping the published list");
      }
      dest.push_back(std::move(grp));
      words.erase(it);
    }
  };
  take(cfg.core_list(), Role::Core, g.core);
  take(cfg.unknown_list(), Role::Unknown, g.unknown);
  for (const auto& [kw, items] : words) g.warnings.push_back("ignoring unlisted keyword folder '" + kw + "'");
  auto by_name = [](const KeywordGroup& a, const KeywordGroup& b) { return a.keyword < b.keyword; };
  std::sort(g.core.begin(), g.core.end(), by_name);
  std::sort(g.unknown.begin(), g.unknown.end(), by_name);
  return g;
}

Grouping balance(Grouping g, std::uint64_t seed, const SynthesisConfig& cfg) {
  auto run = [&](KeywordGroup& grp, std::size_t quota) {
    std::map<std::string, InventoryItem> first;  // speaker -> smallest filename
    for (auto& it : grp.items) {
      auto [pos, inserted] = first.try_emplace(it.speaker_id, it);
      if (!inserted && it.filename < pos->second.filename) pos->second = it;
    }
    if (first.size() < quota) {
      throw Error(Errc::QuotaUnreachable, "'" + grp.keyword + "' has " + std::to_string(first.size()) +
                                              " speakers, quota is " + std::to_string(quota));
    }
    std::vector<InventoryItem> speakers;
    for (auto& [spk, it] : first) speakers.push_back(std::move(it));
    Rng rng(seed, "balance:" + grp.keyword);
    const auto pick = sample_without_replacement(speakers.size(), quota, rng);
    std::vector<InventoryItem> kept;
    for (std::size_t i : pick) kept.push_back(speakers[i]);
    std::sort(kept.begin(), kept.end(),
              [](const InventoryItem& a, const InventoryItem& b) { return a.speaker_id < b.speaker_id; });
    grp.items = std::move(kept);
    grp.speakers = quota;
  };
  for (auto& grp : g.core) run(grp, cfg.core_quota);
  for (auto& grp : g.unknown) run(grp, cfg.unknown_quota);
  return g;
}

std::array<std::size_t, 3> apportion(std::size_t total, const std::array<double, 3>& fractions) {
  std::array<std::size_t, 3> out{};
  std::array<double, 3> rem{};
  std::size_t used = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = static_cast<double>(total) * fractions[i];
    out[i] = static_cast<std::size_t>(std::floor(exact));
    rem[i] = exact - static_cast<double>(out[i]);
    used += out[i];
  }
  while (used < total) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < 3; ++i) {
      if (rem[i] > rem[best]) best = i;
    }
    ++out[best];
    rem[best] = -1.0;
    ++used;
  }
  return out;
}

std::map<std::string, Phase> split_core(const Grouping& g, std::uint64_t seed, const SynthesisConfig& cfg) {
  const auto& s = cfg.core_split;
  if (g.core.size() != s[0] + s[1] + s[2]) {
    throw Error(Errc::InvalidConfig, std::to_string(g.core.size()) + " core keywords cannot be split " +
                                         std::to_string(s[0]) + "/" + std::to_string(s[1]) + "/" + std::to_string(s[2]));
  }
  std::vector<std::string> names;
  for (const auto& grp : g.core) names.push_back(grp.keyword);
  std::sort(names.begin(), names.end());
  Rng rng(seed, "split-core");
  rng.shuffle(std::span<std::string>(names));
  std::map<std::string, Phase> out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    out[names[i]] = i < s[0] ? Phase::Train : (i < s[0] + s[1] ? Phase::Val : Phase::Test);
  }
  return out;
}

std::vector<ManifestEntry> split_unknown(const Grouping& g, std::uint64_t seed, const SynthesisConfig& cfg) {
  std::vector<ManifestEntry> out;
  for (const auto& grp : g.unknown) {
    std::vector<const InventoryItem*> items;
    for (const auto& it : grp.items) items.push_back(&it);
    Rng rng(seed, "split-unknown:" + grp.keyword);
    rng.shuffle(std::span<const InventoryItem*>(items));
    const auto counts = apportion(items.size(), cfg.unknown_fractions);
    std::size_t pos = 0;
    for (std::size_t p = 0; p < 3; ++p) {
      std::vector<const InventoryItem*> part(items.begin() + static_cast<std::ptrdiff_t>(pos),
                                             items.begin() + static_cast<std::ptrdiff_t>(pos + counts[p]));
      pos += counts[p];
      std::sort(part.begin(), part.end(), [](auto* a, auto* b) { return a->speaker_id < b->speaker_id; });
      for (const auto* it : part) {
        out.push_back({it->path, it->keyword, Role::Unknown, static_cast<Phase>(p), it->speaker_id});
      }
    }
  }
  return out;
}

std::vector<audio::BackgroundTrack> load_backgrounds(const std::vector<fs::path>& tracks) {
  std::vector<audio::BackgroundTrack> out;
  for (const auto& t : tracks) out.push_back(audio::load_background(t));
  return out;
}

std::vector<ManifestEntry> build_silence(const std::vector<fs::path>& tracks, const fs::path& out_dir,
                                         std::uint64_t seed, const SynthesisConfig& cfg) {
  if (tracks.empty()) throw Error(Errc::MissingBackgroundFolder, "no background tracks to cut silence from");
  const auto bank = load_backgrounds(tracks);
  const fs::path dir = fs::absolute(out_dir / kSilenceFolder).lexically_normal();
  fs::create_directories(dir);
  const auto counts = apportion(cfg.silence_count, cfg.silence_fractions);
  Rng rng(seed, "silence");
  std::vector<ManifestEntry> out;
  for (std::size_t i = 0; i < cfg.silence_count; ++i) {
    const std::size_t t = rng.uniform_index(bank.size());
    const auto snippet = audio::random_snippet(bank[t], rng);
    const double volume = rng.uniform(0.0, cfg.silence_max_volume);
    std::vector<float> samples(snippet.samples().begin(), snippet.samples().end());
    for (auto& s : samples) s = static_cast<float>(static_cast<double>(s) * volume);
    char name[32];
    std::snprintf(name, sizeof name, "silence_%04zu.wav", i);
    audio::save_wav(dir / name, samples);
    const Phase phase = i < counts[0] ? Phase::Train : (i < counts[0] + counts[1] ? Phase::Val : Phase::Test);
    out.push_back({dir / name, std::string(kSilenceCategory), Role::Silence, phase,
                   "bg-" + tracks[t].stem().string()});
  }
  return out;
}

// ------------------------------------------------------------- manifest

void write_manifest(const Manifest& m, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  std::vector<std::string> tracks;
  for (const auto& t : m.background_tracks) tracks.push_back(t.string());
  const json header{{"format", "fskws-manifest"},
                    {"version", kManifestVersion},
                    {"synthesis_seed", m.synthesis_seed},
                    {"tool_version", m.tool_version},
                    {"source_dataset_version", m.source_dataset_version},
                    {"background_tracks", tracks},
                    {"entries", m.entries.size()},
                    {"config", m.config}};
  out << header.dump() << '\n';
  for (const auto& e : m.entries) {
    out << json{{"path", e.path.string()},
                {"keyword", e.keyword},
                {"role", role_name(e.role)},
                {"phase", phase_name(e.phase)},
                {"speaker_id", e.speaker_id}}
               .dump()
        << '\n';
  }
  if (!out) throw Error(Errc::Io, "failed writing " + path.string());
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open manifest " + path.string());
  Manifest m;
  std::string line;
  std::size_t line_no = 0;
  std::size_t declared = 0;
  try {
    if (!std::getline(in, line)) throw Error(Errc::BadManifest, "empty manifest " + path.string());
    ++line_no;
    const auto header = json::parse(line);
    if (header.value("format", "") != "fskws-manifest") throw Error(Errc::BadManifest, "not an fskws manifest");
    if (header.at("version").get<int>() != kManifestVersion) {
      throw Error(Errc::VersionUnsupported, "manifest version " + header.at("version").dump());
    }
    m.synthesis_seed = header.at("synthesis_seed");
    m.tool_version = header.at("tool_version");
    m.source_dataset_version = header.at("source_dataset_version");
    for (const auto& t : header.at("background_tracks")) m.background_tracks.emplace_back(t.get<std::string>());
    m.config = header.at("config").get<SynthesisConfig>();
    declared = header.at("entries");
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto j = json::parse(line);
      m.entries.push_back({fs::path(j.at("path").get<std::string>()), j.at("keyword"),
                           parse_role(j.at("role").get<std::string>()), parse_phase(j.at("phase").get<std::string>()),
                           j.at("speaker_id")});
    }
  } catch (const json::exception& e) {
    throw Error(Errc::BadManifest, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
  }
  if (m.entries.size() != declared) {
    throw Error(Errc::BadManifest, path.string() + " declares " + std::to_string(declared) + " entries but has " +
                                       std::to_string(m.entries.size()));
  }
  return m;
}

void validate_manifest(const Manifest& m) {
  std::map<std::string, std::set<Phase>> core_phases;
  std::map<std::string, std::size_t> counts;
  std::map<std::string, std::set<std::string>> speakers;
  std::set<std::string> paths;
  for (const auto& e : m.entries) {
    if (!paths.insert(e.path.string()).second) throw Error(Errc::BadManifest, "duplicate entry " + e.path.string());
    if (e.role == Role::Silence) continue;
    if (e.role == Role::Core) core_phases[e.keyword].insert(e.phase);
    ++counts[e.keyword];
    if (!speakers[e.keyword].insert(e.speaker_id).second) {
      throw Error(Errc::BadManifest, "speaker " + e.speaker_id + " appears twice under '" + e.keyword + "'");
    }
  }
  std::array<std::size_t, 3> per_phase{};
  for (const auto& [kw, phases] : core_phases) {
    if (phases.size() != 1) throw Error(Errc::BadManifest, "core keyword '" + kw + "' appears in several phases");
    ++per_phase[phase_index(*phases.begin())];
    if (counts[kw] != m.config.core_quota) {
      throw Error(Errc::BadManifest, "core keyword '" + kw + "' has " + std::to_string(counts[kw]) + " entries");
    }
  }
  if (per_phase != m.config.core_split) throw Error(Errc::BadManifest, "core phase split does not match config");
  for (const auto& [kw, n] : counts) {
    if (!core_phases.contains(kw) && n != m.config.unknown_quota) {
      throw Error(Errc::BadManifest, "unknown keyword '" + kw + "' has " + std::to_string(n) + " entries");
    }
  }
}

// --------------------------------------------------------------- report

void to_json(json& j, const SynthesisReport& r) {
  json kws = json::array();
  for (const auto& k : r.keywords) {
    kws.push_back({{"keyword", k.keyword},
                   {"role", role_name(k.role)},
                   {"speakers_raw", k.raw_speakers},
                   {"speakers_filtered", k.filtered_speakers},
                   {"min_utterances", k.min_utterances},
                   {"max_utterances", k.max_utterances},
                   {"mean_utterances", k.mean_utterances},
                   {"selected", k.selected},
                   {"phase_counts", k.phase_counts}});
  }
  j = json{{"keywords", kws},
           {"scanned_files", r.scanned_files},
           {"filtered_files", r.filtered_files},
           {"silence_clips", r.silence_clips},
           {"warnings", r.warnings}};
}

std::string table_summary(const SynthesisReport& r) {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-10s %-8s %8s %8s %4s %4s %6s %8s %6s %6s %6s\n", "keyword", "role", "spk_raw",
                "spk_1s", "min", "max", "mean", "selected", "train", "val", "test");
  os << buf;
  for (const auto& k : r.keywords) {
    auto pc = [&](const char* p) {
      auto it = k.phase_counts.find(p);
      return it == k.phase_counts.end() ? std::size_t{0} : it->second;
    };
    std::snprintf(buf, sizeof buf, "%-10s %-8s %8zu %8zu %4zu %4zu %6.2f %8zu %6zu %6zu %6zu\n", k.keyword.c_str(),
                  std::string(role_name(k.role)).c_str(), k.raw_speakers, k.filtered_speakers, k.min_utterances,
                  k.max_utterances, k.mean_utterances, k.selected, pc("train"), pc("val"), pc("test"));
    os << buf;
  }
  os << "scanned " << r.scanned_files << " files, filtered " << r.filtered_files << " shorter than one second, "
     << r.silence_clips << " silence clips\n";
  for (const auto& w : r.warnings) os << "warning: " << w << '\n';
  return os.str();
}

SynthesisResult synthesize_manifest(const fs::path& root, const fs::path& out_dir, std::uint64_t seed,
                                    const SynthesisConfig& cfg) {
  const Inventory raw = scan_speech_commands(root);
  const auto raw_words = by_keyword(raw);
  const Inventory filtered = filter_short(raw);
  Grouping grouped = group_core_unknown(filtered, cfg);
  const auto filtered_words = by_keyword(filtered);
  const std::vector<std::string> warnings = grouped.warnings;
  Grouping balanced = balance(std::move(grouped), seed, cfg);
  const auto core_phase = split_core(balanced, seed, cfg);

  fs::create_directories(out_dir);
  Manifest m;
  m.synthesis_seed = seed;
  m.source_dataset_version = source_version(raw.keyword_folders);
  m.background_tracks = raw.background_tracks;
  m.config = cfg;
  for (const auto& grp : balanced.core) {
    const Phase p = core_phase.at(grp.keyword);
    for (const auto& it : grp.items) m.entries.push_back({it.path, it.keyword, Role::Core, p, it.speaker_id});
  }
  auto unknown = split_unknown(balanced, seed, cfg);
  m.entries.insert(m.entries.end(), unknown.begin(), unknown.end());
  auto silence = build_silence(raw.background_tracks, out_dir, seed, cfg);
  m.entries.insert(m.entries.end(), silence.begin(), silence.end());
  validate_manifest(m);

  SynthesisReport report;
  report.scanned_files = raw.items.size();
  report.filtered_files = filtered.filtered_count;
  report.silence_clips = silence.size();
  report.warnings = warnings;
  auto describe = [&](const KeywordGroup& grp) {
    KeywordReport k;
    k.keyword = grp.keyword;
    k.role = grp.role;
    std::map<std::string, std::size_t> per_speaker;
    for (const auto& it : raw_words.at(grp.keyword)) ++per_speaker[it.speaker_id];
    k.raw_speakers = per_speaker.size();
    k.filtered_speakers = distinct_speakers(filtered_words.at(grp.keyword));
    k.min_utterances = per_speaker.empty() ? 0 : SIZE_MAX;
    std::size_t total = 0;
    for (const auto& [spk, n] : per_speaker) {
      k.min_utterances = std::min(k.min_utterances, n);
      k.max_utterances = std::max(k.max_utterances, n);
      total += n;
    }
    k.mean_utterances = per_speaker.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(per_speaker.size());
    k.selected = grp.items.size();
    return k;
  };
  for (const auto& grp : balanced.core) report.keywords.push_back(describe(grp));
  std::stable_sort(report.keywords.begin(), report.keywords.end(),
                   [](const KeywordReport& a, const KeywordReport& b) { return a.raw_speakers > b.raw_speakers; });
  std::vector<KeywordReport> unk;
  for (const auto& grp : balanced.unknown) unk.push_back(describe(grp));
  std::stable_sort(unk.begin(), unk.end(),
                   [](const KeywordReport& a, const KeywordReport& b) { return a.raw_speakers > b.raw_speakers; });
  report.keywords.insert(report.keywords.end(), unk.begin(), unk.end());
  for (auto& k : report.keywords) {
    for (const auto& e : m.entries) {
      if (e.keyword == k.keyword) ++k.phase_counts[std::string(phase_name(e.phase))];
    }
  }

  write_manifest(m, out_dir / "manifest.jsonl");
  std::ofstream rep(out_dir / "report.json", std::ios::binary);
  rep << json(report).dump(2) << '\n';
  if (!rep) throw Error(Errc::Io, "failed writing " + (out_dir / "report.json").string());
  return {std::move(m), std::move(report)};
}

// ------------------------------------------------------------- episodes

void EpisodeSpec::validate() const {
  if (n_way < 2) throw Error(Errc::InvalidConfig, "n_way must be at least 2");
  if (k_shot < 1) throw Error(Errc::InvalidConfig, "k_shot must be at least 1");
  if (n_query < 1) throw Error(Errc::InvalidConfig, "n_query must be at least 1");
  if (!(background_volume >= 0.0 && background_volume <= 1.0)) {
    throw Error(Errc::InvalidConfig, "background_volume must lie in [0, 1]");
  }
  if (!(mix_probability >= 0.0 && mix_probability <= 1.0)) {
    throw Error(Errc::InvalidConfig, "mix_probability must lie in [0, 1]");
  }
}

void to_json(json& j, const EpisodeSpec& s) {
  j = json{{"n_way", s.n_way},
           {"k_shot", s.k_shot},
           {"n_query", s.n_query},
           {"include_unknown", s.include_unknown},
           {"include_silence", s.include_silence},
           {"background", s.background},
           {"background_volume", s.background_volume},
           {"mix_probability", s.mix_probability},
           {"mix_support", s.mix_support},
           {"phase", phase_name(s.phase)}};
}

ManifestIndex::ManifestIndex(const Manifest& m) : manifest_(&m) {
  std::array<std::set<std::string>, 3> core;
  for (const auto& e : m.entries) {
    const std::size_t p = phase_index(e.phase);
    switch (e.role) {
      case Role::Core:
        core[p].insert(e.keyword);
        by_keyword_[e.keyword].push_back(&e);
        break;
      case Role::Unknown:
        unknown_[p].push_back(&e);
        break;
      case Role::Silence:
        silence_[p].push_back(&e);
        break;
    }
  }
  for (std::size_t p = 0; p < 3; ++p) core_[p].assign(core[p].begin(), core[p].end());
}

const std::vector<std::string>& ManifestIndex::core_keywords(Phase p) const { return core_[phase_index(p)]; }

const std::vector<const ManifestEntry*>& ManifestIndex::keyword_entries(const std::string& keyword) const {
  static const std::vector<const ManifestEntry*> none;
  auto it = by_keyword_.find(keyword);
  return it == by_keyword_.end() ? none : it->second;
}

const std::vector<const ManifestEntry*>& ManifestIndex::unknown_pool(Phase p) const { return unknown_[phase_index(p)]; }
const std::vector<const ManifestEntry*>& ManifestIndex::silence_pool(Phase p) const { return silence_[phase_index(p)]; }

EpisodePlan sample_episode(const ManifestIndex& index, const EpisodeSpec& spec, Rng& rng) {
  spec.validate();
  const auto& core = index.core_keywords(spec.phase);
  if (core.size() < spec.n_way) {
    throw Error(Errc::InsufficientClasses, std::string(phase_name(spec.phase)) + " phase has " +
                                               std::to_string(core.size()) + " core keywords, episode needs " +
                                               std::to_string(spec.n_way));
  }
  const std::size_t per = spec.k_shot + spec.n_query;

  struct Group {
    protonet::EpisodeCategory category;
    std::vector<const ManifestEntry*> items;
  };
  std::vector<Group> groups;
  auto draw = [&](const std::string& name, protonet::CategoryKind kind, const std::vector<const ManifestEntry*>& pool) {
    if (pool.size() < per) {
      throw Error(Errc::InsufficientSamples, "'" + name + "' has " + std::to_string(pool.size()) +
                                                 " samples in the " + std::string(phase_name(spec.phase)) +
                                                 " phase, episode needs " + std::to_string(per));
    }
    Group g{{name, kind}, {}};
    for (std::size_t i : sample_without_replacement(pool.size(), per, rng)) g.items.push_back(pool[i]);
    groups.push_back(std::move(g));
  };
  for (std::size_t i : sample_without_replacement(core.size(), spec.n_way, rng)) {
    draw(core[i], protonet::CategoryKind::Core, index.keyword_entries(core[i]));
  }
  if (spec.include_unknown) {
    draw(std::string(kUnknownCategory), protonet::CategoryKind::Unknown, index.unknown_pool(spec.phase));
  }
  if (spec.include_silence) {
    draw(std::string(kSilenceCategory), protonet::CategoryKind::Silence, index.silence_pool(spec.phase));
  }
  rng.shuffle(std::span<Group>(groups));

  EpisodePlan plan;
  plan.n_core = spec.n_way;
  plan.k_shot = spec.k_shot;
  plan.n_query = spec.n_query;
  for (std::size_t c = 0; c < groups.size(); ++c) {
    plan.categories.push_back(groups[c].category);
    const int label = static_cast<int>(c);
    for (std::size_t i = 0; i < spec.k_shot; ++i) plan.support.push_back({groups[c].items[i], label});
    for (std::size_t i = spec.k_shot; i < per; ++i) plan.query.push_back({groups[c].items[i], label});
  }
  return plan;
}

protonet::Episode load_episode(const EpisodePlan& plan, const EpisodeSpec& spec,
                               const std::vector<audio::BackgroundTrack>& backgrounds, Rng& mix_rng,
                               features::Layout layout, const features::FeatureConfig& fcfg) {
  if (spec.background && backgrounds.empty()) {
    throw Error(Errc::MissingBackgroundFolder, "background mixing requested but no background tracks are loaded");
  }
  auto load = [&](const PlannedItem& item, bool is_support) {
    audio::AudioClip clip = audio::load_wav(item.entry->path);
    const bool mixable = plan.categories[static_cast<std::size_t>(item.label)].kind != protonet::CategoryKind::Silence;
    if (spec.background && mixable && (!is_support || spec.mix_support) && mix_rng.uniform() < spec.mix_probability) {
      const auto& track = backgrounds[mix_rng.uniform_index(backgrounds.size())];
      const auto snippet = audio::random_snippet(track, mix_rng);
      const double volume = mix_rng.uniform(0.0, spec.background_volume);
      clip = audio::mix_background(clip, snippet, volume);
    }
    auto fm = features::mfcc(clip, fcfg);
    if (layout == features::Layout::TemporalConv) fm = features::reshape_for_temporal_conv(fm);
    return protonet::LabeledFeatures{std::move(fm), item.label};
  };
  protonet::Episode ep;
  ep.categories = plan.categories;
  ep.n_core = plan.n_core;
  ep.k_shot = plan.k_shot;
  ep.n_query = plan.n_query;
  for (const auto& s : plan.support) ep.support.push_back(load(s, true));
  for (const auto& q : plan.query) ep.query.push_back(load(q, false));
  return ep;
}

}  // namespace fskws::dataset
