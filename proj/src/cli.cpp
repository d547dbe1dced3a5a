#include "fskws/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "fskws/checkpoint.hpp"
#include "fskws/dataset.hpp"
#include "fskws/episodes.hpp"
#include "fskws/error.hpp"
#include "fskws/trainer.hpp"

namespace fskws::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::optional<fs::path> data_dir() {
  const char* v = std::getenv("FSKWS_DATA_DIR");
  if (v == nullptr || *v == '\0') return std::nullopt;
  return fs::path(v);
}

json read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::InvalidConfig, "cannot open config file " + path);
  try {
    json j = json::parse(in);
    if (!j.is_object()) throw Error(Errc::InvalidConfig, "config file " + path + " must hold an object");
    return j;
  } catch (const json::parse_error& e) {
    throw Error(Errc::InvalidConfig, "config file " + path + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
}

fs::path resolve_manifest(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const auto dir = data_dir()) return *dir / "manifest.jsonl";
  throw Error(Errc::InvalidConfig, "--manifest is required when FSKWS_DATA_DIR is not set");
}

std::vector<std::size_t> parse_shots(const std::string& text) {
  std::vector<std::size_t> shots;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const long v = std::stol(item, &used);
      if (used != item.size() || v < 1) throw std::invalid_argument(item);
      shots.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw Error(Errc::InvalidConfig, "--k-shot-sweep expects positive integers, got '" + item + "'");
    }
  }
  if (shots.empty()) throw Error(Errc::InvalidConfig, "--k-shot-sweep is empty");
  std::sort(shots.begin(), shots.end());
  shots.erase(std::unique(shots.begin(), shots.end()), shots.end());
  return shots;
}

// Flags that were given on the command line, as a training-config overlay.
struct TrainFlags {
  std::string profile, case_name;
  std::size_t n_way = 0, k_shot = 0, epochs = 0, episodes = 0, test_episodes = 0;
  std::uint64_t seed = 0;
  double lr = 0.0;
  CLI::Option* seed_opt = nullptr;

  json overlay() const {
    json j = json::object();
    if (!profile.empty()) j["profile"] = profile;
    if (!case_name.empty()) j["case"] = case_name;
    if (n_way) j["n_way"] = n_way;
    if (k_shot) j["k_shot"] = k_shot;
    if (epochs) j["epochs"] = epochs;
    if (episodes) j["train_episodes_per_epoch"] = episodes;
    if (test_episodes) j["test_episodes"] = test_episodes;
    if (lr > 0.0) j["initial_lr"] = lr;
    if (seed_opt && seed_opt->count()) j["seed"] = seed;
    return j;
  }
};

// ------------------------------------------------------------------ synth

struct SynthArgs {
  std::string input, out, config;
  std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  fs::path root = a.input;
  if (root.empty()) {
    const auto dir = data_dir();
    if (!dir) throw Error(Errc::InvalidConfig, "--input is required when FSKWS_DATA_DIR is not set");
    root = *dir;
  }
  json cfg_json = dataset::SynthesisConfig{};
  if (!a.config.empty()) {
    const json file = read_config_file(a.config);
    for (const auto& [key, value] : file.items()) {
      if (!cfg_json.contains(key)) throw Error(Errc::InvalidConfig, "unknown synthesis config key '" + key + "'");
      cfg_json[key] = value;
    }
  }
  dataset::SynthesisConfig cfg;
  try {
    cfg = cfg_json.get<dataset::SynthesisConfig>();
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidConfig, std::string("bad synthesis config value: ") + e.what());
  }
  const auto result = dataset::synthesize_manifest(root, a.out, a.seed, cfg);
  out << dataset::table_summary(result.report);
  for (const auto& w : result.report.warnings) out << "warning: " << w << '\n';
  out << "manifest: " << (fs::path(a.out) / "manifest.jsonl").string() << " (" << result.manifest.entries.size()
      << " entries)\n";
  return kExitOk;
}

// ------------------------------------------------------------------ train

struct TrainArgs {
  std::string manifest, arch, checkpoint = "checkpoint.fskw", log, config;
  TrainFlags flags;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  std::string arch_name = a.arch;
  json file = json::object();
  if (!a.config.empty()) {
    file = read_config_file(a.config);
    if (file.contains("architecture")) {
      if (arch_name.empty()) arch_name = file.at("architecture").get<std::string>();
      file.erase("architecture");
    }
  }
  json flags = a.flags.overlay();
  std::string profile = "full";
  if (flags.contains("profile")) profile = flags.at("profile").get<std::string>();
  else if (file.contains("profile")) profile = file.at("profile").get<std::string>();
  flags.erase("profile");
  file.erase("profile");
  // The profile supplies the defaults; file and flags override them.
  trainer::TrainConfig cfg = trainer::profile_named(profile);
  trainer::merge_json(file, cfg);
  trainer::merge_json(flags, cfg);
  if (arch_name.empty()) arch_name = "td-resnet7";
  const auto arch = nets::parse_kind(arch_name);
  cfg.validate();

  const auto manifest_path = resolve_manifest(a.manifest);
  episodes::ManifestEpisodeSource source(dataset::read_manifest(manifest_path));
  const fs::path ckpt_path = a.checkpoint;
  const fs::path log_path = a.log.empty() ? fs::path(ckpt_path.string() + ".log.jsonl") : fs::path(a.log);

  json header = {{"type", "header"}, {"tool", dataset::kToolVersion}, {"architecture", nets::kind_name(arch)},
                 {"seed", cfg.seed},  {"config", cfg},                  {"source", source.describe()}};
  if (log_path.has_parent_path()) fs::create_directories(log_path.parent_path());
  std::ofstream log(log_path);
  if (!log) throw Error(Errc::Io, "cannot write " + log_path.string());
  log << header.dump() << '\n' << std::flush;

  trainer::TrainHooks hooks;
  hooks.on_epoch = [&](const trainer::EpochLog& e) {
    json j = e;
    log << j.dump() << '\n' << std::flush;
    char line[160];
    std::snprintf(line, sizeof line, "epoch %zu/%zu  loss %.4f  train_acc %.4f  val_acc %.4f  lr %.3g  %.0fs\n",
                  e.epoch + 1, cfg.epochs, e.train_loss, e.train_acc, e.val_acc, e.lr, e.wall_time);
    out << line << std::flush;
  };
  const auto result = trainer::train(source, arch, cfg, hooks);
  checkpoint::save_checkpoint(result.best, ckpt_path);
  out << "best epoch " << result.best.epoch + 1 << " val_acc " << result.best.val_accuracy << " -> "
      << ckpt_path.string() << '\n';
  return kExitOk;
}

// ------------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint, manifest, out, episodes_log, sweep, config;
  TrainFlags flags;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const auto ckpt = checkpoint::load_checkpoint(a.checkpoint);
  auto net = checkpoint::instantiate(ckpt);
  trainer::TrainConfig cfg;
  json stored = ckpt.train_config;
  stored.erase("architecture");
  trainer::merge_json(stored, cfg);
  if (!a.config.empty()) {
    json file = read_config_file(a.config);
    file.erase("architecture");
    trainer::merge_json(file, cfg);
  }
  trainer::merge_json(a.flags.overlay(), cfg);
  cfg.validate();

  const auto manifest_path = resolve_manifest(a.manifest);
  episodes::ManifestEpisodeSource source(dataset::read_manifest(manifest_path));
  const auto shots = a.sweep.empty() ? std::vector<std::size_t>{cfg.k_shot} : parse_shots(a.sweep);
  const auto results = trainer::sweep_shots(net, source, cfg, shots);

  std::vector<trainer::ResultRow> rows;
  for (const auto& r : results) rows.push_back({cfg.case_, net.kind(), r});
  json provenance = {{"tool", dataset::kToolVersion},
                     {"phase", "test"},
                     {"seed", cfg.seed},
                     {"eval_config", cfg},
                     {"k_shots", shots},
                     {"source", source.describe()},
                     {"checkpoint",
                      {{"architecture", nets::kind_name(net.kind())},
                       {"epoch", ckpt.epoch},
                       {"val_accuracy", ckpt.val_accuracy},
                       {"train_config", ckpt.train_config}}}};
  std::ostringstream csv;
  trainer::write_results_csv(csv, rows, provenance);
  if (!a.out.empty()) write_text(a.out, csv.str());

  if (!a.episodes_log.empty()) {
    std::ostringstream ep;
    ep << json{{"type", "header"}, {"provenance", provenance}}.dump() << '\n';
    for (const auto& r : results) {
      for (std::size_t i = 0; i < r.per_episode_accuracies.size(); ++i) {
        ep << json{{"k_shot", r.k_shot},
                   {"episode", i},
                   {"accuracy", r.per_episode_accuracies[i]},
                   {"core_accuracy", r.per_episode_core_accuracies[i]}}
                  .dump()
           << '\n';
      }
    }
    write_text(a.episodes_log, ep.str());
  }

  for (const auto& r : results) {
    char line[160];
    std::snprintf(line, sizeof line, "%s %s %zu-way %zu-shot: %.2f +- %.2f (core %.2f, %zu episodes)\n",
                  std::string(trainer::case_name(cfg.case_)).c_str(), std::string(nets::kind_name(net.kind())).c_str(),
                  r.n_way, r.k_shot, 100.0 * r.mean_accuracy, 100.0 * r.ci95_halfwidth, 100.0 * r.core_only_accuracy,
                  r.per_episode_accuracies.size());
    out << line;
  }
  if (a.out.empty()) out << csv.str();
  return kExitOk;
}

// --------------------------------------------------------------- classify

struct ClassifyArgs {
  std::string checkpoint, support, query;
};

features::FeatureMatrix clip_features(const fs::path& path, features::Layout layout) {
  const auto clip = audio::load_wav(path);
  if (clip.samples().size() != audio::kClipSamples) {
    throw Error(Errc::WrongClipLength, path.string() + " has " + std::to_string(clip.samples().size()) +
                                           " samples, expected a one-second clip of " +
                                           std::to_string(audio::kClipSamples));
  }
  auto fm = features::mfcc(clip);
  return layout == features::Layout::TemporalConv ? features::reshape_for_temporal_conv(fm) : fm;
}

int cmd_classify(const ClassifyArgs& a, std::ostream& out) {
  const auto ckpt = checkpoint::load_checkpoint(a.checkpoint);
  auto net = checkpoint::instantiate(ckpt);
  const auto layout = net.spec().input_layout();
  if (!fs::is_directory(a.support)) throw Error(Errc::Io, "support folder not found: " + a.support);

  std::vector<std::string> names;
  std::vector<features::FeatureMatrix> support;
  std::vector<int> labels;
  std::vector<fs::path> dirs;
  for (const auto& d : fs::directory_iterator(a.support)) {
    if (d.is_directory()) dirs.push_back(d.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& dir : dirs) {
    std::vector<fs::path> clips;
    for (const auto& f : fs::directory_iterator(dir)) {
      if (f.is_regular_file() && f.path().extension() == ".wav") clips.push_back(f.path());
    }
    if (clips.empty()) throw Error(Errc::EmptyKeywordFolder, "no .wav clips in support folder " + dir.string());
    std::sort(clips.begin(), clips.end());
    for (const auto& c : clips) {
      support.push_back(clip_features(c, layout));
      labels.push_back(static_cast<int>(names.size()));
    }
    names.push_back(dir.filename().string());
  }
  if (names.size() < 2) throw Error(Errc::InsufficientClasses, "support folder needs at least two keyword subfolders");
  const std::vector<features::FeatureMatrix> query{clip_features(a.query, layout)};

  const auto s = nets::embed(net, std::span<const features::FeatureMatrix>(support), ad::Mode::Eval);
  const auto q = nets::embed(net, std::span<const features::FeatureMatrix>(query), ad::Mode::Eval);
  const auto protos = protonet::compute_prototypes(s.values, labels, names.size());
  const auto log_probs = protonet::episode_log_probs(protonet::squared_euclidean(q.values, protos));

  std::vector<std::pair<double, std::size_t>> ranked;
  for (std::size_t c = 0; c < names.size(); ++c) ranked.emplace_back(std::exp(log_probs.data()[c]), c);
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
  out << "prediction: " << names[ranked.front().second] << '\n';
  for (const auto& [p, c] : ranked) {
    char line[64];
    std::snprintf(line, sizeof line, "  %.6f  ", p);
    out << line << names[c] << '\n';
  }
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Few-shot keyword spotting with prototypical networks", "fskws"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(dataset::kToolVersion));

  const std::string arch_help = "td-resnet7, tc-resnet8, cnn-trad-fpool3 or c64";
  const std::string case_help = "a, b, c-unknown, c-silence or d";
  auto add_train_flags = [&](CLI::App* sub, TrainFlags& f) {
    sub->add_option("--case", f.case_name, case_help);
    sub->add_option("--n-way", f.n_way, "Core keywords per episode");
    sub->add_option("--k-shot", f.k_shot, "Support clips per category");
    f.seed_opt = sub->add_option("--seed", f.seed, "Master seed");
    sub->add_option("--test-episodes", f.test_episodes, "Evaluation episodes");
  };

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Build the few-shot manifest from a Speech Commands tree");
  s->add_option("--input", synth.input, "Speech Commands root (default: $FSKWS_DATA_DIR)");
  s->add_option("--out", synth.out, "Output folder for manifest, report and silence clips")->required();
  s->add_option("--seed", synth.seed, "Master seed");
  s->add_option("--config", synth.config, "JSON file with synthesis settings");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Episodic training; keeps the best validation checkpoint");
  t->add_option("--manifest", train.manifest, "Manifest file (default: $FSKWS_DATA_DIR/manifest.jsonl)");
  t->add_option("--arch", train.arch, arch_help);
  t->add_option("--profile", train.flags.profile, "full or desk");
  t->add_option("--epochs", train.flags.epochs, "Override the profile's epoch count");
  t->add_option("--episodes", train.flags.episodes, "Override training episodes per epoch");
  t->add_option("--lr", train.flags.lr, "Initial learning rate");
  t->add_option("--checkpoint", train.checkpoint, "Checkpoint output path")->capture_default_str();
  t->add_option("--log", train.log, "Training log path (default: <checkpoint>.log.jsonl)");
  t->add_option("--config", train.config, "JSON file with training settings");
  add_train_flags(t, train.flags);

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on test episodes");
  e->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
  e->add_option("--manifest", eval.manifest, "Manifest file (default: $FSKWS_DATA_DIR/manifest.jsonl)");
  e->add_option("--out", eval.out, "Results CSV path (default: standard output)");
  e->add_option("--episodes-log", eval.episodes_log, "Per-episode accuracies as JSON lines");
  e->add_option("--k-shot-sweep", eval.sweep, "Comma-separated support sizes, e.g. 1,2,3,4,5");
  e->add_option("--config", eval.config, "JSON file with evaluation settings");
  add_train_flags(e, eval.flags);

  ClassifyArgs cls;
  auto* c = app.add_subcommand("classify", "Classify one clip against user-provided keyword examples");
  c->add_option("--checkpoint", cls.checkpoint, "Checkpoint file")->required();
  c->add_option("--support", cls.support, "Folder with one subfolder of clips per keyword")->required();
  c->add_option("--query", cls.query, "One-second WAV clip to classify")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& pe) {
    const int code = app.exit(pe, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (s->parsed()) return cmd_synth(synth, out);
    if (t->parsed()) return cmd_train(train, out);
    if (e->parsed()) return cmd_eval(eval, out);
    return cmd_classify(cls, out);
  } catch (const Error& ex) {
    err << "error: " << ex.what() << '\n';
    return ex.code() == Errc::NanLoss ? kExitNumeric : kExitUsage;
  } catch (const fs::filesystem_error& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitUsage;
  }
}

}  // namespace fskws::cli
