#include "fskws/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "fskws/error.hpp"
#include "fskws/optim.hpp"
#include "fskws/protonet.hpp"

namespace fskws::trainer {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, 5> kCaseNames{"a", "b", "c-unknown", "c-silence", "d"};

struct CaseFlags {
  bool unknown = false;
  bool silence = false;
  bool background = false;
};

CaseFlags flags_of(Case c) {
  switch (c) {
    case Case::A: return {};
    case Case::B: return {false, false, true};
    case Case::CUnknown: return {true, false, false};
    case Case::CSilence: return {false, true, false};
    case Case::D: return {true, true, true};
  }
  return {};
}

std::string stream_name(std::string_view base, dataset::Phase phase) {
  return phase == dataset::Phase::Test ? std::string(base) : std::string(base) + ":" + std::string(dataset::phase_name(phase));
}

}  // namespace

std::string_view case_name(Case c) { return kCaseNames[static_cast<std::size_t>(c)]; }

Case parse_case(std::string_view s) {
  for (std::size_t i = 0; i < kCaseNames.size(); ++i) {
    if (kCaseNames[i] == s) return static_cast<Case>(i);
  }
  throw Error(Errc::InvalidConfig, "unknown case '" + std::string(s) + "' (valid: a, b, c-unknown, c-silence, d)");
}

void TrainConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw Error(Errc::InvalidConfig, std::string(name) + " must be positive");
  };
  positive(epochs, "epochs");
  positive(train_episodes_per_epoch, "train_episodes_per_epoch");
  positive(val_episodes_per_epoch, "val_episodes_per_epoch");
  positive(test_episodes, "test_episodes");
  positive(lr_halving_period_epochs, "lr_halving_period_epochs");
  positive(train_queries_per_class, "train_queries_per_class");
  positive(eval_queries_per_class, "eval_queries_per_class");
  positive(k_shot, "k_shot");
  if (n_way < 2) throw Error(Errc::InvalidConfig, "n_way must be at least 2");
  if (!(initial_lr > 0.0) || !std::isfinite(initial_lr)) throw Error(Errc::InvalidConfig, "initial_lr must be positive");
}

TrainConfig full_profile() { return TrainConfig{}; }

TrainConfig desk_profile() {
  TrainConfig c;
  c.profile = "desk";
  c.epochs = 40;
  c.train_episodes_per_epoch = 100;
  c.val_episodes_per_epoch = 50;
  return c;
}

TrainConfig profile_named(std::string_view name) {
  if (name == "full") return full_profile();
  if (name == "desk") return desk_profile();
  throw Error(Errc::InvalidConfig, "unknown profile '" + std::string(name) + "' (valid: full, desk)");
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"profile", c.profile},
           {"epochs", c.epochs},
           {"train_episodes_per_epoch", c.train_episodes_per_epoch},
           {"val_episodes_per_epoch", c.val_episodes_per_epoch},
           {"test_episodes", c.test_episodes},
           {"initial_lr", c.initial_lr},
           {"lr_halving_period_epochs", c.lr_halving_period_epochs},
           {"train_queries_per_class", c.train_queries_per_class},
           {"eval_queries_per_class", c.eval_queries_per_class},
           {"n_way", c.n_way},
           {"k_shot", c.k_shot},
           {"case", case_name(c.case_)},
           {"seed", c.seed},
           {"background_volume", c.background_volume},
           {"mix_probability", c.mix_probability},
           {"mix_test_support", c.mix_test_support}};
}

void merge_json(const json& j, TrainConfig& c) {
  if (!j.is_object()) throw Error(Errc::InvalidConfig, "training config must be an object");
  try {
    if (j.contains("profile")) {
      const auto p = profile_named(j.at("profile").get<std::string>());
      c.profile = p.profile;
      c.epochs = p.epochs;
      c.train_episodes_per_epoch = p.train_episodes_per_epoch;
      c.val_episodes_per_epoch = p.val_episodes_per_epoch;
    }
    for (const auto& [key, v] : j.items()) {
      if (key == "profile") continue;
      else if (key == "epochs") c.epochs = v;
      else if (key == "train_episodes_per_epoch") c.train_episodes_per_epoch = v;
      else if (key == "val_episodes_per_epoch") c.val_episodes_per_epoch = v;
      else if (key == "test_episodes") c.test_episodes = v;
      else if (key == "initial_lr") c.initial_lr = v;
      else if (key == "lr_halving_period_epochs") c.lr_halving_period_epochs = v;
      else if (key == "train_queries_per_class") c.train_queries_per_class = v;
      else if (key == "eval_queries_per_class") c.eval_queries_per_class = v;
      else if (key == "n_way") c.n_way = v;
      else if (key == "k_shot") c.k_shot = v;
      else if (key == "case") c.case_ = parse_case(v.get<std::string>());
      else if (key == "seed") c.seed = v;
      else if (key == "background_volume") c.background_volume = v;
      else if (key == "mix_probability") c.mix_probability = v;
      else if (key == "mix_test_support") c.mix_test_support = v;
      else throw Error(Errc::InvalidConfig, "unknown training config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidConfig, std::string("bad training config value: ") + e.what());
  }
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  return cfg.initial_lr * std::pow(0.5, static_cast<double>(epoch / cfg.lr_halving_period_epochs));
}

dataset::EpisodeSpec episode_spec(const TrainConfig& cfg, dataset::Phase phase) {
  const auto f = flags_of(cfg.case_);
  dataset::EpisodeSpec s;
  s.n_way = cfg.n_way;
  s.k_shot = cfg.k_shot;
  s.n_query = phase == dataset::Phase::Train ? cfg.train_queries_per_class : cfg.eval_queries_per_class;
  s.include_unknown = f.unknown;
  s.include_silence = f.silence;
  s.background = f.background;
  s.background_volume = cfg.background_volume;
  s.mix_probability = cfg.mix_probability;
  s.mix_support = phase == dataset::Phase::Train || cfg.mix_test_support;
  s.phase = phase;
  return s;
}

void to_json(json& j, const EpochLog& e) {
  j = json{{"epoch", e.epoch},       {"train_loss", e.train_loss}, {"train_acc", e.train_acc},
           {"val_acc", e.val_acc},   {"lr", e.lr},                 {"wall_time", e.wall_time}};
}

TrainResult train(episodes::EpisodeSource& source, nets::ArchitectureKind arch, const TrainConfig& cfg,
                  const TrainHooks& hooks) {
  cfg.validate();
  nets::Network<float> net(nets::spec_for(arch), cfg.seed);
  const auto layout = net.spec().input_layout();
  const auto train_spec = episode_spec(cfg, dataset::Phase::Train);
  const auto val_spec = episode_spec(cfg, dataset::Phase::Val);

  for (const auto* spec : {&train_spec, &val_spec}) {
    Rng probe(cfg.seed, "preflight"), probe_mix(cfg.seed, "preflight-mix");
    try {
      source.draw(*spec, probe, probe_mix, layout);
    } catch (const Error& e) {
      if (e.code() != Errc::InsufficientClasses && e.code() != Errc::InsufficientSamples) throw;
      throw Error(Errc::InsufficientData, std::string(dataset::phase_name(spec->phase)) + " phase: " + e.what());
    }
  }

  const auto start = std::chrono::steady_clock::now();
  Rng episode_rng(cfg.seed, "train-episodes");
  Rng mix_rng(cfg.seed, "train-mix");
  TrainResult result;
  bool have_best = false;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    double loss_sum = 0.0, acc_sum = 0.0;
    for (std::size_t e = 0; e < cfg.train_episodes_per_epoch; ++e) {
      const auto ep = source.draw(train_spec, episode_rng, mix_rng, layout);
      auto out = protonet::run_episode(net, ep, ad::Mode::Train);
      const double loss = out.loss.item();
      if (!std::isfinite(loss)) {
        std::string cats;
        for (const auto& c : ep.categories) cats += (cats.empty() ? "" : ",") + c.name;
        throw Error(Errc::NanLoss, "non-finite loss at epoch " + std::to_string(epoch) + " episode " +
                                       std::to_string(e) + " (lr " + nlohmann::json(lr).dump() + ", categories " + cats + ")");
      }
      ad::backward(out.loss);
      ad::adam_step(net.parameters(), ad::AdamOptions{.lr = lr});
      loss_sum += loss;
      acc_sum += out.accuracy;
      if (hooks.on_episode) hooks.on_episode({epoch, e, loss, out.accuracy});
    }

    // Validation replays the same episodes every epoch.
    Rng val_rng(cfg.seed, "val-episodes");
    Rng val_mix(cfg.seed, "val-mix");
    double val_sum = 0.0;
    for (std::size_t e = 0; e < cfg.val_episodes_per_epoch; ++e) {
      const auto ep = source.draw(val_spec, val_rng, val_mix, layout);
      val_sum += protonet::run_episode(net, ep, ad::Mode::Eval).accuracy;
    }

    EpochLog rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(cfg.train_episodes_per_epoch);
    rec.train_acc = acc_sum / static_cast<double>(cfg.train_episodes_per_epoch);
    rec.val_acc = val_sum / static_cast<double>(cfg.val_episodes_per_epoch);
    rec.lr = lr;
    rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);

    if (!have_best || rec.val_acc > result.best.val_accuracy) {
      result.best = checkpoint::capture(net);
      result.best.train_config = cfg;
      result.best.train_config["architecture"] = nets::kind_name(arch);
      result.best.epoch = epoch;
      result.best.val_accuracy = rec.val_acc;
      result.best.metrics = {{"train_loss", rec.train_loss}, {"train_acc", rec.train_acc}, {"val_acc", rec.val_acc},
                             {"lr", rec.lr}};
      have_best = true;
    }
  }
  return result;
}

EvalResult summarize(std::vector<double> accuracies, std::vector<double> core_accuracies) {
  EvalResult r;
  const double n = static_cast<double>(accuracies.size());
  if (accuracies.empty()) throw Error(Errc::InsufficientData, "no evaluation episodes");
  double sum = 0.0;
  for (double a : accuracies) sum += a;
  r.mean_accuracy = sum / n;
  double ss = 0.0;
  for (double a : accuracies) ss += (a - r.mean_accuracy) * (a - r.mean_accuracy);
  r.ci95_halfwidth = 1.96 * std::sqrt(ss / n) / std::sqrt(n);
  double core = 0.0;
  for (double a : core_accuracies) core += a;
  r.core_only_accuracy = core_accuracies.empty() ? 0.0 : core / static_cast<double>(core_accuracies.size());
  r.per_episode_accuracies = std::move(accuracies);
  r.per_episode_core_accuracies = std::move(core_accuracies);
  return r;
}

EvalResult evaluate(nets::Network<float>& net, episodes::EpisodeSource& source, const TrainConfig& cfg,
                    dataset::Phase phase) {
  cfg.validate();
  const auto spec = episode_spec(cfg, phase);
  const auto layout = net.spec().input_layout();
  Rng episode_rng(cfg.seed, stream_name("eval-episodes", phase));
  Rng mix_rng(cfg.seed, stream_name("eval-mix", phase));
  std::vector<double> acc, core;
  for (std::size_t e = 0; e < cfg.test_episodes; ++e) {
    protonet::Episode ep;
    try {
      ep = source.draw(spec, episode_rng, mix_rng, layout);
    } catch (const Error& err) {
      if (err.code() != Errc::InsufficientClasses && err.code() != Errc::InsufficientSamples) throw;
      throw Error(Errc::InsufficientData, std::string(dataset::phase_name(phase)) + " phase: " + err.what());
    }
    const auto out = protonet::run_episode(net, ep, ad::Mode::Eval);
    acc.push_back(out.accuracy);
    core.push_back(out.core_accuracy);
  }
  auto r = summarize(std::move(acc), std::move(core));
  r.n_way = cfg.n_way;
  r.k_shot = cfg.k_shot;
  return r;
}

std::vector<EvalResult> sweep_shots(nets::Network<float>& net, episodes::EpisodeSource& source,
                                    const TrainConfig& cfg, const std::vector<std::size_t>& shots) {
  std::vector<EvalResult> out;
  for (std::size_t k : shots) {
    TrainConfig c = cfg;
    c.k_shot = k;
    out.push_back(evaluate(net, source, c));
  }
  return out;
}

void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows, const json& provenance) {
  out << "# fskws results\n";
  out << "# provenance: " << provenance.dump() << '\n';
  out << "case,architecture,n_way,k_shot,mean_acc,ci95,core_only_acc,episodes\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%s,%zu,%zu,%.12f,%.12f,%.12f,%zu\n", std::string(case_name(r.case_)).c_str(),
                  std::string(nets::kind_name(r.architecture)).c_str(), r.result.n_way, r.result.k_shot,
                  r.result.mean_accuracy, r.result.ci95_halfwidth, r.result.core_only_accuracy,
                  r.result.per_episode_accuracies.size());
    out << buf;
  }
}

}  // namespace fskws::trainer
