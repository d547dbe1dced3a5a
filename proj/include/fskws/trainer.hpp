#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "fskws/checkpoint.hpp"
#include "fskws/dataset.hpp"
#include "fskws/episodes.hpp"
#include "fskws/nets.hpp"
#include "json.hpp"

namespace fskws::trainer {

enum class Case { A, B, CUnknown, CSilence, D };

std::string_view case_name(Case c);  // a, b, c-unknown, c-silence, d
Case parse_case(std::string_view s);

struct TrainConfig {
  std::string profile = "full";
  std::size_t epochs = 200;
  std::size_t train_episodes_per_epoch = 200;
  std::size_t val_episodes_per_epoch = 100;
  std::size_t test_episodes = 100;
  double initial_lr = 1e-3;
  std::size_t lr_halving_period_epochs = 20;
  std::size_t train_queries_per_class = 5;
  std::size_t eval_queries_per_class = 15;
  std::size_t n_way = 2;
  std::size_t k_shot = 1;
  Case case_ = Case::A;
  std::uint64_t seed = 0;
  double background_volume = 0.1;
  double mix_probability = 1.0;
  bool mix_test_support = true;

  void validate() const;
};

TrainConfig full_profile();
/// 40 epochs x 100 training episodes, 50 validation episodes per epoch.
TrainConfig desk_profile();
TrainConfig profile_named(std::string_view name);

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Keys absent from `j` keep the values already in `c`; unknown keys throw
/// InvalidConfig.
void merge_json(const nlohmann::json& j, TrainConfig& c);

/// initial_lr * 0.5^floor(epoch / period), epoch counted from 0.
double lr_at(std::size_t epoch, const TrainConfig& cfg);

dataset::EpisodeSpec episode_spec(const TrainConfig& cfg, dataset::Phase phase);

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double lr = 0.0;
  double wall_time = 0.0;  // seconds since training started
};

void to_json(nlohmann::json& j, const EpochLog& e);

struct EpisodeRecord {
  std::size_t epoch = 0;
  std::size_t episode = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct TrainHooks {
  std::function<void(const EpochLog&)> on_epoch;
  std::function<void(const EpisodeRecord&)> on_episode;
};

struct TrainResult {
  checkpoint::Checkpoint best;
  std::vector<EpochLog> log;
};

/// Episodic training with validation-based model selection.
TrainResult train(episodes::EpisodeSource& source, nets::ArchitectureKind arch, const TrainConfig& cfg,
                  const TrainHooks& hooks = {});

struct EvalResult {
  double mean_accuracy = 0.0;
  double ci95_halfwidth = 0.0;
  double core_only_accuracy = 0.0;
  std::vector<double> per_episode_accuracies;
  std::vector<double> per_episode_core_accuracies;
  std::size_t n_way = 0;
  std::size_t k_shot = 0;
};

/// Mean and 1.96 * population standard deviation / sqrt(n).
EvalResult summarize(std::vector<double> accuracies, std::vector<double> core_accuracies);

/// cfg.test_episodes episodes of `phase` in eval mode with
/// cfg.eval_queries_per_class queries per category.
EvalResult evaluate(nets::Network<float>& net, episodes::EpisodeSource& source, const TrainConfig& cfg,
                    dataset::Phase phase = dataset::Phase::Test);

/// evaluate() once per support size; each row restarts the evaluation
/// streams, so the K row equals a direct evaluation with k_shot = K.
std::vector<EvalResult> sweep_shots(nets::Network<float>& net, episodes::EpisodeSource& source,
                                    const TrainConfig& cfg, const std::vector<std::size_t>& shots);

struct ResultRow {
  Case case_ = Case::A;
  nets::ArchitectureKind architecture = nets::ArchitectureKind::TdResNet7;
  EvalResult result;
};

/// Comment lines carrying `provenance`, then the header and one row per
/// result.
void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows, const nlohmann::json& provenance);

}  // namespace fskws::trainer
