#include "fskws/protonet.hpp"

#include <optional>

#include "fskws/error.hpp"

namespace fskws::protonet {

void Episode::validate() const {
  const std::size_t way = way_total();
  if (way == 0) throw Error(Errc::InsufficientClasses, "episode has no categories");
  std::vector<std::size_t> s(way, 0), q(way, 0);
  auto count = [way](const std::vector<LabeledFeatures>& items, std::vector<std::size_t>& n) {
    for (const auto& item : items) {
      if (item.label < 0 || static_cast<std::size_t>(item.label) >= way) {
        throw Error(Errc::LabelOutOfRange, "episode label " + std::to_string(item.label));
      }
      ++n[static_cast<std::size_t>(item.label)];
    }
  };
  count(support, s);
  count(query, q);
  for (std::size_t c = 0; c < way; ++c) {
    if (s[c] != k_shot || q[c] != n_query) {
      throw Error(Errc::InsufficientSamples, "category " + categories[c].name + " has " + std::to_string(s[c]) +
                                                 " support / " + std::to_string(q[c]) + " query items, expected " +
                                                 std::to_string(k_shot) + " / " + std::to_string(n_query));
    }
  }
}

template <typename Real>
std::vector<int> classify(const ad::Tensor<Real>& log_probs) {
  const std::size_t M = log_probs.dim(0), C = log_probs.dim(1);
  const auto v = log_probs.data();
  std::vector<int> out(M, 0);
  for (std::size_t m = 0; m < M; ++m) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c) {
      if (v[m * C + c] > v[m * C + best]) best = c;
    }
    out[m] = static_cast<int>(best);
  }
  return out;
}

double episode_accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) throw Error(Errc::ShapeMismatch, "prediction/label count mismatch");
  if (labels.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predictions[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

double core_accuracy(std::span<const int> predictions, std::span<const int> labels,
                     std::span<const EpisodeCategory> categories) {
  if (predictions.size() != labels.size()) throw Error(Errc::ShapeMismatch, "prediction/label count mismatch");
  std::size_t hit = 0, total = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (categories[static_cast<std::size_t>(labels[i])].kind != CategoryKind::Core) continue;
    ++total;
    hit += predictions[i] == labels[i];
  }
  return total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
}

template <typename Real>
EpisodeOutput<Real> run_episode(nets::Network<Real>& net, const Episode& episode, ad::Mode mode) {
  std::vector<features::FeatureMatrix> batch;
  std::vector<int> support_labels, query_labels;
  batch.reserve(episode.support.size() + episode.query.size());
  for (const auto& s : episode.support) {
    batch.push_back(s.features);
    support_labels.push_back(s.label);
  }
  for (const auto& q : episode.query) {
    batch.push_back(q.features);
    query_labels.push_back(q.label);
  }

  std::optional<ad::NoGradGuard> guard;
  if (mode == ad::Mode::Eval) guard.emplace();

  const auto emb = nets::embed(net, batch, mode).values;
  const std::size_t ns = episode.support.size();
  const auto protos = compute_prototypes(ad::slice_rows(emb, 0, ns), support_labels, episode.way_total());
  const auto dist = squared_euclidean(ad::slice_rows(emb, ns, batch.size()), protos);

  EpisodeOutput<Real> out;
  out.log_probs = episode_log_probs(dist);
  out.loss = episode_loss(out.log_probs, query_labels);
  out.predictions = classify(out.log_probs);
  out.accuracy = episode_accuracy(out.predictions, query_labels);
  out.core_accuracy = core_accuracy(out.predictions, query_labels, episode.categories);
  out.labels = std::move(query_labels);
  return out;
}

template std::vector<int> classify<float>(const ad::Tensor<float>&);
template std::vector<int> classify<double>(const ad::Tensor<double>&);
template EpisodeOutput<float> run_episode<float>(nets::Network<float>&, const Episode&, ad::Mode);
template EpisodeOutput<double> run_episode<double>(nets::Network<double>&, const Episode&, ad::Mode);

}  // namespace fskws::protonet
