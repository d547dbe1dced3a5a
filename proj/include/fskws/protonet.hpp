#pragma once

#include <span>
#include <string>
#include <vector>

#include "fskws/features.hpp"
#include "fskws/nets.hpp"
#include "fskws/ops.hpp"

namespace fskws::protonet {

enum class CategoryKind { Core, Unknown, Silence };

struct EpisodeCategory {
  std::string name;  // keyword, or "_unknown_" / "_silence_"
  CategoryKind kind = CategoryKind::Core;
};

struct LabeledFeatures {
  features::FeatureMatrix features;
  int label = 0;
};

/// Support and query sets of one episode. Labels index `categories`; core
/// and optional categories share the index space.
struct Episode {
  std::vector<EpisodeCategory> categories;
  std::size_t n_core = 0;
  std::size_t k_shot = 0;
  std::size_t n_query = 0;
  std::vector<LabeledFeatures> support;
  std::vector<LabeledFeatures> query;

  std::size_t way_total() const { return categories.size(); }
  /// Throws InsufficientSamples unless every category has exactly k_shot
  /// support and n_query query items.
  void validate() const;
};

template <typename Real>
struct PrototypeSet {
  ad::Tensor<Real> prototypes;  // [way_total, D]
};

template <typename Real>
PrototypeSet<Real> compute_prototypes(const ad::Tensor<Real>& support, std::span<const int> labels,
                                      std::size_t classes) {
  return {ad::class_means(support, labels, classes)};
}

template <typename Real>
ad::Tensor<Real> squared_euclidean(const ad::Tensor<Real>& queries, const PrototypeSet<Real>& protos) {
  return ad::squared_euclidean(queries, protos.prototypes);
}

/// log P(c | q) = -d(q, p_c) - logsumexp_n(-d(q, p_n))
template <typename Real>
ad::Tensor<Real> episode_log_probs(const ad::Tensor<Real>& distances) {
  return ad::log_softmax_rows(ad::scale(distances, Real(-1)));
}

/// Mean negative log-likelihood of the true category over the queries.
template <typename Real>
ad::Tensor<Real> episode_loss(const ad::Tensor<Real>& log_probs, std::span<const int> labels) {
  return ad::nll_loss(log_probs, labels);
}

/// Row-wise argmax; the lowest index wins ties.
template <typename Real>
std::vector<int> classify(const ad::Tensor<Real>& log_probs);

double episode_accuracy(std::span<const int> predictions, std::span<const int> labels);

/// Accuracy over the queries whose true category is a core keyword.
double core_accuracy(std::span<const int> predictions, std::span<const int> labels,
                     std::span<const EpisodeCategory> categories);

template <typename Real>
struct EpisodeOutput {
  ad::Tensor<Real> loss;
  ad::Tensor<Real> log_probs;
  std::vector<int> predictions;
  std::vector<int> labels;
  double accuracy = 0.0;
  double core_accuracy = 0.0;
};

/// Embeds support and query as one batch, builds prototypes and scores the
/// queries. In train mode the loss carries the graph back to the network
/// parameters.
template <typename Real>
EpisodeOutput<Real> run_episode(nets::Network<Real>& net, const Episode& episode, ad::Mode mode);

extern template std::vector<int> classify<float>(const ad::Tensor<float>&);
extern template std::vector<int> classify<double>(const ad::Tensor<double>&);

}  // namespace fskws::protonet
