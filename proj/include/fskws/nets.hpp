#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fskws/features.hpp"
#include "fskws/ops.hpp"
#include "fskws/optim.hpp"
#include "json.hpp"

namespace fskws::nets {

enum class ArchitectureKind { TdResNet7, TcResNet8, CnnTradFpool3, C64 };

std::string_view kind_name(ArchitectureKind kind);
/// Accepts the CLI spellings: td-resnet7, tc-resnet8, cnn-trad-fpool3, c64.
ArchitectureKind parse_kind(std::string_view name);
std::vector<std::string_view> kind_names();

enum class LayerKind { Conv1d, Conv2d, BatchNorm, ReLU, MaxPool2d, Linear, Flatten, GlobalAvgPool, Residual };

/// One layer of an embedding network. Conv1d uses index 0 of the
/// kernel/stride/padding pairs; Conv2d and MaxPool2d use (height, width).
struct LayerSpec {
  LayerKind kind = LayerKind::ReLU;
  std::size_t in_channels = 0;   // conv input channels / linear input features
  std::size_t out_channels = 0;  // conv output channels / linear outputs / batch-norm channels
  std::array<std::size_t, 2> kernel{1, 1};
  std::array<std::size_t, 2> stride{1, 1};
  std::array<std::size_t, 2> padding{0, 0};
  std::size_t dilation = 1;
  bool bias = false;
  // Residual only: output = relu(main(x) + shortcut(x)); an empty shortcut
  // is the identity.
  std::vector<LayerSpec> main;
  std::vector<LayerSpec> shortcut;
};

struct ArchitectureSpec {
  ArchitectureKind kind = ArchitectureKind::TdResNet7;
  ad::Shape input_shape;  // per sample, without the batch axis
  std::size_t embedding_dim = 0;
  std::vector<LayerSpec> layers;
  std::string notes;

  features::Layout input_layout() const;
};

void to_json(nlohmann::json& j, const LayerSpec& layer);
void from_json(const nlohmann::json& j, LayerSpec& layer);
void to_json(nlohmann::json& j, const ArchitectureSpec& spec);
void from_json(const nlohmann::json& j, ArchitectureSpec& spec);

ArchitectureSpec td_resnet7_spec();
ArchitectureSpec tc_resnet8_spec();
ArchitectureSpec cnn_trad_fpool3_spec();
ArchitectureSpec c64_spec();
ArchitectureSpec spec_for(ArchitectureKind kind);

/// Output shape after each top-level layer for a batch of `batch` samples.
/// Throws ShapeMismatch when a layer does not accept its predecessor's
/// output.
std::vector<ad::Shape> trace_shapes(const ArchitectureSpec& spec, std::size_t batch = 1);

/// Temporal receptive field (in input frames) of the final pre-pooling
/// activation, following the widest branch of every residual block.
std::size_t receptive_field(const ArchitectureSpec& spec);

template <typename Real>
class Network {
 public:
  Network(ArchitectureSpec spec, std::uint64_t seed);

  const ArchitectureSpec& spec() const { return spec_; }
  ArchitectureKind kind() const { return spec_.kind; }
  std::size_t embedding_dim() const { return spec_.embedding_dim; }

  ad::ParameterSet<Real>& parameters() { return params_; }
  const ad::ParameterSet<Real>& parameters() const { return params_; }
  std::vector<ad::BatchNormState<Real>>& batch_norm_states() { return bn_states_; }
  const std::vector<ad::BatchNormState<Real>>& batch_norm_states() const { return bn_states_; }
  /// Layer path of each batch-norm state, e.g. "l3.main.l1".
  const std::vector<std::string>& batch_norm_names() const { return bn_names_; }

  /// x: [B, ...input_shape] -> [B, embedding_dim].
  ad::Tensor<Real> forward(const ad::Tensor<Real>& x, ad::Mode mode);

  std::size_t param_count() const { return params_.element_count(); }

 private:
  struct Compiled {
    LayerSpec layer;  // children stripped
    int weight = -1;
    int bias = -1;
    int gamma = -1;
    int beta = -1;
    int bn_state = -1;
    std::vector<Compiled> main;
    std::vector<Compiled> shortcut;
  };

  std::vector<Compiled> compile(const std::vector<LayerSpec>& layers, const std::string& prefix, Rng& rng);
  ad::Tensor<Real> run(const std::vector<Compiled>& layers, ad::Tensor<Real> x, ad::Mode mode);

  ArchitectureSpec spec_;
  ad::ParameterSet<Real> params_;
  std::vector<ad::BatchNormState<Real>> bn_states_;
  std::vector<std::string> bn_names_;
  std::vector<Compiled> program_;
};

template <typename Real>
Network<Real> build_td_resnet7(std::uint64_t seed) {
  return Network<Real>(td_resnet7_spec(), seed);
}
template <typename Real>
Network<Real> build_tc_resnet8(std::uint64_t seed) {
  return Network<Real>(tc_resnet8_spec(), seed);
}
template <typename Real>
Network<Real> build_cnn_trad_fpool3(std::uint64_t seed) {
  return Network<Real>(cnn_trad_fpool3_spec(), seed);
}
template <typename Real>
Network<Real> build_c64(std::uint64_t seed) {
  return Network<Real>(c64_spec(), seed);
}

template <typename Real>
struct EmbeddingBatch {
  ad::Tensor<Real> values;  // [B, embedding_dim]
  ArchitectureKind kind;
};

/// Stacks feature matrices into the network's input layout. Throws
/// LayoutMismatch when a matrix is not in `layout`.
template <typename Real>
ad::Tensor<Real> make_input_batch(std::span<const features::FeatureMatrix> batch, const ArchitectureSpec& spec);

/// Batched forward pass. Train mode updates batch-norm running statistics
/// and records the backward graph; eval mode does neither.
template <typename Real>
EmbeddingBatch<Real> embed(Network<Real>& net, std::span<const features::FeatureMatrix> batch, ad::Mode mode);

template <typename Real>
std::size_t param_count(const Network<Real>& net) {
  return net.param_count();
}

extern template class Network<float>;
extern template class Network<double>;

}  // namespace fskws::nets
