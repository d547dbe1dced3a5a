#include "fskws/nets.hpp"

#include <cmath>

#include "fskws/error.hpp"

namespace fskws::nets {

namespace {

using ad::Shape;

constexpr std::array<std::pair<ArchitectureKind, std::string_view>, 4> kKindNames{{
    {ArchitectureKind::TdResNet7, "td-resnet7"},
    {ArchitectureKind::TcResNet8, "tc-resnet8"},
    {ArchitectureKind::CnnTradFpool3, "cnn-trad-fpool3"},
    {ArchitectureKind::C64, "c64"},
}};

constexpr std::array<std::pair<LayerKind, std::string_view>, 9> kLayerNames{{
    {LayerKind::Conv1d, "conv1d"},
    {LayerKind::Conv2d, "conv2d"},
    {LayerKind::BatchNorm, "batch_norm"},
    {LayerKind::ReLU, "relu"},
    {LayerKind::MaxPool2d, "max_pool2d"},
    {LayerKind::Linear, "linear"},
    {LayerKind::Flatten, "flatten"},
    {LayerKind::GlobalAvgPool, "global_avg_pool"},
    {LayerKind::Residual, "residual"},
}};

LayerSpec conv1d(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, std::size_t dilation,
                 std::size_t padding) {
  LayerSpec l;
  l.kind = LayerKind::Conv1d;
  l.in_channels = in;
  l.out_channels = out;
  l.kernel = {k, 1};
  l.stride = {stride, 1};
  l.padding = {padding, 0};
  l.dilation = dilation;
  return l;
}

LayerSpec conv2d(std::size_t in, std::size_t out, std::array<std::size_t, 2> k, std::array<std::size_t, 2> pad,
                 bool bias) {
  LayerSpec l;
  l.kind = LayerKind::Conv2d;
  l.in_channels = in;
  l.out_channels = out;
  l.kernel = k;
  l.padding = pad;
  l.bias = bias;
  return l;
}

LayerSpec batch_norm(std::size_t channels) {
  LayerSpec l;
  l.kind = LayerKind::BatchNorm;
  l.in_channels = channels;
  l.out_channels = channels;
  return l;
}

LayerSpec simple(LayerKind kind) {
  LayerSpec l;
  l.kind = kind;
  return l;
}

LayerSpec max_pool(std::array<std::size_t, 2> k) {
  LayerSpec l;
  l.kind = LayerKind::MaxPool2d;
  l.kernel = k;
  l.stride = k;
  return l;
}

LayerSpec linear(std::size_t in, std::size_t out) {
  LayerSpec l;
  l.kind = LayerKind::Linear;
  l.in_channels = in;
  l.out_channels = out;
  l.bias = true;
  return l;
}

/// Two k-tap temporal convs with batch norm; 1x1 conv + BN shortcut when
/// the channel count or stride changes.
LayerSpec temporal_block(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, std::size_t dilation) {
  const std::size_t same = dilation * (k - 1) / 2;
  LayerSpec block = simple(LayerKind::Residual);
  block.main = {conv1d(in, out, k, stride, dilation, same), batch_norm(out), simple(LayerKind::ReLU),
                conv1d(out, out, k, 1, dilation, same), batch_norm(out)};
  if (in != out || stride != 1) block.shortcut = {conv1d(in, out, 1, stride, 1, 0), batch_norm(out)};
  return block;
}

std::vector<LayerSpec> temporal_stem() {
  return {conv1d(features::kCoeffs, 16, 3, 1, 1, 1), batch_norm(16), simple(LayerKind::ReLU)};
}

[[noreturn]] void shape_error(const LayerSpec& l, const Shape& in, const std::string& why) {
  std::string name = "layer";
  for (const auto& [k, n] : kLayerNames) {
    if (k == l.kind) name = std::string(n);
  }
  throw Error(Errc::ShapeMismatch, name + " cannot take input " + ad::to_string(in) + ": " + why);
}

Shape infer(const LayerSpec& l, const Shape& in);

Shape infer_chain(const std::vector<LayerSpec>& layers, Shape s) {
  for (const auto& l : layers) s = infer(l, s);
  return s;
}

Shape infer(const LayerSpec& l, const Shape& in) {
  switch (l.kind) {
    case LayerKind::Conv1d: {
      if (in.size() != 3 || in[1] != l.in_channels) shape_error(l, in, "expects [B, " + std::to_string(l.in_channels) + ", L]");
      return {in[0], l.out_channels, ad::conv_output_length(in[2], l.kernel[0], l.stride[0], l.dilation, l.padding[0])};
    }
    case LayerKind::Conv2d: {
      if (in.size() != 4 || in[1] != l.in_channels) shape_error(l, in, "expects [B, " + std::to_string(l.in_channels) + ", H, W]");
      return {in[0], l.out_channels, ad::conv_output_length(in[2], l.kernel[0], l.stride[0], 1, l.padding[0]),
              ad::conv_output_length(in[3], l.kernel[1], l.stride[1], 1, l.padding[1])};
    }
    case LayerKind::BatchNorm:
      if (in.size() < 2 || in[1] != l.out_channels) shape_error(l, in, "channel count mismatch");
      return in;
    case LayerKind::ReLU:
      return in;
    case LayerKind::MaxPool2d:
      if (in.size() != 4) shape_error(l, in, "expects [B, C, H, W]");
      return {in[0], in[1], ad::conv_output_length(in[2], l.kernel[0], l.stride[0], 1, 0),
              ad::conv_output_length(in[3], l.kernel[1], l.stride[1], 1, 0)};
    case LayerKind::Linear:
      if (in.size() != 2 || in[1] != l.in_channels) shape_error(l, in, "expects [B, " + std::to_string(l.in_channels) + "]");
      return {in[0], l.out_channels};
    case LayerKind::Flatten: {
      std::size_t rest = 1;
      for (std::size_t i = 1; i < in.size(); ++i) rest *= in[i];
      return {in[0], rest};
    }
    case LayerKind::GlobalAvgPool:
      if (in.size() < 3) shape_error(l, in, "expects [B, C, ...]");
      return {in[0], in[1]};
    case LayerKind::Residual: {
      const Shape main = infer_chain(l.main, in);
      const Shape skip = infer_chain(l.shortcut, in);
      if (main != skip) shape_error(l, in, "branches disagree: " + ad::to_string(main) + " vs " + ad::to_string(skip));
      return main;
    }
  }
  shape_error(l, in, "unknown layer");
}

void receptive(const std::vector<LayerSpec>& layers, std::size_t& rf, std::size_t& jump) {
  for (const auto& l : layers) {
    switch (l.kind) {
      case LayerKind::Conv1d:
        rf += (l.kernel[0] - 1) * l.dilation * jump;
        jump *= l.stride[0];
        break;
      case LayerKind::Conv2d:
      case LayerKind::MaxPool2d:
        rf += (l.kernel[0] - 1) * jump;
        jump *= l.stride[0];
        break;
      case LayerKind::Residual: {
        std::size_t rf_main = rf, jump_main = jump, rf_skip = rf, jump_skip = jump;
        receptive(l.main, rf_main, jump_main);
        receptive(l.shortcut, rf_skip, jump_skip);
        rf = std::max(rf_main, rf_skip);
        jump = jump_main;
        break;
      }
      default:
        break;
    }
  }
}

std::size_t fan_in(const LayerSpec& l) {
  switch (l.kind) {
    case LayerKind::Conv1d: return l.in_channels * l.kernel[0];
    case LayerKind::Conv2d: return l.in_channels * l.kernel[0] * l.kernel[1];
    case LayerKind::Linear: return l.in_channels;
    default: return 1;
  }
}

}  // namespace

std::string_view kind_name(ArchitectureKind kind) {
  for (const auto& [k, n] : kKindNames) {
    if (k == kind) return n;
  }
  return "unknown";
}

ArchitectureKind parse_kind(std::string_view name) {
  for (const auto& [k, n] : kKindNames) {
    if (n == name) return k;
  }
  std::string valid;
  for (const auto& [k, n] : kKindNames) valid += (valid.empty() ? "" : ", ") + std::string(n);
  throw Error(Errc::InvalidConfig, "unknown architecture '" + std::string(name) + "' (valid: " + valid + ")");
}

std::vector<std::string_view> kind_names() {
  std::vector<std::string_view> out;
  for (const auto& [k, n] : kKindNames) out.push_back(n);
  return out;
}

features::Layout ArchitectureSpec::input_layout() const {
  return input_shape.size() == 2 ? features::Layout::TemporalConv : features::Layout::FrameMajor;
}

ArchitectureSpec td_resnet7_spec() {
  ArchitectureSpec spec;
  spec.kind = ArchitectureKind::TdResNet7;
  spec.input_shape = {features::kCoeffs, features::kFrames};
  spec.layers = temporal_stem();
  const std::size_t widths[] = {16, 24, 32, 48};
  const std::size_t dilations[] = {1, 2, 4};
  for (std::size_t b = 0; b < 3; ++b) spec.layers.push_back(temporal_block(widths[b], widths[b + 1], 7, 1, dilations[b]));
  spec.layers.push_back(simple(LayerKind::GlobalAvgPool));
  spec.embedding_dim = 48;
  spec.notes = "stem k3 40->16; blocks k7 stride 1 dilation 1/2/4, widths 24/32/48; same padding; GAP";
  return spec;
}

ArchitectureSpec tc_resnet8_spec() {
  ArchitectureSpec spec;
  spec.kind = ArchitectureKind::TcResNet8;
  spec.input_shape = {features::kCoeffs, features::kFrames};
  spec.layers = temporal_stem();
  const std::size_t widths[] = {16, 24, 32, 48};
  for (std::size_t b = 0; b < 3; ++b) spec.layers.push_back(temporal_block(widths[b], widths[b + 1], 9, 2, 1));
  spec.layers.push_back(simple(LayerKind::GlobalAvgPool));
  spec.embedding_dim = 48;
  spec.notes = "stem k3 40->16; blocks k9 first conv stride 2, widths 24/32/48; GAP";
  return spec;
}

ArchitectureSpec cnn_trad_fpool3_spec() {
  ArchitectureSpec spec;
  spec.kind = ArchitectureKind::CnnTradFpool3;
  spec.input_shape = {1, features::kFrames, features::kCoeffs};
  spec.layers = {conv2d(1, 64, {20, 8}, {0, 0}, true),
                 simple(LayerKind::ReLU),
                 max_pool({1, 3}),
                 conv2d(64, 64, {10, 4}, {0, 0}, true),
                 simple(LayerKind::ReLU),
                 simple(LayerKind::Flatten),
                 linear(64 * 21 * 8, 32),
                 linear(32, 128),
                 simple(LayerKind::ReLU)};
  spec.embedding_dim = 128;
  spec.notes = "conv 20x8x64, freq max-pool 3, conv 10x4x64, low-rank linear 32, dense 128 (softmax removed)";
  return spec;
}

ArchitectureSpec c64_spec() {
  ArchitectureSpec spec;
  spec.kind = ArchitectureKind::C64;
  spec.input_shape = {1, features::kFrames, features::kCoeffs};
  std::size_t in = 1;
  for (int b = 0; b < 4; ++b) {
    spec.layers.push_back(conv2d(in, 64, {3, 3}, {1, 1}, true));
    spec.layers.push_back(batch_norm(64));
    spec.layers.push_back(simple(LayerKind::ReLU));
    spec.layers.push_back(max_pool({2, 2}));
    in = 64;
  }
  spec.layers.push_back(simple(LayerKind::Flatten));
  spec.embedding_dim = 384;
  spec.notes = "4 x [conv 3x3x64 same, BN, ReLU, max-pool 2x2] on 49x40, flatten";
  return spec;
}

ArchitectureSpec spec_for(ArchitectureKind kind) {
  switch (kind) {
    case ArchitectureKind::TdResNet7: return td_resnet7_spec();
    case ArchitectureKind::TcResNet8: return tc_resnet8_spec();
    case ArchitectureKind::CnnTradFpool3: return cnn_trad_fpool3_spec();
    case ArchitectureKind::C64: return c64_spec();
  }
  throw Error(Errc::InvalidConfig, "unknown architecture kind");
}

std::vector<Shape> trace_shapes(const ArchitectureSpec& spec, std::size_t batch) {
  Shape s{batch};
  s.insert(s.end(), spec.input_shape.begin(), spec.input_shape.end());
  std::vector<Shape> out;
  for (const auto& l : spec.layers) {
    s = infer(l, s);
    out.push_back(s);
  }
  if (out.empty() || out.back() != Shape{batch, spec.embedding_dim}) {
    throw Error(Errc::ShapeMismatch, "final layer output " + (out.empty() ? std::string("[]") : ad::to_string(out.back())) +
                                         " does not match embedding_dim " + std::to_string(spec.embedding_dim));
  }
  return out;
}

std::size_t receptive_field(const ArchitectureSpec& spec) {
  std::size_t rf = 1, jump = 1;
  receptive(spec.layers, rf, jump);
  return rf;
}

// ------------------------------------------------------------------ JSON

void to_json(nlohmann::json& j, const LayerSpec& l) {
  std::string name;
  for (const auto& [k, n] : kLayerNames) {
    if (k == l.kind) name = n;
  }
  j = nlohmann::json{{"kind", name}};
  switch (l.kind) {
    case LayerKind::Conv1d:
      j["in"] = l.in_channels;
      j["out"] = l.out_channels;
      j["kernel"] = l.kernel[0];
      j["stride"] = l.stride[0];
      j["padding"] = l.padding[0];
      j["dilation"] = l.dilation;
      j["bias"] = l.bias;
      break;
    case LayerKind::Conv2d:
      j["in"] = l.in_channels;
      j["out"] = l.out_channels;
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      j["padding"] = l.padding;
      j["bias"] = l.bias;
      break;
    case LayerKind::BatchNorm:
      j["channels"] = l.out_channels;
      break;
    case LayerKind::MaxPool2d:
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      break;
    case LayerKind::Linear:
      j["in"] = l.in_channels;
      j["out"] = l.out_channels;
      j["bias"] = l.bias;
      break;
    case LayerKind::Residual:
      j["main"] = l.main;
      j["shortcut"] = l.shortcut;
      break;
    default:
      break;
  }
}

void from_json(const nlohmann::json& j, LayerSpec& l) {
  l = LayerSpec{};
  const auto name = j.at("kind").get<std::string>();
  bool found = false;
  for (const auto& [k, n] : kLayerNames) {
    if (n == name) {
      l.kind = k;
      found = true;
    }
  }
  if (!found) throw Error(Errc::InvalidConfig, "unknown layer kind '" + name + "'");
  switch (l.kind) {
    case LayerKind::Conv1d:
      l.in_channels = j.at("in");
      l.out_channels = j.at("out");
      l.kernel = {j.at("kernel").get<std::size_t>(), 1};
      l.stride = {j.at("stride").get<std::size_t>(), 1};
      l.padding = {j.at("padding").get<std::size_t>(), 0};
      l.dilation = j.at("dilation");
      l.bias = j.at("bias");
      break;
    case LayerKind::Conv2d:
      l.in_channels = j.at("in");
      l.out_channels = j.at("out");
      l.kernel = j.at("kernel");
      l.stride = j.at("stride");
      l.padding = j.at("padding");
      l.bias = j.at("bias");
      break;
    case LayerKind::BatchNorm:
      l.in_channels = l.out_channels = j.at("channels");
      break;
    case LayerKind::MaxPool2d:
      l.kernel = j.at("kernel");
      l.stride = j.at("stride");
      break;
    case LayerKind::Linear:
      l.in_channels = j.at("in");
      l.out_channels = j.at("out");
      l.bias = j.at("bias");
      break;
    case LayerKind::Residual:
      l.main = j.at("main").get<std::vector<LayerSpec>>();
      l.shortcut = j.at("shortcut").get<std::vector<LayerSpec>>();
      break;
    default:
      break;
  }
}

void to_json(nlohmann::json& j, const ArchitectureSpec& spec) {
  j = nlohmann::json{{"kind", kind_name(spec.kind)},
                     {"input_shape", spec.input_shape},
                     {"embedding_dim", spec.embedding_dim},
                     {"layers", spec.layers},
                     {"notes", spec.notes}};
}

void from_json(const nlohmann::json& j, ArchitectureSpec& spec) {
  spec.kind = parse_kind(j.at("kind").get<std::string>());
  spec.input_shape = j.at("input_shape").get<Shape>();
  spec.embedding_dim = j.at("embedding_dim");
  spec.layers = j.at("layers").get<std::vector<LayerSpec>>();
  spec.notes = j.value("notes", "");
}

// --------------------------------------------------------------- Network

template <typename Real>
Network<Real>::Network(ArchitectureSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  trace_shapes(spec_);
  Rng rng(seed, "init");
  program_ = compile(spec_.layers, "", rng);
}

template <typename Real>
auto Network<Real>::compile(const std::vector<LayerSpec>& layers, const std::string& prefix, Rng& rng)
    -> std::vector<Compiled> {
  std::vector<Compiled> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    const std::string name = prefix + "l" + std::to_string(i);
    Compiled c;
    c.layer = l;
    c.layer.main.clear();
    c.layer.shortcut.clear();
    switch (l.kind) {
      case LayerKind::Conv1d:
      case LayerKind::Conv2d:
      case LayerKind::Linear: {
        Shape shape;
        if (l.kind == LayerKind::Conv1d) shape = {l.out_channels, l.in_channels, l.kernel[0]};
        if (l.kind == LayerKind::Conv2d) shape = {l.out_channels, l.in_channels, l.kernel[0], l.kernel[1]};
        if (l.kind == LayerKind::Linear) shape = {l.out_channels, l.in_channels};
        // Kaiming-uniform (ReLU gain) on fan-in.
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in(l)));
        std::vector<Real> w(ad::numel(shape));
        for (auto& v : w) v = static_cast<Real>(rng.uniform(-bound, bound));
        c.weight = static_cast<int>(params_.size());
        params_.add(name + ".weight", ad::Tensor<Real>::from_data(shape, std::move(w)));
        if (l.bias) {
          c.bias = static_cast<int>(params_.size());
          params_.add(name + ".bias", ad::Tensor<Real>::zeros({l.out_channels}));
        }
        break;
      }
      case LayerKind::BatchNorm:
        c.gamma = static_cast<int>(params_.size());
        params_.add(name + ".gamma", ad::Tensor<Real>::from_data({l.out_channels}, std::vector<Real>(l.out_channels, Real(1))));
        c.beta = static_cast<int>(params_.size());
        params_.add(name + ".beta", ad::Tensor<Real>::zeros({l.out_channels}));
        c.bn_state = static_cast<int>(bn_states_.size());
        bn_states_.emplace_back(l.out_channels);
        bn_names_.push_back(name);
        break;
      case LayerKind::Residual:
        c.main = compile(l.main, name + ".main.", rng);
        c.shortcut = compile(l.shortcut, name + ".shortcut.", rng);
        break;
      default:
        break;
    }
    out.push_back(std::move(c));
  }
  return out;
}

template <typename Real>
ad::Tensor<Real> Network<Real>::run(const std::vector<Compiled>& layers, ad::Tensor<Real> x, ad::Mode mode) {
  const ad::Tensor<Real> none;
  for (const Compiled& c : layers) {
    const LayerSpec& l = c.layer;
    const auto& weight = c.weight >= 0 ? params_[static_cast<std::size_t>(c.weight)].tensor : none;
    const auto& bias = c.bias >= 0 ? params_[static_cast<std::size_t>(c.bias)].tensor : none;
    switch (l.kind) {
      case LayerKind::Conv1d:
        x = ad::conv1d(x, weight, bias, {l.stride[0], l.dilation, l.padding[0]});
        break;
      case LayerKind::Conv2d:
        x = ad::conv2d(x, weight, bias, {l.stride[0], l.stride[1], l.padding[0], l.padding[1]});
        break;
      case LayerKind::BatchNorm:
        x = ad::batch_norm(x, params_[static_cast<std::size_t>(c.gamma)].tensor,
                           params_[static_cast<std::size_t>(c.beta)].tensor,
                           bn_states_[static_cast<std::size_t>(c.bn_state)], mode);
        break;
      case LayerKind::ReLU:
        x = ad::relu(x);
        break;
      case LayerKind::MaxPool2d:
        x = ad::max_pool2d(x, {l.kernel[0], l.kernel[1], l.stride[0], l.stride[1]});
        break;
      case LayerKind::Linear:
        x = ad::linear(x, weight, bias);
        break;
      case LayerKind::Flatten:
        x = ad::flatten(x);
        break;
      case LayerKind::GlobalAvgPool:
        x = ad::global_avg_pool(x);
        break;
      case LayerKind::Residual: {
        auto main = run(c.main, x, mode);
        auto skip = c.shortcut.empty() ? x : run(c.shortcut, x, mode);
        x = ad::relu(ad::add(main, skip));
        break;
      }
    }
  }
  return x;
}

template <typename Real>
ad::Tensor<Real> Network<Real>::forward(const ad::Tensor<Real>& x, ad::Mode mode) {
  Shape expect{x.rank() ? x.dim(0) : 0};
  expect.insert(expect.end(), spec_.input_shape.begin(), spec_.input_shape.end());
  if (x.shape() != expect) {
    throw Error(Errc::ShapeMismatch, std::string(kind_name(spec_.kind)) + " expects input " + ad::to_string(expect) +
                                         ", got " + ad::to_string(x.shape()));
  }
  return run(program_, x, mode);
}

template <typename Real>
ad::Tensor<Real> make_input_batch(std::span<const features::FeatureMatrix> batch, const ArchitectureSpec& spec) {
  const features::Layout want = spec.input_layout();
  const std::size_t per = ad::numel(spec.input_shape);
  std::vector<Real> values;
  values.reserve(batch.size() * per);
  for (const auto& m : batch) {
    if (m.layout() != want) {
      throw Error(Errc::LayoutMismatch,
                  std::string(kind_name(spec.kind)) + " needs " +
                      (want == features::Layout::TemporalConv ? "temporal-conv" : "frame-major") + " features");
    }
    if (m.values().size() != per) {
      throw Error(Errc::ShapeMismatch, "feature matrix has " + std::to_string(m.values().size()) + " values, expected " +
                                           std::to_string(per));
    }
    for (double v : m.values()) values.push_back(static_cast<Real>(v));
  }
  Shape shape{batch.size()};
  shape.insert(shape.end(), spec.input_shape.begin(), spec.input_shape.end());
  return ad::Tensor<Real>::from_data(std::move(shape), std::move(values));
}

template <typename Real>
EmbeddingBatch<Real> embed(Network<Real>& net, std::span<const features::FeatureMatrix> batch, ad::Mode mode) {
  auto input = make_input_batch<Real>(batch, net.spec());
  if (mode == ad::Mode::Eval) {
    ad::NoGradGuard guard;
    return {net.forward(input, mode), net.kind()};
  }
  return {net.forward(input, mode), net.kind()};
}

template class Network<float>;
template class Network<double>;
template ad::Tensor<float> make_input_batch<float>(std::span<const features::FeatureMatrix>, const ArchitectureSpec&);
template ad::Tensor<double> make_input_batch<double>(std::span<const features::FeatureMatrix>, const ArchitectureSpec&);
template EmbeddingBatch<float> embed<float>(Network<float>&, std::span<const features::FeatureMatrix>, ad::Mode);
template EmbeddingBatch<double> embed<double>(Network<double>&, std::span<const features::FeatureMatrix>, ad::Mode);

}  // namespace fskws::nets
