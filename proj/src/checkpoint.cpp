#include "fskws/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "fskws/error.hpp"

namespace fskws::checkpoint {

namespace {

using nlohmann::json;

constexpr std::array<std::uint8_t, 4> kMagic{'F', 'S', 'K', 'W'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> b, std::size_t pos, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b[pos + static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

template <typename Real>
NamedArray array_of(std::string name, std::string kind, ad::Shape shape, const std::vector<Real>& v) {
  return {std::move(name), std::move(kind), std::move(shape), std::vector<float>(v.begin(), v.end())};
}

}  // namespace

const NamedArray* Checkpoint::find(std::string_view name, std::string_view kind) const {
  for (const auto& a : arrays) {
    if (a.name == name && a.kind == kind) return &a;
  }
  return nullptr;
}

Checkpoint capture(const nets::Network<float>& net) {
  Checkpoint c;
  c.spec = net.spec();
  for (const auto& p : net.parameters()) {
    const auto values = p.tensor.data();
    c.arrays.push_back({p.name, "param", p.tensor.shape(), std::vector<float>(values.begin(), values.end())});
    c.arrays.push_back(array_of(p.name, "adam_m", p.tensor.shape(), p.adam_m));
    c.arrays.push_back(array_of(p.name, "adam_v", p.tensor.shape(), p.adam_v));
    c.counters[p.name + ".adam_step"] = p.adam_step;
  }
  const auto& states = net.batch_norm_states();
  for (std::size_t i = 0; i < states.size(); ++i) {
    const auto& name = net.batch_norm_names()[i];
    const ad::Shape shape{states[i].running_mean.size()};
    c.arrays.push_back(array_of(name, "bn_mean", shape, states[i].running_mean));
    c.arrays.push_back(array_of(name, "bn_var", shape, states[i].running_var));
    c.counters[name + ".tracked_batches"] = states[i].tracked_batches;
  }
  return c;
}

void restore(const Checkpoint& ckpt, nets::Network<float>& net) {
  auto fetch = [&](const std::string& name, const char* kind, const ad::Shape& shape) -> const NamedArray& {
    const auto* a = ckpt.find(name, kind);
    if (!a) throw Error(Errc::ShapeMismatch, "checkpoint lacks " + std::string(kind) + " '" + name + "'");
    if (a->shape != shape || a->data.size() != ad::numel(shape)) {
      throw Error(Errc::ShapeMismatch, std::string(kind) + " '" + name + "' has shape " + ad::to_string(a->shape) +
                                           ", network expects " + ad::to_string(shape));
    }
    return *a;
  };
  auto counter = [&](const std::string& key) {
    auto it = ckpt.counters.find(key);
    return it == ckpt.counters.end() ? std::uint64_t{0} : it->second;
  };
  for (auto& p : net.parameters()) {
    const auto& w = fetch(p.name, "param", p.tensor.shape());
    std::copy(w.data.begin(), w.data.end(), p.tensor.mutable_data().begin());
    const auto& m = fetch(p.name, "adam_m", p.tensor.shape());
    const auto& v = fetch(p.name, "adam_v", p.tensor.shape());
    p.adam_m.assign(m.data.begin(), m.data.end());
    p.adam_v.assign(v.data.begin(), v.data.end());
    p.adam_step = counter(p.name + ".adam_step");
  }
  auto& states = net.batch_norm_states();
  for (std::size_t i = 0; i < states.size(); ++i) {
    const auto& name = net.batch_norm_names()[i];
    const ad::Shape shape{states[i].running_mean.size()};
    const auto& mean = fetch(name, "bn_mean", shape);
    const auto& var = fetch(name, "bn_var", shape);
    states[i].running_mean.assign(mean.data.begin(), mean.data.end());
    states[i].running_var.assign(var.data.begin(), var.data.end());
    states[i].tracked_batches = counter(name + ".tracked_batches");
  }
  std::size_t expected = 3 * net.parameters().size() + 2 * states.size();
  if (ckpt.arrays.size() != expected) {
    throw Error(Errc::ShapeMismatch, "checkpoint has " + std::to_string(ckpt.arrays.size()) +
                                         " arrays, network needs " + std::to_string(expected));
  }
}

nets::Network<float> instantiate(const Checkpoint& ckpt) {
  nets::Network<float> net(ckpt.spec, 0);
  restore(ckpt, net);
  return net;
}

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt) {
  json dir = json::array();
  for (const auto& a : ckpt.arrays) dir.push_back({{"name", a.name}, {"kind", a.kind}, {"shape", a.shape}});
  const json header{{"architecture", ckpt.spec},
                    {"train_config", ckpt.train_config},
                    {"metrics", ckpt.metrics},
                    {"epoch", ckpt.epoch},
                    {"val_accuracy", ckpt.val_accuracy},
                    {"counters", ckpt.counters},
                    {"arrays", dir}};
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
  put_u32(out, ckpt.format_version);
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& a : ckpt.arrays) {
    for (float f : a.data) put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

Checkpoint deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw Error(Errc::BadMagic, "not an fskws checkpoint");
  }
  if (bytes.size() < 16) throw Error(Errc::ShapeMismatch, "checkpoint truncated inside the preamble");
  Checkpoint c;
  c.format_version = static_cast<std::uint32_t>(get_le(bytes, 4, 4));
  if (c.format_version != kFormatVersion) {
    throw Error(Errc::VersionUnsupported, "checkpoint format version " + std::to_string(c.format_version));
  }
  const std::uint64_t header_len = get_le(bytes, 8, 8);
  if (header_len > bytes.size() - 16) throw Error(Errc::ShapeMismatch, "checkpoint truncated inside the header");
  json header;
  try {
    header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
    c.spec = header.at("architecture").get<nets::ArchitectureSpec>();
    c.train_config = header.at("train_config");
    c.metrics = header.at("metrics");
    c.epoch = header.at("epoch");
    c.val_accuracy = header.at("val_accuracy");
    c.counters = header.at("counters").get<std::map<std::string, std::uint64_t>>();
  } catch (const json::exception& e) {
    throw Error(Errc::BadMagic, std::string("unreadable checkpoint header: ") + e.what());
  }
  std::size_t pos = 16 + header_len;
  for (const auto& d : header.at("arrays")) {
    NamedArray a{d.at("name"), d.at("kind"), d.at("shape").get<ad::Shape>(), {}};
    const std::size_t n = ad::numel(a.shape);
    if (bytes.size() - pos < 4 * n) {
      throw Error(Errc::ShapeMismatch, "checkpoint truncated inside array '" + a.name + "' (" + a.kind + ")");
    }
    a.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      a.data[i] = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(bytes, pos + 4 * i, 4)));
    }
    pos += 4 * n;
    c.arrays.push_back(std::move(a));
  }
  if (pos != bytes.size()) throw Error(Errc::ShapeMismatch, "trailing bytes after the last checkpoint array");
  nets::trace_shapes(c.spec);
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::Io, "failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace fskws::checkpoint
