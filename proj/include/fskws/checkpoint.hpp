#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fskws/nets.hpp"
#include "json.hpp"

namespace fskws::checkpoint {

inline constexpr std::uint32_t kFormatVersion = 1;

struct NamedArray {
  std::string name;
  std::string kind;  // param, adam_m, adam_v, bn_mean, bn_var
  ad::Shape shape;
  std::vector<float> data;
};

/// Frozen network state plus the optimiser state needed to resume.
struct Checkpoint {
  std::uint32_t format_version = kFormatVersion;
  nets::ArchitectureSpec spec;
  nlohmann::json train_config = nlohmann::json::object();
  nlohmann::json metrics = nlohmann::json::object();
  std::size_t epoch = 0;
  double val_accuracy = 0.0;
  std::vector<NamedArray> arrays;
  std::map<std::string, std::uint64_t> counters;  // adam steps, tracked batches

  const NamedArray* find(std::string_view name, std::string_view kind) const;
};

Checkpoint capture(const nets::Network<float>& net);

/// Copies parameters, optimiser moments and batch-norm statistics into
/// `net`. Throws ShapeMismatch when names or shapes disagree.
void restore(const Checkpoint& ckpt, nets::Network<float>& net);

/// Builds a network from the stored spec and restores it.
nets::Network<float> instantiate(const Checkpoint& ckpt);

/// Layout: "FSKW", u32 version, u64 header length, JSON header, then the
/// arrays as little-endian float32 in header order.
std::vector<std::uint8_t> serialize(const Checkpoint& ckpt);
Checkpoint deserialize(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fskws::checkpoint
