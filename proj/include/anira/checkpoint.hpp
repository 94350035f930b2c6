// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoints. Layout (little-endian):
//   "ANIRACKP" | u32 version | u64 header bytes | header JSON
//   u32 tensor count, then per tensor:
//   u32 name bytes | name | u32 dtype (0 f32, 1 f64) | u32 rank | u64 dims... | raw data
// Tensor names: "param/<name>", "adam_m/<name>", "adam_v/<name>".
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "anira/model.hpp"
#include "anira/objective.hpp"

namespace anira {

inline constexpr std::uint32_t kCheckpointVersion = 1;

nlohmann::json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct Checkpoint {
  nlohmann::json header = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor<double>>> tensors;

  const Tensor<double>* find(const std::string& name) const;
  ModelConfig model_config() const { return model_config_from_json(header.at("model")); }
};

/// Collects parameters (and AdamW moments when given) into a checkpoint.
template <typename Real>
Checkpoint make_checkpoint(const Model<Real>& model, AdamW<Real>* optimizer, nlohmann::json extra);

/// Copies checkpointed parameters into a model of the same configuration.
template <typename Real>
void restore_parameters(const Checkpoint& ckp, Model<Real>& model);
/// Restores AdamW moments and its step counter; no-op if none were stored.
template <typename Real>
void restore_optimizer(const Checkpoint& ckp, const Model<Real>& model, AdamW<Real>& optimizer);

void write_checkpoint(const std::string& path, const Checkpoint& ckp, bool float64);
/// Throws DataError on a bad magic, version or truncated file.
Checkpoint read_checkpoint(const std::string& path);

}  // namespace anira
