#pragma once

#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lrsflow/data.hpp"
#include "lrsflow/flow.hpp"
#include "lrsflow/train.hpp"

namespace lrsflow::ck {

inline constexpr int kFormatVersion = 1;

// On disk: one line of JSON (sorted keys, shortest-round-trip numbers)
// followed by a little-endian raw double payload. Tensors are described in
// the header by name, shape and payload offset, so saving a loaded
// checkpoint reproduces the file byte for byte.
struct Checkpoint {
  train::TrainConfig config;
  nlohmann::json topology;
  std::vector<std::pair<std::string, Tensor>> params;
  bool has_optimizer = false;
  train::AdamState optimizer;  // moments aligned with params order
  std::uint64_t rng_seed = 0;
  std::uint64_t rng_counter = 0;
  double best_val_nll = 0.0;
  std::optional<data::Standardization> input_stats;
};

void save(const std::string& path, const Checkpoint& ck);
Checkpoint load(const std::string& path);

// Rebuilds the model from the stored topology and loads parameters by name.
flow::FlowModel restore_model(const Checkpoint& ck);

Checkpoint snapshot(const flow::FlowModel& model, const train::TrainConfig& cfg,
                    double best_val_nll,
                    const std::optional<data::Standardization>& stats);

}  // namespace lrsflow::ck
