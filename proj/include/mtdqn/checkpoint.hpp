#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mtdqn/optim.hpp"
#include "mtdqn/temporal_graph.hpp"

namespace mtdqn {

// Length-prefixed little-endian binary layout, format version 1:
//   magic "MTDQNCKP" (8 bytes), u32 version, u64 config_hash, u64 train_step,
//   u32 config_len + canonical config JSON,
//   u32 n_trainable, then per tensor: u32 name_len + name, u32 rows,
//     u32 cols, rows*cols f64 values,
//   u8 has_optimizer; when set: u64 adam_step, then per trainable tensor its
//     first and second moment arrays (rows*cols f64 each),
//   u32 n_aux, then aux tensors in the trainable tensor layout (target
//     network parameters live here).
struct CheckpointTensor {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
};

struct CheckpointData {
  std::uint64_t config_hash = 0;
  std::uint64_t train_step = 0;
  std::string config_json;
  std::vector<CheckpointTensor> trainable;
  std::optional<std::uint64_t> adam_step;
  std::vector<std::vector<double>> adam_first;
  std::vector<std::vector<double>> adam_second;
  std::vector<CheckpointTensor> aux;
};

void save_checkpoint(const std::string& path, std::uint64_t config_hash,
                     std::uint64_t train_step, const std::string& config_json,
                     std::span<const NamedParam> trainable,
                     const AdamOptimizer* optimizer,
                     std::span<const NamedParam> aux);

CheckpointData load_checkpoint(const std::string& path);

// Copies checkpoint values into live parameters; names and shapes must match
// in order.
void restore_params(std::span<const CheckpointTensor> saved,
                    std::span<NamedParam> live);

}  // namespace mtdqn
