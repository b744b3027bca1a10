#pragma once

// Model checkpoints.
//
// File layout ("FNPCKPT1"), little-endian:
//   char[8]  magic "FNPCKPT1"
//   u32      format version
//   u64      header length L
//   char[L]  JSON header: model config, normalization statistics, training
//            curve, config echo and the name/shape of every parameter
//   f64[...] parameter values, concatenated in header order

#include <filesystem>
#include <string>
#include <vector>

#include "fnp/metrics.hpp"
#include "fnp/model.hpp"

namespace fnp {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct EpochLog {
  std::size_t epoch = 0;
  double train_nll = 0.0;
  double val_nll = 0.0;
};

struct ParameterBlob {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;
};

struct Checkpoint {
  ModelConfig model;
  Normalizer normalizer;
  std::size_t train_obs_lat = 0;  // observation grid seen in training
  std::size_t train_obs_lon = 0;
  bool fine_tuned = false;
  double initial_val_nll = 0.0;
  std::vector<EpochLog> curve;
  std::size_t best_epoch = 0;  // 0: the initialization
  std::string config_echo;
  std::vector<ParameterBlob> parameters;

  /// Snapshot of `model`'s current parameters.
  void capture(AssimilationModel& model);
  /// Builds the model and loads the stored parameters into it. Throws
  /// FormatError when names or shapes disagree with the configuration.
  AssimilationModel instantiate() const;
  void restore(AssimilationModel& model) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws FormatError (naming the failing section) on malformed files or a
/// version mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fnp
