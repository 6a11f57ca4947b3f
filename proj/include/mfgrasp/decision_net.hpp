#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mfgrasp/antipodal.hpp"

namespace mfgrasp {

using MatX = Eigen::MatrixXd;
using VecX = Eigen::VectorXd;

/// Seven dense layers; the first hidden activation is added to the fifth
/// layer's pre-activation.
struct NetworkParams {
  static constexpr int kLayers = 7;
  static constexpr int kSkipFrom = 0;  // output of layer index 0
  static constexpr int kSkipTo = 4;    // added before the ReLU of layer index 4

  std::vector<MatX> weights;  // weights[l] is out x in
  std::vector<VecX> biases;

  int input_size() const { return static_cast<int>(weights.front().cols()); }
  int output_size() const { return static_cast<int>(weights.back().rows()); }
  std::size_t parameter_count() const;
  bool finite() const;

  /// Layer widths: input, six hidden, output.
  static std::vector<int> dims(int num_angles, int num_depths, int num_types, int hidden = 256);
  static NetworkParams zeros(const std::vector<int>& dims);
  /// He-uniform weights, zero biases.
  static NetworkParams random(const std::vector<int>& dims, std::uint64_t seed);
};

/// Network input: scores then widths / max_width, invalid widths as 0.
/// Throws Error(Precondition) on non-finite values.
VecX encode_rep(const RepGrid& rep, double max_width);

/// Output index of cell (a, d) and type c.
inline int output_index(int a, int d, int c, int num_depths, int num_types) {
  return (a * num_depths + d) * num_types + c;
}

/// Sigmoid probabilities, one column per input column.
MatX forward(const NetworkParams& params, const MatX& inputs);
VecX forward(const NetworkParams& params, const VecX& input);

struct Sample {
  VecX input;
  int index = 0;  // executed output cell
  double label = 0.0;
};

double clamp_probability(double p);

/// Mean binary cross-entropy at each sample's executed cell only.
double masked_loss(const MatX& probabilities, const std::vector<Sample>& batch);
double masked_loss(const NetworkParams& params, const std::vector<Sample>& batch);

struct Gradients {
  std::vector<MatX> weights;
  std::vector<VecX> biases;
  double loss = 0.0;
};

/// Exact gradient of masked_loss. Throws Error(Precondition) on an empty batch.
Gradients backward(const NetworkParams& params, const std::vector<Sample>& batch);

struct TrainConfig {
  int epochs = 20;
  int batch_size = 128;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// (first epoch, rate) pairs, 1-based epochs, descending rates.
  std::vector<std::pair<int, double>> schedule = {{1, 1e-3}, {11, 1e-4}, {17, 1e-5}};
  std::uint64_t seed = 0;
  int hidden = 256;

  double rate_for_epoch(int epoch) const;
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
/// Overlays keys from `j` onto `base`; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

struct EpochStat {
  int epoch = 0;
  double rate = 0.0;
  double mean_loss = 0.0;
};

struct TrainResult {
  NetworkParams params;
  std::vector<EpochStat> history;
  bool diverged = false;  // params are then the last finite checkpoint
};

TrainResult train(const std::vector<Sample>& samples, const std::vector<int>& dims, const TrainConfig& config);

void save_weights(const std::filesystem::path& path, const NetworkParams& params);
/// Throws Error(Format) on bad magic, version, shape or checksum.
NetworkParams load_weights(const std::filesystem::path& path);
std::string serialize_weights(const NetworkParams& params);
NetworkParams deserialize_weights(const std::string& bytes);

void write_loss_history(const std::filesystem::path& path, const std::vector<EpochStat>& history);

}  // namespace mfgrasp
