#include "mfgrasp/decision_net.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "mfgrasp/error.hpp"
#include "mfgrasp/mesh_io.hpp"
#include "mfgrasp/rng.hpp"

namespace mfgrasp {

std::size_t NetworkParams::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
  return n;
}

bool NetworkParams::finite() const {
  for (std::size_t l = 0; l < weights.size(); ++l)
    if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
  return true;
}

std::vector<int> NetworkParams::dims(int num_angles, int num_depths, int num_types, int hidden) {
  std::vector<int> d = {2 * num_angles * num_depths};
  for (int i = 0; i < kLayers - 1; ++i) d.push_back(hidden);
  d.push_back(num_angles * num_depths * num_types);
  return d;
}

namespace {

void check_dims(const std::vector<int>& dims) {
  if (dims.size() != NetworkParams::kLayers + 1) throw Error(ErrorKind::Precondition, "network needs 8 layer widths");
  for (int d : dims)
    if (d <= 0) throw Error(ErrorKind::Precondition, "layer widths must be positive");
  if (dims[NetworkParams::kSkipFrom + 1] != dims[NetworkParams::kSkipTo + 1])
    throw Error(ErrorKind::Precondition, "skip connection joins layers of different width");
}

}  // namespace

NetworkParams NetworkParams::zeros(const std::vector<int>& dims) {
  check_dims(dims);
  NetworkParams p;
  for (int l = 0; l < kLayers; ++l) {
    p.weights.push_back(MatX::Zero(dims[l + 1], dims[l]));
    p.biases.push_back(VecX::Zero(dims[l + 1]));
  }
  return p;
}

NetworkParams NetworkParams::random(const std::vector<int>& dims, std::uint64_t seed) {
  NetworkParams p = zeros(dims);
  Rng rng(seed);
  for (int l = 0; l < kLayers; ++l) {
    const double bound = std::sqrt(6.0 / dims[l]);
    MatX& w = p.weights[l];
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index k = 0; k < w.cols(); ++k) w(i, k) = rng.uniform(-bound, bound);
  }
  return p;
}

VecX encode_rep(const RepGrid& rep, double max_width) {
  if (!(max_width > 0.0)) throw Error(ErrorKind::Precondition, "encode_rep: max_width must be positive");
  const std::size_t n = rep.cells();
  VecX x(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const double s = rep.scores()[i];
    const double w = rep.widths()[i];
    if (!std::isfinite(s) || !std::isfinite(w)) throw Error(ErrorKind::Precondition, "encode_rep: non-finite input");
    x[i] = s;
    x[n + i] = w >= 0.0 ? w / max_width : 0.0;
  }
  return x;
}

namespace {

struct Activations {
  std::vector<MatX> a;  // a[0] input, a[l+1] output of layer l (post ReLU; sigmoid for the last)
  std::vector<MatX> z;  // pre-activations
};

Activations run(const NetworkParams& p, const MatX& x) {
  if (x.rows() != p.input_size()) throw Error(ErrorKind::Precondition, "forward: input size mismatch");
  if (!x.allFinite()) throw Error(ErrorKind::Precondition, "forward: non-finite input");
  Activations act;
  act.a.push_back(x);
  for (int l = 0; l < NetworkParams::kLayers; ++l) {
    MatX z = p.weights[l] * act.a[l];
    z.colwise() += p.biases[l];
    if (l == NetworkParams::kSkipTo) z += act.a[NetworkParams::kSkipFrom + 1];
    if (l + 1 < NetworkParams::kLayers) {
      act.a.push_back(z.cwiseMax(0.0));
    } else {
      act.a.push_back((1.0 + (-z.array()).exp()).inverse().matrix());
    }
    act.z.push_back(std::move(z));
  }
  return act;
}

}  // namespace

MatX forward(const NetworkParams& params, const MatX& inputs) {
  // Same arithmetic as run(), keeping only the skip activation.
  if (inputs.rows() != params.input_size()) throw Error(ErrorKind::Precondition, "forward: input size mismatch");
  if (!inputs.allFinite()) throw Error(ErrorKind::Precondition, "forward: non-finite input");
  MatX a = inputs, z, skip;
  for (int l = 0; l < NetworkParams::kLayers; ++l) {
    z.noalias() = params.weights[l] * a;
    z.colwise() += params.biases[l];
    if (l == NetworkParams::kSkipTo) z += skip;
    if (l + 1 < NetworkParams::kLayers) {
      a = z.cwiseMax(0.0);
      if (l == NetworkParams::kSkipFrom) skip = a;
    } else {
      a = (1.0 + (-z.array()).exp()).inverse().matrix();
    }
  }
  return a;
}

VecX forward(const NetworkParams& params, const VecX& input) {
  const MatX x = input;
  return forward(params, x).col(0);
}

double clamp_probability(double p) { return std::clamp(p, 1e-7, 1.0 - 1e-7); }

double masked_loss(const MatX& probabilities, const std::vector<Sample>& batch) {
  if (batch.empty()) throw Error(ErrorKind::Precondition, "masked_loss: empty batch");
  if (probabilities.cols() != static_cast<Eigen::Index>(batch.size()))
    throw Error(ErrorKind::Precondition, "masked_loss: batch size mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double p = clamp_probability(probabilities(batch[i].index, static_cast<Eigen::Index>(i)));
    const double y = batch[i].label;
    sum += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
  }
  return sum / static_cast<double>(batch.size());
}

namespace {

MatX stack_inputs(const std::vector<Sample>& batch, int input_size) {
  MatX x(input_size, static_cast<Eigen::Index>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].input.size() != input_size) throw Error(ErrorKind::Precondition, "sample input size mismatch");
    x.col(static_cast<Eigen::Index>(i)) = batch[i].input;
  }
  return x;
}

void check_indices(const std::vector<Sample>& batch, int outputs) {
  for (const auto& s : batch)
    if (s.index < 0 || s.index >= outputs) throw Error(ErrorKind::Precondition, "sample output index out of range");
}

}  // namespace

double masked_loss(const NetworkParams& params, const std::vector<Sample>& batch) {
  if (batch.empty()) throw Error(ErrorKind::Precondition, "masked_loss: empty batch");
  check_indices(batch, params.output_size());
  return masked_loss(forward(params, stack_inputs(batch, params.input_size())), batch);
}

Gradients backward(const NetworkParams& params, const std::vector<Sample>& batch) {
  if (batch.empty()) throw Error(ErrorKind::Precondition, "backward: empty batch");
  check_indices(batch, params.output_size());
  const Activations act = run(params, stack_inputs(batch, params.input_size()));
  const MatX& prob = act.a.back();
  const int L = NetworkParams::kLayers;
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  Gradients g;
  g.loss = masked_loss(prob, batch);
  g.weights.resize(L);
  g.biases.resize(L);

  // Output layer: only the executed logit of each sample carries gradient.
  const MatX& top = act.a[L - 1];
  g.weights[L - 1] = MatX::Zero(params.weights[L - 1].rows(), params.weights[L - 1].cols());
  g.biases[L - 1] = VecX::Zero(params.biases[L - 1].size());
  MatX delta = MatX::Zero(top.rows(), top.cols());  // gradient w.r.t. a[L-1]
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto col = static_cast<Eigen::Index>(i);
    const double p = prob(batch[i].index, col);
    const double y = batch[i].label;
    // d/dz of -[y log p + (1-y) log(1-p)] is p - y; zero where the clamp is active.
    const double gz = (p == clamp_probability(p)) ? (p - y) * inv_b : 0.0;
    if (gz == 0.0) continue;
    g.weights[L - 1].row(batch[i].index) += gz * top.col(col).transpose();
    g.biases[L - 1][batch[i].index] += gz;
    delta.col(col) += gz * params.weights[L - 1].row(batch[i].index).transpose();
  }

  MatX skip_grad;
  for (int l = L - 2; l >= 0; --l) {
    // delta holds dLoss/da[l+1]; a[l+1] = relu(z[l]).
    if (l == NetworkParams::kSkipFrom && skip_grad.size() > 0) delta += skip_grad;
    MatX dz = (act.z[l].array() > 0.0).select(delta, 0.0);
    if (l == NetworkParams::kSkipTo) skip_grad = dz;
    g.weights[l] = dz * act.a[l].transpose();
    g.biases[l] = dz.rowwise().sum();
    if (l > 0) delta = params.weights[l].transpose() * dz;
  }
  return g;
}

double TrainConfig::rate_for_epoch(int epoch) const {
  double rate = schedule.front().second;
  for (const auto& [start, r] : schedule)
    if (epoch >= start) rate = r;
  return rate;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw Error(ErrorKind::Config, "train: epochs must be >= 1");
  if (batch_size < 1) throw Error(ErrorKind::Config, "train: batch_size must be >= 1");
  if (schedule.empty() || schedule.front().first != 1) throw Error(ErrorKind::Config, "train: schedule must start at epoch 1");
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    if (!(schedule[i].second > 0.0)) throw Error(ErrorKind::Config, "train: learning rates must be positive");
    if (i > 0 && (schedule[i].first <= schedule[i - 1].first || schedule[i].second > schedule[i - 1].second))
      throw Error(ErrorKind::Config, "train: schedule must be increasing in epoch and non-increasing in rate");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && epsilon > 0.0))
    throw Error(ErrorKind::Config, "train: bad Adam constants");
  if (hidden < 1) throw Error(ErrorKind::Config, "train: hidden must be >= 1");
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json sched = nlohmann::json::array();
  for (const auto& [epoch, rate] : c.schedule) sched.push_back({epoch, rate});
  return {{"epochs", c.epochs}, {"batch_size", c.batch_size}, {"beta1", c.beta1},   {"beta2", c.beta2},
          {"epsilon", c.epsilon}, {"schedule", sched},         {"seed", c.seed},     {"hidden", c.hidden}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  for (const auto& [key, v] : j.items()) {
    if (key == "epochs") c.epochs = v.get<int>();
    else if (key == "batch_size") c.batch_size = v.get<int>();
    else if (key == "beta1") c.beta1 = v.get<double>();
    else if (key == "beta2") c.beta2 = v.get<double>();
    else if (key == "epsilon") c.epsilon = v.get<double>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else if (key == "hidden") c.hidden = v.get<int>();
    else if (key == "schedule") {
      c.schedule.clear();
      for (const auto& e : v) {
        if (!e.is_array() || e.size() != 2) throw Error(ErrorKind::Config, "train: schedule entries are [epoch, rate]");
        c.schedule.emplace_back(e[0].get<int>(), e[1].get<double>());
      }
    } else {
      throw Error(ErrorKind::Config, "unknown train key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

TrainResult train(const std::vector<Sample>& samples, const std::vector<int>& dims, const TrainConfig& config) {
  config.validate();
  if (samples.empty()) throw Error(ErrorKind::Precondition, "train: empty dataset");
  TrainResult result;
  result.params = NetworkParams::random(dims, config.seed);
  NetworkParams checkpoint = result.params;
  NetworkParams& p = result.params;
  const int L = NetworkParams::kLayers;

  std::vector<MatX> mw, vw;
  std::vector<VecX> mb, vb;
  for (int l = 0; l < L; ++l) {
    mw.push_back(MatX::Zero(p.weights[l].rows(), p.weights[l].cols()));
    vw.push_back(mw.back());
    mb.push_back(VecX::Zero(p.biases[l].size()));
    vb.push_back(mb.back());
  }

  Rng rng(Rng::mix(config.seed ^ 0x5452414Eull));
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  long step = 0;
  std::vector<Sample> batch;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const double lr = config.rate_for_epoch(epoch);
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(samples[order[i]]);
      const Gradients g = backward(p, batch);
      loss_sum += g.loss * static_cast<double>(batch.size());
      ++step;
      const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
      auto update = [&](auto& param, auto& m, auto& v, const auto& grad) {
        m = config.beta1 * m + (1.0 - config.beta1) * grad;
        v = (config.beta2 * v.array() + (1.0 - config.beta2) * grad.array().square()).matrix();
        param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + config.epsilon);
      };
      for (int l = 0; l < L; ++l) {
        update(p.weights[l], mw[l], vw[l], g.weights[l]);
        update(p.biases[l], mb[l], vb[l], g.biases[l]);
      }
    }
    const double mean = loss_sum / static_cast<double>(samples.size());
    if (!std::isfinite(mean) || !p.finite()) {
      result.params = checkpoint;
      result.diverged = true;
      break;
    }
    checkpoint = p;
    result.history.push_back({epoch, lr, mean});
  }
  return result;
}

namespace {

constexpr char kMagic[4] = {'M', 'F', 'G', 'W'};
constexpr std::uint32_t kWeightVersion = 1;

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw Error(ErrorKind::Format, "weights: truncated file");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

std::uint32_t checksum(const char* data, std::size_t n) {
  return static_cast<std::uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

}  // namespace

std::string serialize_weights(const NetworkParams& params) {
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kWeightVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.weights.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.input_size()));
  for (const auto& w : params.weights) put<std::uint32_t>(out, static_cast<std::uint32_t>(w.rows()));
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    const MatX& w = params.weights[l];
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index k = 0; k < w.cols(); ++k) put<double>(out, w(i, k));
    for (Eigen::Index i = 0; i < params.biases[l].size(); ++i) put<double>(out, params.biases[l][i]);
  }
  put<std::uint32_t>(out, checksum(out.data(), out.size()));
  return out;
}

NetworkParams deserialize_weights(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw Error(ErrorKind::Format, "weights: bad magic bytes");
  std::size_t pos = 4;
  const auto version = take<std::uint32_t>(bytes, pos);
  if (version != kWeightVersion) throw Error(ErrorKind::Format, "weights: unsupported version " + std::to_string(version));
  std::size_t tail = bytes.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + tail, 4);
  if (stored != checksum(bytes.data(), tail)) throw Error(ErrorKind::Format, "weights: checksum mismatch");
  const auto layers = take<std::uint32_t>(bytes, pos);
  if (layers != NetworkParams::kLayers) throw Error(ErrorKind::Format, "weights: expected 7 layers");
  std::vector<int> dims;
  for (std::uint32_t i = 0; i <= layers; ++i) dims.push_back(static_cast<int>(take<std::uint32_t>(bytes, pos)));
  NetworkParams p = NetworkParams::zeros(dims);
  for (std::size_t l = 0; l < layers; ++l) {
    MatX& w = p.weights[l];
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index k = 0; k < w.cols(); ++k) w(i, k) = take<double>(bytes, pos);
    for (Eigen::Index i = 0; i < p.biases[l].size(); ++i) p.biases[l][i] = take<double>(bytes, pos);
  }
  if (pos != tail) throw Error(ErrorKind::Format, "weights: size does not match layer dims");
  if (!p.finite()) throw Error(ErrorKind::Format, "weights: non-finite values");
  return p;
}

void save_weights(const std::filesystem::path& path, const NetworkParams& params) {
  write_file(path, serialize_weights(params));
}

NetworkParams load_weights(const std::filesystem::path& path) { return deserialize_weights(read_file(path)); }

void write_loss_history(const std::filesystem::path& path, const std::vector<EpochStat>& history) {
  std::string csv = "epoch,lr,mean_loss\n";
  char line[128];
  for (const auto& e : history) {
    std::snprintf(line, sizeof(line), "%d,%.17g,%.17g\n", e.epoch, e.rate, e.mean_loss);
    csv += line;
  }
  write_file(path, csv);
}

}  // namespace mfgrasp
