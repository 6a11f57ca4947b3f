#include <doctest.h>

#include <cmath>

#include "mfgrasp/decision_net.hpp"
#include "mfgrasp/error.hpp"
#include "mfgrasp/mesh_io.hpp"
#include "mfgrasp/rng.hpp"
#include "support.hpp"

using namespace mfgrasp;
using namespace testing;

namespace {

std::vector<int> small_dims() { return NetworkParams::dims(4, 2, 3, 10); }

VecX random_input(int n, Rng& rng) {
  VecX x(n);
  for (int i = 0; i < n; ++i) x[i] = rng.uniform();
  return x;
}

// Plain loops, no Eigen products: relu layers, skip from the first hidden
// output into the fifth layer's pre-activation, sigmoid output.
std::vector<double> forward_oracle(const NetworkParams& p, const VecX& input) {
  std::vector<double> a(input.data(), input.data() + input.size());
  std::vector<double> skip;
  for (int l = 0; l < 7; ++l) {
    const MatX& w = p.weights[l];
    std::vector<double> z(w.rows());
    for (int i = 0; i < w.rows(); ++i) {
      double s = p.biases[l][i];
      for (int k = 0; k < w.cols(); ++k) s += w(i, k) * a[k];
      z[i] = s;
    }
    if (l == 4)
      for (std::size_t i = 0; i < z.size(); ++i) z[i] += skip[i];
    if (l < 6)
      for (double& v : z) v = v > 0 ? v : 0.0;
    else
      for (double& v : z) v = 1.0 / (1.0 + std::exp(-v));
    if (l == 0) skip = z;
    a = z;
  }
  return a;
}

double& param(NetworkParams& p, std::size_t flat) {
  for (int l = 0; l < 7; ++l) {
    const auto nw = static_cast<std::size_t>(p.weights[l].size());
    if (flat < nw) return p.weights[l].data()[flat];
    flat -= nw;
    const auto nb = static_cast<std::size_t>(p.biases[l].size());
    if (flat < nb) return p.biases[l].data()[flat];
    flat -= nb;
  }
  throw std::out_of_range("parameter index");
}

double grad_at(const Gradients& g, std::size_t flat) {
  for (int l = 0; l < 7; ++l) {
    const auto nw = static_cast<std::size_t>(g.weights[l].size());
    if (flat < nw) return g.weights[l].data()[flat];
    flat -= nw;
    const auto nb = static_cast<std::size_t>(g.biases[l].size());
    if (flat < nb) return g.biases[l].data()[flat];
    flat -= nb;
  }
  throw std::out_of_range("parameter index");
}

}  // namespace

TEST_CASE("layer widths") {
  const auto dims = NetworkParams::dims(12, 5, 16);
  CHECK(dims == std::vector<int>{120, 256, 256, 256, 256, 256, 256, 960});
  const NetworkParams p = NetworkParams::random(dims, 1);
  CHECK(p.input_size() == 120);
  CHECK(p.output_size() == 960);
  CHECK(p.finite());
}

TEST_CASE("zero parameters give one half everywhere") {
  const NetworkParams p = NetworkParams::zeros(NetworkParams::dims(12, 5, 16));
  Rng rng(1);
  const VecX out = forward(p, random_input(120, rng));
  for (int i = 0; i < out.size(); ++i) CHECK(out[i] == 0.5);
}

TEST_CASE("forward is deterministic and matches the loop oracle") {
  const auto dims = NetworkParams::dims(12, 5, 16, 64);
  const NetworkParams a = NetworkParams::random(dims, 9);
  const NetworkParams b = NetworkParams::random(dims, 9);
  Rng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const VecX x = random_input(120, rng);
    const VecX ya = forward(a, x);
    const VecX yb = forward(b, x);
    CHECK(ya == yb);
    const auto oracle = forward_oracle(a, x);
    double worst = 0.0;
    for (int i = 0; i < ya.size(); ++i) worst = std::max(worst, std::abs(ya[i] - oracle[i]));
    CHECK(worst < 1e-12);
    for (int i = 0; i < ya.size(); ++i) {
      CHECK(ya[i] > 0.0);
      CHECK(ya[i] < 1.0);
    }
  }
  // Batched columns equal single-vector calls.
  MatX batch(120, 3);
  for (int c = 0; c < 3; ++c) batch.col(c) = random_input(120, rng);
  const MatX out = forward(a, batch);
  for (int c = 0; c < 3; ++c) CHECK((out.col(c) - forward(a, VecX(batch.col(c)))).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("encoding rejects non-finite values") {
  RepGrid g(2, 1);
  g.set(0, 0, 0.5, 0.05);
  const VecX x = encode_rep(g, 0.1);
  CHECK(x.size() == 4);
  CHECK(x[0] == 0.5);
  CHECK(x[2] == doctest::Approx(0.5));
  CHECK(x[3] == 0.0);
  g.set(1, 0, std::nan(""), 0.05);
  CHECK_THROWS_AS(encode_rep(g, 0.1), Error);
  const NetworkParams p = NetworkParams::zeros(NetworkParams::dims(2, 1, 1, 4));
  VecX bad = VecX::Zero(4);
  bad[1] = INFINITY;
  CHECK_THROWS_AS(forward(p, bad), Error);
}

TEST_CASE("masked loss hand values") {
  auto single = [](double p, double y) {
    MatX probs = MatX::Constant(3, 1, 0.123);
    probs(1, 0) = p;
    return masked_loss(probs, {Sample{VecX(), 1, y}});
  };
  CHECK(single(1.0 - 1e-7, 1.0) == doctest::Approx(1e-7).epsilon(1e-6));
  CHECK(single(0.5, 1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(single(1.0, 0.0) == doctest::Approx(-std::log(1e-7)).epsilon(1e-9));

  MatX probs = MatX::Constant(4, 2, 0.7);
  probs(2, 0) = 0.9;
  probs(0, 1) = 0.2;
  const double loss = masked_loss(probs, {Sample{VecX(), 2, 1.0}, Sample{VecX(), 0, 0.0}});
  CHECK(loss == doctest::Approx(-(std::log(0.9) + std::log(0.8)) / 2).epsilon(1e-15));
  CHECK_THROWS_AS(masked_loss(probs, {}), Error);
}

TEST_CASE("analytic gradients match central differences") {
  const auto dims = small_dims();
  Rng rng(77);
  for (int config = 0; config < 5; ++config) {
    NetworkParams p = NetworkParams::random(dims, 100 + config);
    // Positive biases keep most units away from the ReLU kink.
    for (auto& b : p.biases) b.setConstant(0.05);
    std::vector<Sample> batch;
    for (int i = 0; i < 3; ++i)
      batch.push_back({random_input(dims.front(), rng), static_cast<int>(rng.index(dims.back())), i % 2 ? 0.0 : 1.0});
    const Gradients g = backward(p, batch);
    CHECK(g.loss == doctest::Approx(masked_loss(p, batch)).epsilon(1e-15));
    std::size_t total = p.parameter_count();
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
      const std::size_t flat = rng.index(total);
      const double saved = param(p, flat);
      const double h = 1e-6;
      param(p, flat) = saved + h;
      const double up = masked_loss(p, batch);
      param(p, flat) = saved - h;
      const double down = masked_loss(p, batch);
      param(p, flat) = saved;
      const double numeric = (up - down) / (2 * h);
      const double analytic = grad_at(g, flat);
      const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      worst = std::max(worst, std::abs(numeric - analytic) / scale);
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("gradient vanishes on output rows of unexecuted cells") {
  const auto dims = small_dims();
  const NetworkParams p = NetworkParams::random(dims, 3);
  Rng rng(5);
  const std::vector<Sample> batch = {{random_input(dims.front(), rng), 4, 1.0}, {random_input(dims.front(), rng), 17, 0.0}};
  const Gradients g = backward(p, batch);
  const MatX& w = g.weights.back();
  for (int row = 0; row < w.rows(); ++row) {
    const bool executed = row == 4 || row == 17;
    if (executed) {
      CHECK(w.row(row).cwiseAbs().maxCoeff() > 0.0);
    } else {
      CHECK(w.row(row).cwiseAbs().maxCoeff() == 0.0);
      CHECK(g.biases.back()[row] == 0.0);
    }
  }
  CHECK_THROWS_AS(backward(p, {}), Error);
}

TEST_CASE("duplicated sample has the single-sample gradient") {
  const auto dims = small_dims();
  const NetworkParams p = NetworkParams::random(dims, 4);
  Rng rng(6);
  const Sample s{random_input(dims.front(), rng), 5, 1.0};
  const Gradients one = backward(p, {s});
  const Gradients two = backward(p, {s, s});
  for (int l = 0; l < 7; ++l) {
    CHECK((one.weights[l] - two.weights[l]).cwiseAbs().maxCoeff() <= 1e-15 * (1 + one.weights[l].cwiseAbs().maxCoeff()));
    CHECK((one.biases[l] - two.biases[l]).cwiseAbs().maxCoeff() <= 1e-15 * (1 + one.biases[l].cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("overfits one positive sample") {
  Rng rng(8);
  const auto dims = NetworkParams::dims(12, 5, 16, 64);
  const Sample s{random_input(120, rng), 321, 1.0};
  const std::vector<Sample> data(128, s);
  TrainConfig cfg;
  cfg.hidden = 64;
  const TrainResult r = train(data, dims, cfg);
  REQUIRE(r.history.size() == 20);
  CHECK_FALSE(r.diverged);
  CHECK(r.history.back().mean_loss < 0.01);
  CHECK(r.history[0].rate == 1e-3);
  CHECK(r.history[10].rate == 1e-4);
  CHECK(r.history[16].rate == 1e-5);
}

TEST_CASE("training is seeded") {
  Rng rng(10);
  const auto dims = small_dims();
  std::vector<Sample> data;
  for (int i = 0; i < 50; ++i)
    data.push_back({random_input(dims.front(), rng), static_cast<int>(rng.index(dims.back())), i % 3 ? 1.0 : 0.0});
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 8;
  cfg.seed = 3;
  const TrainResult a = train(data, dims, cfg);
  const TrainResult b = train(data, dims, cfg);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) CHECK(a.history[i].mean_loss == b.history[i].mean_loss);
  CHECK(serialize_weights(a.params) == serialize_weights(b.params));
  cfg.seed = 4;
  const TrainResult c = train(data, dims, cfg);
  CHECK(serialize_weights(a.params) != serialize_weights(c.params));
  CHECK_THROWS_AS(train({}, dims, cfg), Error);
}

TEST_CASE("schedule and config checks") {
  TrainConfig cfg;
  CHECK(cfg.rate_for_epoch(1) == 1e-3);
  CHECK(cfg.rate_for_epoch(10) == 1e-3);
  CHECK(cfg.rate_for_epoch(11) == 1e-4);
  CHECK(cfg.rate_for_epoch(16) == 1e-4);
  CHECK(cfg.rate_for_epoch(20) == 1e-5);
  cfg.schedule = {{1, 1e-4}, {5, 1e-3}};
  CHECK_THROWS_AS(cfg.validate(), Error);
  const TrainConfig back = train_config_from_json(to_json(TrainConfig{}));
  CHECK(back.schedule == TrainConfig{}.schedule);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"epoch", 3}}), Error);
}

TEST_CASE("weights round trip bitwise and detect corruption") {
  TempDir dir("net");
  const auto dims = NetworkParams::dims(12, 5, 16, 32);
  const NetworkParams p = NetworkParams::random(dims, 12);
  save_weights(dir / "w.bin", p);
  const NetworkParams q = load_weights(dir / "w.bin");
  Rng rng(2);
  const VecX x = random_input(120, rng);
  CHECK(forward(p, x) == forward(q, x));
  CHECK(serialize_weights(q) == serialize_weights(p));

  std::string bytes = read_file(dir / "w.bin");
  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  try {
    deserialize_weights(flipped);
    FAIL("expected a checksum error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Format);
  }
  std::string version = bytes;
  version[4] = 99;
  CHECK_THROWS_AS(deserialize_weights(version), Error);
  CHECK_THROWS_AS(deserialize_weights(bytes.substr(0, bytes.size() - 3)), Error);
  CHECK_THROWS_AS(deserialize_weights("JUNKJUNKJUNKJUNKJUNK"), Error);
}
