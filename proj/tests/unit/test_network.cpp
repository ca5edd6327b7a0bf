#include <gtest/gtest.h>

#include <filesystem>
#include <optional>

#include "fd.hpp"
#include "scalestack/network.hpp"

using namespace scalestack;
using scalestack::testing::random_tensor;

namespace {

Tensor<double> random_batch(std::size_t n, std::size_t side, Rng& rng) {
  return random_tensor({n, 3, side, side}, rng, 0.0, 1.0);
}

std::vector<std::vector<bool>> gate_pattern(const Network<double>& net, const Tensor<double>& batch) {
  Rng unused(0);
  const auto r = forward(net, batch, false, unused);
  std::vector<std::vector<bool>> gates;
  for (const auto& pre : r.cache.pre_activations) {
    std::vector<bool> g(pre.size());
    for (std::size_t i = 0; i < pre.size(); ++i) g[i] = pre[i] > 0;
    gates.push_back(std::move(g));
  }
  return gates;
}

// Central difference of the loss wrt `param`; nullopt when the perturbation
// flips any ReLU gate (the loss is not smooth across that interval).
std::optional<double> finite_difference(Network<double>& net, double& param, const Tensor<double>& batch,
                                        std::span<const std::size_t> labels, double eps = 1e-4) {
  Rng unused(0);
  const auto base = gate_pattern(net, batch);
  const double saved = param;
  param = saved + eps;
  const double up = loss_and_gradients(net, batch, labels, false, unused).loss;
  const bool up_same = gate_pattern(net, batch) == base;
  param = saved - eps;
  const double down = loss_and_gradients(net, batch, labels, false, unused).loss;
  const bool down_same = gate_pattern(net, batch) == base;
  param = saved;
  if (!up_same || !down_same) return std::nullopt;
  return (up - down) / (2 * eps);
}

}  // namespace

TEST(Presets, FullShapes) {
  const auto c = full_preset(210);
  EXPECT_EQ(c.num_conv_layers(), 12u);
  Rng rng(1);
  const auto net = build_network<float>(c, rng);
  EXPECT_EQ(net.params[0].weights.shape(), (Shape{96, 3, 11, 11}));
  EXPECT_EQ(net.params.back().weights.shape(), (Shape{210, 1024, 1, 1}));
  EXPECT_LE(c.min_input_size(), 224u);
}

TEST(Presets, LastLayersAreHeadPoolSoftmax) {
  for (const auto& c : {full_preset(7), desk_preset(4)}) {
    const auto& l = c.layers;
    ASSERT_GE(l.size(), 3u);
    EXPECT_EQ(l[l.size() - 3].kind, LayerKind::conv);
    EXPECT_EQ(l[l.size() - 3].conv.out_channels, c.num_classes);
    EXPECT_EQ(l[l.size() - 3].conv.kernel_h, 1u);
    EXPECT_EQ(l[l.size() - 2].kind, LayerKind::global_pool);
    EXPECT_EQ(l.back().kind, LayerKind::softmax);
    for (const auto& x : l)
      if (x.kind == LayerKind::conv) EXPECT_TRUE(x.relu) << x.name;
  }
}

TEST(Presets, DeskFitsCoarsestScale) {
  const auto c = desk_preset(4);
  EXPECT_LE(c.min_input_size(), 32u);
  EXPECT_THROW(make_preset("huge", 4), std::invalid_argument);
}

TEST(Network, InitStatisticsAndDeterminism) {
  Rng a(9), b(9);
  const auto n1 = build_network<float>(desk_preset(4), a);
  const auto n2 = build_network<float>(desk_preset(4), b);
  for (std::size_t i = 0; i < n1.params.size(); ++i) {
    EXPECT_EQ(n1.params[i].weights, n2.params[i].weights);
    const float expected = i + 1 == n1.params.size() ? float(kHeadBiasInit) : 0.0f;
    for (float v : n1.params[i].bias.data()) EXPECT_EQ(v, expected);
    for (float v : n1.velocity[i].weights.data()) EXPECT_EQ(v, 0.0f);
  }
  // conv2.2 has 32*32 weights with fan-in 32.
  const auto& w = n1.params[4].weights;
  double ss = 0;
  for (float v : w.data()) ss += double(v) * v;
  EXPECT_NEAR(std::sqrt(ss / w.size()), std::sqrt(2.0 / 32), 0.1 * std::sqrt(2.0 / 32));
}

TEST(Network, DeskForwardShapes) {
  Rng rng(2);
  const auto net = build_network<float>(desk_preset(4), rng);
  const auto r = forward(net, random_batch(2, 64, rng).cast<float>(), false, rng);
  ASSERT_EQ(r.posteriors.shape(), (Shape{2, 4}));
  for (std::size_t n = 0; n < 2; ++n) {
    double s = 0;
    for (std::size_t k = 0; k < 4; ++k) s += r.posteriors[n * 4 + k];
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
  const auto big = forward(net, random_batch(1, 128, rng).cast<float>(), false, rng);
  EXPECT_EQ(big.posteriors.shape(), (Shape{1, 4}));
  EXPECT_GT(big.cache.pooled_shape[2], r.cache.pooled_shape[2]);
}

TEST(Network, UndersizedInputRejectedWithMinimum) {
  Rng rng(2);
  const auto net = build_network<float>(desk_preset(4), rng);
  try {
    forward(net, random_batch(1, 20, rng).cast<float>(), false, rng);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find(std::to_string(net.config.min_input_size())), std::string::npos);
  }
}

TEST(Network, ZeroWeightsGiveUniformPosterior) {
  Rng rng(3);
  auto net = build_network<double>(desk_preset(4), rng);
  for (auto& p : net.params) {
    p.weights = Tensor<double>(p.weights.shape());
    p.bias = Tensor<double>(p.bias.shape());
  }
  const auto r = forward(net, random_batch(1, 64, rng), false, rng);
  for (double v : r.posteriors.data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Network, EndToEndGradientMatchesFiniteDifferences) {
  Rng rng(17);
  auto net = build_network<double>(desk_preset(4), rng);
  // Small positive biases keep most units away from the ReLU kink.
  std::uniform_real_distribution<double> u(0.01, 0.05);
  for (auto& p : net.params)
    for (auto& v : p.bias.data()) v = u(rng);
  const auto batch = random_batch(2, 37, rng);
  const std::size_t labels[] = {1, 3};
  Rng unused(0);
  const auto analytic = loss_and_gradients(net, batch, labels, false, unused).grads;

  std::uniform_int_distribution<std::size_t> pick;
  double worst = 0.0;
  std::size_t checked = 0, probed = 0;
  for (std::size_t layer = 0; layer < net.params.size(); ++layer) {
    for (int t = 0; t < 12; ++t) {
      const bool bias = t % 3 == 2;
      auto& tensor = bias ? net.params[layer].bias : net.params[layer].weights;
      const auto& grad = bias ? analytic.params[layer].bias : analytic.params[layer].weights;
      const std::size_t i = pick(rng) % tensor.size();
      const auto fd = finite_difference(net, tensor[i], batch, labels);
      ++probed;
      if (!fd) continue;
      ++checked;
      const double num = *fd;
      const double a = grad[i];
      const double denom = std::max({std::abs(a), std::abs(num), 1e-7});
      worst = std::max(worst, std::abs(a - num) / denom);
    }
  }
  EXPECT_LT(worst, 1e-3);
  EXPECT_GE(checked * 4, probed * 3) << checked << " of " << probed << " probes were kink-free";
}

TEST(Network, InputGradientMatchesFiniteDifferences) {
  Rng rng(23);
  auto net = build_network<double>(desk_preset(4), rng);
  auto batch = random_batch(1, 33, rng);
  const std::size_t labels[] = {2};
  Rng unused(0);
  auto fr = forward(net, batch, false, unused);
  const auto sx = softmax_xent(fr.logits, labels);
  const auto g = backward(net, fr.cache, sx.grad_logits, ReluGate::standard, true);
  std::uniform_int_distribution<std::size_t> pick(0, batch.size() - 1);
  for (int t = 0; t < 20; ++t) {
    const std::size_t i = pick(rng);
    const double saved = batch[i];
    batch[i] = saved + 1e-4;
    const double up = loss_and_gradients(net, batch, labels, false, unused).loss;
    batch[i] = saved - 1e-4;
    const double down = loss_and_gradients(net, batch, labels, false, unused).loss;
    batch[i] = saved;
    const double num = (up - down) / 2e-4;
    EXPECT_NEAR(g.input[i], num, 1e-3 * std::max({std::abs(num), std::abs(g.input[i]), 1e-6}));
  }
}

TEST(Network, PlainGradientDescentReduction) {
  Rng rng(4);
  auto net = build_network<double>(desk_preset(4), rng);
  net.learning_rate = 0.05;
  const auto before = net;
  const auto batch = random_batch(2, 40, rng);
  const std::size_t labels[] = {0, 2};
  TrainConfig cfg;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.0;
  cfg.grad_clip_norm = 0.0;
  Rng r1(5);
  const auto g = loss_and_gradients(net, batch, labels, true, r1).grads;
  Rng r2(5);
  train_step(net, batch, labels, cfg, r2);
  for (std::size_t l = 0; l < net.params.size(); ++l) {
    for (std::size_t i = 0; i < net.params[l].weights.size(); ++i) {
      EXPECT_NEAR(net.params[l].weights[i],
                  before.params[l].weights[i] - 0.05 * g.params[l].weights[i], 1e-7);
    }
    for (std::size_t i = 0; i < net.params[l].bias.size(); ++i) {
      EXPECT_NEAR(net.params[l].bias[i], before.params[l].bias[i] - 0.05 * g.params[l].bias[i], 1e-7);
    }
  }
}

TEST(Network, ClippingRescalesOnlyLargeGradients) {
  Rng rng(8);
  const auto net = build_network<double>(desk_preset(4), rng);
  Gradients<double> g;
  for (const auto& p : net.params) g.params.push_back({Tensor<double>(p.weights.shape(), 0.5), Tensor<double>(p.bias.shape(), -0.5)});
  const auto original = g;
  const double norm = clip_gradients(g, 2.0);
  double sq = 0, ratio = 0;
  for (std::size_t l = 0; l < g.params.size(); ++l) {
    for (std::size_t i = 0; i < g.params[l].weights.size(); ++i) {
      sq += g.params[l].weights[i] * g.params[l].weights[i];
      ratio = g.params[l].weights[i] / original.params[l].weights[i];
    }
    for (double v : g.params[l].bias.data()) sq += v * v;
  }
  EXPECT_GT(norm, 2.0);
  EXPECT_NEAR(std::sqrt(sq), 2.0, 1e-9);
  EXPECT_NEAR(ratio, 2.0 / norm, 1e-12);
  auto small = original;
  clip_gradients(small, norm * 1.01);
  for (std::size_t l = 0; l < small.params.size(); ++l) EXPECT_EQ(small.params[l].weights, original.params[l].weights);
  auto off = original;
  clip_gradients(off, 0.0);
  EXPECT_EQ(off.params[0].bias, original.params[0].bias);
}

TEST(Network, WeightDecaySkipsBiasesAndMomentumAccumulates) {
  Rng rng(4);
  auto net = build_network<double>(desk_preset(4), rng);
  net.learning_rate = 0.1;
  Gradients<double> zero;
  for (const auto& p : net.params) zero.params.push_back({Tensor<double>(p.weights.shape()), Tensor<double>(p.bias.shape(), 1.0)});
  const auto before = net;
  TrainConfig cfg;
  sgd_update(net, zero, cfg);
  sgd_update(net, zero, cfg);
  // Bias: v1 = 1, v2 = 0.9 + 1; b -= 0.1 * (1 + 1.9).
  EXPECT_NEAR(net.params[0].bias[0], -0.29, 1e-12);
  const double w0 = before.params[0].weights[0];
  const double v1 = 5e-4 * w0;
  const double w1 = w0 - 0.1 * v1;
  const double v2 = 0.9 * v1 + 5e-4 * w1;
  EXPECT_NEAR(net.params[0].weights[0], w1 - 0.1 * v2, 1e-15);
}

TEST(Network, SmallStepDecreasesBatchLoss) {
  Rng rng(31);
  auto net = build_network<float>(desk_preset(4), rng);
  net.learning_rate = 1e-3;
  const auto batch = random_batch(4, 64, rng).cast<float>();
  const std::size_t labels[] = {0, 1, 2, 3};
  TrainConfig cfg;
  Rng unused(1);
  const float before = loss_and_gradients(net, batch, labels, false, unused).loss;
  // Dropout is active during the step; compare eval-mode loss before and after.
  auto probe = net;
  Rng r(2);
  const auto g = loss_and_gradients(probe, batch, labels, false, r).grads;
  sgd_update(probe, g, cfg);
  const float after = loss_and_gradients(probe, batch, labels, false, unused).loss;
  EXPECT_LT(after, before);
}

TEST(Network, NonFiniteLossSignalsDivergence) {
  Rng rng(6);
  auto net = build_network<float>(desk_preset(4), rng);
  net.params.back().bias[0] = std::numeric_limits<float>::infinity();
  const auto batch = random_batch(1, 64, rng).cast<float>();
  const std::size_t labels[] = {1};
  EXPECT_THROW(train_step(net, batch, labels, TrainConfig{}, rng), DivergenceError);
}

TEST(Network, FullImageOfCropSizeMatchesForward) {
  Rng rng(8);
  auto net = build_network<float>(desk_preset(4), rng);
  net.channel_mean = {0.4, 0.5, 0.6};
  Image img(64, 64, 3);
  std::uniform_real_distribution<float> u(0, 1);
  for (std::size_t c = 0; c < 3; ++c)
    for (auto& v : img.plane(c)) v = u(rng);
  const auto p = predict_full_image(net, img);
  const auto r = forward(net, img.to_tensor<float>(), false, rng);
  ASSERT_EQ(p.size(), 4u);
  double s = 0;
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(p[k], static_cast<double>(r.posteriors[k]));
    s += p[k];
  }
  EXPECT_NEAR(s, 1.0, 1e-6);
}

TEST(Network, FullImageApproximatesCropGridOnUniformTexture) {
  Rng rng(12);
  auto net = build_network<float>(desk_preset(4), rng);
  // Period-4 vertical stripes: every crop with offset multiple of 4 sees the same pattern.
  Image img(128, 128, 3);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 128; ++y)
      for (std::size_t x = 0; x < 128; ++x) img.at(c, y, x) = 0.5f + 0.3f * ((x / 2) % 2 ? 1.f : -1.f);
  const auto full = predict_full_image(net, img);
  std::vector<double> grid(4, 0.0);
  for (std::size_t gy = 0; gy < 3; ++gy)
    for (std::size_t gx = 0; gx < 3; ++gx) {
      Tensor<float> crop({1, 3, 64, 64});
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < 64; ++y)
          for (std::size_t x = 0; x < 64; ++x) crop.at(0, c, y, x) = img.at(c, gy * 32 + y, gx * 32 + x);
      const auto r = forward(net, crop, false, rng);
      for (std::size_t k = 0; k < 4; ++k) grid[k] += r.posteriors[k] / 9.0;
    }
  double l1 = 0;
  for (std::size_t k = 0; k < 4; ++k) l1 += std::abs(full[k] - grid[k]);
  EXPECT_LT(l1, 0.05);
}

TEST(Schedule, DropsByFactorTenAfterPatience) {
  PlateauSchedule s(1e-2, 10, 3, 1e-4);
  EXPECT_DOUBLE_EQ(s.observe(1.0), 1e-2);
  EXPECT_DOUBLE_EQ(s.observe(0.9), 1e-2);
  EXPECT_DOUBLE_EQ(s.observe(0.89995), 1e-2);  // below min_delta: not an improvement
  EXPECT_DOUBLE_EQ(s.observe(0.95), 1e-2);
  EXPECT_DOUBLE_EQ(s.observe(0.9), 1e-3);
  EXPECT_DOUBLE_EQ(s.observe(0.5), 1e-3);
}

TEST(Checkpoint, RoundTripIsExact) {
  Rng rng(3);
  auto net = build_network<float>(desk_preset(5), rng);
  net.channel_mean = {0.1, 0.2, 0.3};
  net.class_names = {"a", "b", "c", "d", "e"};
  net.scale = 64;
  net.epoch = 7;
  net.learning_rate = 1e-3;
  net.velocity[2].weights[5] = 0.25f;
  const auto dir = std::filesystem::temp_directory_path() / "scalestack_ckpt_test";
  std::filesystem::create_directories(dir);
  save_checkpoint(net, dir / "net.sstk");
  EXPECT_TRUE(std::filesystem::exists(dir / "net.json"));
  const auto back = load_checkpoint<float>(dir / "net.sstk");
  EXPECT_EQ(back.config.num_classes, 5u);
  EXPECT_EQ(back.channel_mean, net.channel_mean);
  EXPECT_EQ(back.class_names, net.class_names);
  EXPECT_EQ(back.scale, 64u);
  EXPECT_EQ(back.epoch, 7u);
  EXPECT_EQ(back.learning_rate, 1e-3);
  for (std::size_t i = 0; i < net.params.size(); ++i) {
    EXPECT_EQ(back.params[i].weights, net.params[i].weights);
    EXPECT_EQ(back.params[i].bias, net.params[i].bias);
    EXPECT_EQ(back.velocity[i].weights, net.velocity[i].weights);
  }
  std::filesystem::remove_all(dir);
}
