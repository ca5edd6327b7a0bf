#include <gtest/gtest.h>

#include <cmath>

#include "fd.hpp"
#include "scalestack/saliency.hpp"

using namespace scalestack;

namespace {

Image random_image(std::size_t side, Rng& rng) {
  Image img(side, side, 3);
  std::uniform_real_distribution<float> u(0, 1);
  for (std::size_t c = 0; c < 3; ++c)
    for (auto& v : img.plane(c)) v = u(rng);
  return img;
}

Network<double> random_desk(std::uint64_t seed) {
  Rng rng(seed);
  auto net = build_network<double>(desk_preset(4), rng);
  // break the zero-bias symmetry so gates differ between units
  std::normal_distribution<double> n(0.0, 0.05);
  for (auto& p : net.params)
    for (auto& b : p.bias.data()) b += n(rng);
  net.channel_mean = {0.5, 0.5, 0.5};
  return net;
}

// conv(6, 3x3) -> conv(K, 1x1) head
NetworkConfig small_config(std::size_t k) {
  NetworkConfig c;
  c.preset = "small";
  c.num_classes = k;
  c.crop_size = 8;
  LayerSpec a;
  a.name = "conv1";
  a.conv = {6, 3, 3, 1, 1};
  a.relu = true;
  LayerSpec head;
  head.name = "head";
  head.conv = {k, 1, 1, 1, 0};
  head.relu = true;
  LayerSpec pool;
  pool.kind = LayerKind::global_pool;
  pool.name = "pool";
  LayerSpec soft;
  soft.kind = LayerKind::softmax;
  soft.name = "softmax";
  c.layers = {a, head, pool, soft};
  return c;
}

}  // namespace

TEST(Saliency, ZeroInjectionGivesZeroMap) {
  const auto net = random_desk(1);
  Rng rng(2);
  const auto img = random_image(40, rng);
  for (auto gate : {ReluGate::guided, ReluGate::standard}) {
    const auto g = backprop_injection(net, img, Tensor<double>({1, 4}), gate);
    for (double v : g.data()) ASSERT_EQ(v, 0.0);
  }
}

TEST(Saliency, ShapeFiniteAndDeterministic) {
  const auto net = random_desk(3);
  Rng rng(4);
  const auto img = random_image(45, rng);
  const auto a = guided_backprop(net, img, 2);
  const auto b = guided_backprop(net, img, 2);
  EXPECT_EQ(a.gradient.shape(), (Shape{3, 45, 45}));
  EXPECT_EQ(a.target_class, 2u);
  for (double v : a.gradient.data()) ASSERT_TRUE(std::isfinite(v));
  EXPECT_EQ(a.gradient, b.gradient);
  EXPECT_THROW(guided_backprop(net, img, 4), std::out_of_range);
}

TEST(Saliency, OneHotMatchesInjectionAtClassScores) {
  const auto net = random_desk(5);
  Rng rng(6);
  const auto img = random_image(33, rng);
  Tensor<double> inj({1, 4});
  inj[1] = 1.0;
  const auto via_injection = backprop_injection(net, img, inj, ReluGate::standard);
  const auto map = guided_backprop(net, img, 1, ReluGate::standard);
  EXPECT_EQ(map.gradient.data().size(), via_injection.data().size());
  for (std::size_t i = 0; i < via_injection.size(); ++i) EXPECT_EQ(map.gradient[i], via_injection[i]);
}

// Plain-gate saliency is the exact input gradient of the pooled class score.
TEST(Saliency, PlainGateMatchesFiniteDifferences) {
  Rng rng(7);
  auto net = build_network<double>(small_config(3), rng);
  net.channel_mean = {0.0, 0.0, 0.0};
  const auto img = random_image(6, rng);
  const auto map = guided_backprop(net, img, 0, ReluGate::standard);
  Rng unused(0);
  auto score = [&](const Image& im) {
    return forward(net, im.to_tensor<double>(), false, unused).logits[0];
  };
  std::size_t checked = 0;
  for (std::size_t i = 0; i < 3 * 36; i += 7) {
    Image up = img, down = img;
    const double eps = 1e-3;
    up.data()[i] += static_cast<float>(eps);
    down.data()[i] -= static_cast<float>(eps);
    const double fd = (score(up) - score(down)) / (static_cast<double>(up.data()[i]) - down.data()[i]);
    if (std::abs(fd - map.gradient[i]) < 1e-6 + 1e-3 * std::abs(fd)) ++checked;
  }
  EXPECT_GE(checked, 14u);  // of 16 probes; the rest may straddle a ReLU kink
}

TEST(Saliency, GuidedGateIsSubMaskOfPlainGate) {
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    const auto net = random_desk(seed);
    Rng rng(seed + 100);
    const auto img = random_image(48, rng);
    GateTrace<double> guided, plain;
    guided_backprop(net, img, seed % 4, ReluGate::guided, &guided);
    guided_backprop(net, img, seed % 4, ReluGate::standard, &plain);
    ASSERT_EQ(guided.passed.size(), net.config.num_conv_layers());
    ASSERT_EQ(plain.passed.size(), guided.passed.size());
    std::size_t strictly_smaller = 0;
    for (std::size_t l = 0; l < guided.passed.size(); ++l) {
      const auto& fwd = guided.forward_inputs[l];
      const auto& in = guided.incoming[l];
      const auto& out = guided.passed[l];
      for (std::size_t i = 0; i < out.size(); ++i) {
        const bool guided_open = fwd[i] > 0 && in[i] > 0;
        const bool plain_open = fwd[i] > 0;
        ASSERT_TRUE(!guided_open || plain_open);
        ASSERT_EQ(out[i], guided_open ? in[i] : 0.0);
        // the plain gate on the same incoming gradient passes at least as much
        ASSERT_LE(std::abs(out[i]), std::abs(plain_open ? in[i] : 0.0));
        strictly_smaller += plain_open && !guided_open && in[i] != 0.0;
      }
      for (std::size_t i = 0; i < plain.passed[l].size(); ++i) {
        ASSERT_EQ(plain.passed[l][i], plain.forward_inputs[l][i] > 0 ? plain.incoming[l][i] : 0.0);
      }
    }
    EXPECT_GT(strictly_smaller, 0u);
  }
}

TEST(Saliency, NonnegativeWeightsMakeGatesCoincide) {
  Rng rng(21);
  auto net = build_network<double>(small_config(3), rng);
  for (auto& p : net.params)
    for (auto& w : p.weights.data()) w = std::abs(w);
  net.channel_mean = {0.5, 0.5, 0.5};
  const auto img = random_image(12, rng);
  for (std::size_t k = 0; k < 3; ++k) {
    const auto g = guided_backprop(net, img, k, ReluGate::guided);
    const auto p = guided_backprop(net, img, k, ReluGate::standard);
    EXPECT_EQ(g.gradient, p.gradient);
  }
}

TEST(Render, ZeroMapIsBlack) {
  SaliencyMap m{Tensor<double>({3, 5, 7}), 0, 0};
  const auto img = saliency_to_image(m);
  EXPECT_EQ(img.height(), 5u);
  EXPECT_EQ(img.width(), 7u);
  for (float v : img.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Render, SinglePixelIsWhite) {
  SaliencyMap m{Tensor<double>({3, 4, 4}), 0, 0};
  m.gradient[1 * 16 + 2 * 4 + 3] = -0.02;
  const auto img = saliency_to_image(m);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) EXPECT_EQ(img.at(0, y, x), (y == 2 && x == 3) ? 1.0f : 0.0f);
}

TEST(Render, InvariantToPositiveScaling) {
  Rng rng(3);
  SaliencyMap m{scalestack::testing::random_tensor({3, 6, 6}, rng, -1.0, 1.0), 0, 0};
  SaliencyMap scaled = m;
  for (auto& v : scaled.gradient.data()) v *= 8.0;
  EXPECT_EQ(saliency_to_image(m), saliency_to_image(scaled));
}
