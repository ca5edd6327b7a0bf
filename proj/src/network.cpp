#include "scalestack/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <numeric>

#include "scalestack/dataset.hpp"
#include "scalestack/evaluation.hpp"
#include "scalestack/tensor_io.hpp"

namespace scalestack {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

LayerSpec conv_layer(std::string name, std::size_t filters, std::size_t k, std::size_t stride,
                     std::size_t pad) {
  LayerSpec l;
  l.kind = LayerKind::conv;
  l.name = std::move(name);
  l.conv = ConvSpec{filters, k, k, stride, pad};
  l.relu = true;
  return l;
}

LayerSpec simple_layer(LayerKind kind, std::string name, double dropout = 0.0) {
  LayerSpec l;
  l.kind = kind;
  l.name = std::move(name);
  l.dropout = dropout;
  return l;
}

// Spatial extent after every layer for a square input, or 0 once it collapses.
std::size_t final_extent(const NetworkConfig& cfg, std::size_t side) {
  std::size_t h = side;
  std::size_t w = side;
  for (const auto& l : cfg.layers) {
    if (l.kind != LayerKind::conv) continue;
    h = l.conv.output_extent(h);
    w = l.conv.output_extent_w(w);
    if (h == 0 || w == 0) return 0;
  }
  return std::min(h, w);
}

std::string_view kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv:
      return "conv";
    case LayerKind::dropout:
      return "dropout";
    case LayerKind::global_pool:
      return "global_pool";
    case LayerKind::softmax:
      return "softmax";
  }
  return "?";
}

LayerKind parse_kind(const std::string& s) {
  if (s == "conv") return LayerKind::conv;
  if (s == "dropout") return LayerKind::dropout;
  if (s == "global_pool") return LayerKind::global_pool;
  if (s == "softmax") return LayerKind::softmax;
  throw std::invalid_argument("unknown layer kind '" + s + "'");
}

json config_to_json(const NetworkConfig& c) {
  json layers = json::array();
  for (const auto& l : c.layers) {
    json j{{"kind", kind_name(l.kind)}, {"name", l.name}};
    if (l.kind == LayerKind::conv) {
      j["out_channels"] = l.conv.out_channels;
      j["kernel"] = {l.conv.kernel_h, l.conv.kernel_w};
      j["stride"] = l.conv.stride;
      j["pad"] = l.conv.pad;
      j["relu"] = l.relu;
    }
    if (l.kind == LayerKind::dropout) j["rate"] = l.dropout;
    layers.push_back(std::move(j));
  }
  return json{{"preset", c.preset},
              {"num_classes", c.num_classes},
              {"in_channels", c.in_channels},
              {"crop_size", c.crop_size},
              {"layers", std::move(layers)}};
}

NetworkConfig config_from_json(const json& j) {
  NetworkConfig c;
  c.preset = j.at("preset").get<std::string>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.in_channels = j.at("in_channels").get<std::size_t>();
  c.crop_size = j.at("crop_size").get<std::size_t>();
  for (const auto& lj : j.at("layers")) {
    LayerSpec l;
    l.kind = parse_kind(lj.at("kind").get<std::string>());
    l.name = lj.at("name").get<std::string>();
    if (l.kind == LayerKind::conv) {
      l.conv.out_channels = lj.at("out_channels").get<std::size_t>();
      l.conv.kernel_h = lj.at("kernel").at(0).get<std::size_t>();
      l.conv.kernel_w = lj.at("kernel").at(1).get<std::size_t>();
      l.conv.stride = lj.at("stride").get<std::size_t>();
      l.conv.pad = lj.at("pad").get<std::size_t>();
      l.relu = lj.at("relu").get<bool>();
    }
    if (l.kind == LayerKind::dropout) l.dropout = lj.at("rate").get<double>();
    c.layers.push_back(std::move(l));
  }
  c.validate();
  return c;
}

}  // namespace

void NetworkConfig::validate() const {
  auto fail = [&](const std::string& why) {
    throw std::invalid_argument("network config '" + preset + "': " + why);
  };
  if (num_classes < 2) fail("needs at least 2 classes");
  if (in_channels < 1) fail("needs at least 1 input channel");
  if (layers.size() < 3) fail("needs at least conv -> global_pool -> softmax");
  const auto n = layers.size();
  const auto& head = layers[n - 3];
  if (head.kind != LayerKind::conv || head.conv.out_channels != num_classes ||
      head.conv.kernel_h != 1 || head.conv.kernel_w != 1) {
    fail("third-to-last layer must be a 1x1 conv with num_classes filters");
  }
  if (layers[n - 2].kind != LayerKind::global_pool) fail("second-to-last layer must be global_pool");
  if (layers[n - 1].kind != LayerKind::softmax) fail("last layer must be softmax");
  for (std::size_t i = 0; i + 2 < n; ++i) {
    const auto& l = layers[i];
    if (l.kind == LayerKind::global_pool || l.kind == LayerKind::softmax) {
      fail("layer '" + l.name + "' must not appear before the head");
    }
    if (l.kind == LayerKind::conv) {
      l.conv.validate();
      if (!l.relu) fail("conv layer '" + l.name + "' must be followed by ReLU");
    }
    if (l.kind == LayerKind::dropout && !(l.dropout >= 0.0 && l.dropout < 1.0)) {
      fail("dropout rate of '" + l.name + "' outside [0, 1)");
    }
  }
  if (layers.front().kind != LayerKind::conv) fail("first layer must be a conv");
  if (crop_size < min_input_size()) {
    fail("crop size " + std::to_string(crop_size) + " below minimum input " +
         std::to_string(min_input_size()));
  }
}

std::size_t NetworkConfig::min_input_size() const {
  for (std::size_t s = 1; s <= 16384; ++s) {
    if (final_extent(*this, s) >= 1) return s;
  }
  throw std::invalid_argument("network config '" + preset + "' never produces an output");
}

std::size_t NetworkConfig::num_conv_layers() const {
  return static_cast<std::size_t>(std::count_if(
      layers.begin(), layers.end(), [](const LayerSpec& l) { return l.kind == LayerKind::conv; }));
}

NetworkConfig full_preset(std::size_t num_classes) {
  NetworkConfig c;
  c.preset = "full";
  c.num_classes = num_classes;
  c.crop_size = 224;
  c.layers = {conv_layer("conv1.1", 96, 11, 4, 0),  conv_layer("conv1.2", 96, 1, 1, 0),
              conv_layer("conv1.3", 96, 3, 2, 1),   conv_layer("conv2.1", 256, 5, 1, 2),
              conv_layer("conv2.2", 256, 1, 1, 0),  conv_layer("conv2.3", 256, 3, 2, 0),
              conv_layer("conv3.1", 384, 3, 1, 1),  conv_layer("conv3.2", 384, 1, 1, 0),
              conv_layer("conv3.3", 384, 3, 2, 0),  simple_layer(LayerKind::dropout, "drop3", 0.5),
              conv_layer("conv4", 1024, 1, 1, 0),   conv_layer("conv5", 1024, 1, 1, 0),
              conv_layer("conv6", num_classes, 1, 1, 0),
              simple_layer(LayerKind::global_pool, "global-pool"),
              simple_layer(LayerKind::softmax, "softmax")};
  c.validate();
  return c;
}

NetworkConfig desk_preset(std::size_t num_classes) {
  NetworkConfig c;
  c.preset = "desk";
  c.num_classes = num_classes;
  c.crop_size = 64;
  c.layers = {conv_layer("conv1.1", 16, 5, 2, 0),  conv_layer("conv1.2", 16, 1, 1, 0),
              conv_layer("conv1.3", 16, 3, 2, 1),  conv_layer("conv2.1", 32, 5, 1, 2),
              conv_layer("conv2.2", 32, 1, 1, 0),  conv_layer("conv2.3", 32, 3, 2, 0),
              conv_layer("conv3.1", 48, 3, 1, 1),  conv_layer("conv3.2", 48, 1, 1, 0),
              conv_layer("conv3.3", 48, 3, 2, 0),  simple_layer(LayerKind::dropout, "drop3", 0.5),
              conv_layer("conv4", 128, 1, 1, 0),   conv_layer("conv5", 128, 1, 1, 0),
              conv_layer("conv6", num_classes, 1, 1, 0),
              simple_layer(LayerKind::global_pool, "global-pool"),
              simple_layer(LayerKind::softmax, "softmax")};
  c.validate();
  return c;
}

NetworkConfig make_preset(std::string_view name, std::size_t num_classes) {
  if (name == "desk") return desk_preset(num_classes);
  if (name == "full") return full_preset(num_classes);
  throw std::invalid_argument("unknown network preset '" + std::string(name) +
                              "' (expected desk|full)");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0 && momentum >= 0 && weight_decay >= 0 && min_lr > 0 && min_delta >= 0)) {
    throw std::invalid_argument("train config: rates must be positive (momentum/decay >= 0)");
  }
  if (!(grad_clip_norm >= 0)) throw std::invalid_argument("train config: grad_clip_norm must be >= 0");
  if (!(lr_decay_factor > 1.0)) throw std::invalid_argument("train config: lr_decay_factor must be > 1");
  if (batch_size == 0 || max_epochs == 0 || plateau_patience == 0) {
    throw std::invalid_argument("train config: batch size, epochs and patience must be >= 1");
  }
}

template <typename T>
Network<T> build_network(const NetworkConfig& config, Rng& rng) {
  config.validate();
  Network<T> net;
  net.config = config;
  net.channel_mean.assign(config.in_channels, 0.0);
  std::size_t in_c = config.in_channels;
  const LayerSpec* last_conv = nullptr;
  for (const auto& l : config.layers)
    if (l.kind == LayerKind::conv) last_conv = &l;
  for (const auto& l : config.layers) {
    if (l.kind != LayerKind::conv) continue;
    const auto& s = l.conv;
    ConvParams<T> p{Tensor<T>({s.out_channels, in_c, s.kernel_h, s.kernel_w}),
                    Tensor<T>({s.out_channels})};
    const double fan_in = static_cast<double>(in_c * s.kernel_h * s.kernel_w);
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
    for (auto& w : p.weights.data()) w = static_cast<T>(normal(rng));
    if (l.conv.out_channels == config.num_classes && &l == last_conv) {
      for (auto& b : p.bias.data()) b = static_cast<T>(kHeadBiasInit);
    }
    net.velocity.push_back({Tensor<T>(p.weights.shape()), Tensor<T>(p.bias.shape())});
    net.params.push_back(std::move(p));
    in_c = s.out_channels;
  }
  return net;
}

template <typename T>
ForwardResult<T> forward(const Network<T>& net, const Tensor<T>& batch, bool training, Rng& rng) {
  require_rank(batch, 4, "network input");
  const auto& cfg = net.config;
  if (batch.dim(1) != cfg.in_channels) {
    throw ShapeError("network expects " + std::to_string(cfg.in_channels) +
                     "-channel input, got " + to_string(batch.shape()));
  }
  const std::size_t min_side = cfg.min_input_size();
  if (batch.dim(2) < min_side || batch.dim(3) < min_side) {
    throw ShapeError("input " + to_string(batch.shape()) + " is smaller than the minimum size " +
                     std::to_string(min_side) + "x" + std::to_string(min_side));
  }
  Tensor<T> x = batch;
  const std::size_t plane = batch.dim(2) * batch.dim(3);
  for (std::size_t n = 0; n < batch.dim(0); ++n) {
    for (std::size_t c = 0; c < cfg.in_channels; ++c) {
      const T m = static_cast<T>(net.channel_mean[c]);
      T* p = x.data().data() + (n * cfg.in_channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] -= m;
    }
  }

  ForwardResult<T> r;
  std::size_t conv = 0;
  for (const auto& l : cfg.layers) {
    switch (l.kind) {
      case LayerKind::conv: {
        r.cache.conv_inputs.push_back(std::move(x));
        auto y = conv2d_forward(r.cache.conv_inputs.back(), net.params[conv].weights,
                                net.params[conv].bias, l.conv);
        x = l.relu ? relu_forward(y) : y;
        r.cache.pre_activations.push_back(std::move(y));
        ++conv;
        break;
      }
      case LayerKind::dropout: {
        auto d = dropout_forward(x, l.dropout, training, rng);
        r.cache.dropout_masks.push_back(std::move(d.mask));
        x = std::move(d.output);
        break;
      }
      case LayerKind::global_pool:
        r.cache.pooled_shape = x.shape();
        x = global_average_pool(x);
        break;
      case LayerKind::softmax:
        r.posteriors = softmax(x);
        r.logits = x;
        break;
    }
  }
  return r;
}

template <typename T>
Gradients<T> backward(const Network<T>& net, const ForwardCache<T>& cache,
                      const Tensor<T>& grad_logits, ReluGate gate, bool need_input_grad,
                      GateTrace<T>* trace) {
  const auto& layers = net.config.layers;
  Gradients<T> grads;
  grads.params.resize(net.params.size());
  std::size_t conv = cache.conv_inputs.size();
  std::size_t drop = cache.dropout_masks.size();
  if (conv != net.params.size()) throw std::logic_error("forward cache does not match network");
  Tensor<T> g = grad_logits;
  if (trace) *trace = {};
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
    switch (it->kind) {
      case LayerKind::softmax:
        break;
      case LayerKind::global_pool:
        g = global_average_pool_backward(g, cache.pooled_shape);
        break;
      case LayerKind::dropout:
        g = dropout_backward(g, cache.dropout_masks[--drop]);
        break;
      case LayerKind::conv: {
        --conv;
        if (it->relu) {
          const auto& pre = cache.pre_activations[conv];
          auto passed = gate == ReluGate::guided ? guided_relu_backward(pre, g) : relu_backward(pre, g);
          if (trace) {
            trace->forward_inputs.push_back(pre);
            trace->incoming.push_back(g);
            trace->passed.push_back(passed);
          }
          g = std::move(passed);
        }
        const bool need_in = conv > 0 || need_input_grad;
        auto cg = conv2d_backward(g, cache.conv_inputs[conv], net.params[conv].weights, it->conv,
                                  need_in);
        grads.params[conv] = {std::move(cg.weights), std::move(cg.bias)};
        g = std::move(cg.input);
        break;
      }
    }
  }
  if (trace) {
    std::reverse(trace->forward_inputs.begin(), trace->forward_inputs.end());
    std::reverse(trace->incoming.begin(), trace->incoming.end());
    std::reverse(trace->passed.begin(), trace->passed.end());
  }
  if (need_input_grad) grads.input = std::move(g);
  return grads;
}

template <typename T>
LossAndGradients<T> loss_and_gradients(const Network<T>& net, const Tensor<T>& batch,
                                       std::span<const std::size_t> labels, bool training,
                                       Rng& rng) {
  auto fr = forward(net, batch, training, rng);
  auto sx = softmax_xent(fr.logits, labels);
  auto grads = backward(net, fr.cache, sx.grad_logits, ReluGate::standard, false);
  return {sx.loss, std::move(sx.posteriors), std::move(grads)};
}

template <typename T>
void sgd_update(Network<T>& net, const Gradients<T>& grads, const TrainConfig& cfg) {
  const T lr = static_cast<T>(net.learning_rate);
  const T mom = static_cast<T>(cfg.momentum);
  const T wd = static_cast<T>(cfg.weight_decay);
  for (std::size_t i = 0; i < net.params.size(); ++i) {
    auto w = net.params[i].weights.data();
    auto vw = net.velocity[i].weights.data();
    auto gw = grads.params[i].weights.data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      vw[j] = mom * vw[j] + gw[j] + wd * w[j];
      w[j] -= lr * vw[j];
    }
    auto b = net.params[i].bias.data();
    auto vb = net.velocity[i].bias.data();
    auto gb = grads.params[i].bias.data();
    for (std::size_t j = 0; j < b.size(); ++j) {
      vb[j] = mom * vb[j] + gb[j];
      b[j] -= lr * vb[j];
    }
  }
}

template <typename T>
double clip_gradients(Gradients<T>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& p : grads.params) {
    for (T v : p.weights.data()) sq += static_cast<double>(v) * v;
    for (T v : p.bias.data()) sq += static_cast<double>(v) * v;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T f = static_cast<T>(max_norm / norm);
    for (auto& p : grads.params) {
      for (T& v : p.weights.data()) v *= f;
      for (T& v : p.bias.data()) v *= f;
    }
  }
  return norm;
}

template <typename T>
T train_step(Network<T>& net, const Tensor<T>& batch, std::span<const std::size_t> labels,
             const TrainConfig& cfg, Rng& rng) {
  if (labels.empty()) throw std::invalid_argument("train_step on an empty batch");
  if (net.learning_rate <= 0.0) net.learning_rate = cfg.learning_rate;
  auto lg = loss_and_gradients(net, batch, labels, true, rng);
  if (!std::isfinite(static_cast<double>(lg.loss))) {
    throw DivergenceError("training diverged: non-finite loss at epoch " +
                          std::to_string(net.epoch + 1));
  }
  clip_gradients(lg.grads, cfg.grad_clip_norm);
  sgd_update(net, lg.grads, cfg);
  return lg.loss;
}

template <typename T>
std::vector<double> predict_full_image(const Network<T>& net, const Image& img) {
  Rng unused(0);
  const auto fr = forward(net, img.to_tensor<T>(), false, unused);
  return {fr.posteriors.data().begin(), fr.posteriors.data().end()};
}

PlateauSchedule::PlateauSchedule(double lr, double factor, std::size_t patience, double min_delta)
    : lr_(lr),
      factor_(factor),
      patience_(patience),
      min_delta_(min_delta),
      best_(std::numeric_limits<double>::infinity()) {}

double PlateauSchedule::observe(double val_loss) {
  if (val_loss < best_ - min_delta_) {
    best_ = val_loss;
    bad_epochs_ = 0;
  } else if (++bad_epochs_ >= patience_) {
    lr_ /= factor_;
    bad_epochs_ = 0;
  }
  return lr_;
}

template <typename T>
TrainHistory train(Network<T>& net, const ScaleData& data, const TrainConfig& cfg,
                   const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.train_images.empty() || data.val_images.empty()) {
    throw std::invalid_argument("training needs non-empty train and val splits");
  }
  if (data.train_images.size() != data.train_labels.size() ||
      data.val_images.size() != data.val_labels.size()) {
    throw std::invalid_argument("image and label counts differ");
  }
  std::size_t crop = net.config.crop_size;
  for (const auto& img : data.train_images) crop = std::min(crop, img.shortest_side());
  if (crop < net.config.min_input_size()) {
    throw std::invalid_argument("training images (shortest side " + std::to_string(crop) +
                                ") are smaller than the network minimum input " +
                                std::to_string(net.config.min_input_size()));
  }
  if (net.learning_rate <= 0.0) net.learning_rate = cfg.learning_rate;

  Rng rng(cfg.seed);
  PlateauSchedule schedule(net.learning_rate, cfg.lr_decay_factor, cfg.plateau_patience,
                           cfg.min_delta);
  const std::size_t channels = net.config.in_channels;
  TrainHistory history;
  std::vector<std::size_t> order(data.train_images.size());
  for (std::size_t e = 0; e < cfg.max_epochs; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - start);
      Tensor<T> batch({count, channels, crop, crop});
      std::vector<std::size_t> labels(count);
      const std::size_t per = channels * crop * crop;
      for (std::size_t b = 0; b < count; ++b) {
        const std::size_t idx = order[start + b];
        const auto c = sample_crop(data.train_images[idx], crop, rng, cfg.flip);
        std::copy(c.tensor.data().begin(), c.tensor.data().end(),
                  batch.data().begin() + static_cast<std::ptrdiff_t>(b * per));
        labels[b] = data.train_labels[idx];
      }
      loss_sum += static_cast<double>(train_step(net, batch, labels, cfg, rng)) * count;
    }

    std::vector<PredictionRecord> val;
    double val_loss = 0.0;
    for (std::size_t i = 0; i < data.val_images.size(); ++i) {
      PredictionRecord rec;
      rec.image_id = std::to_string(i);
      rec.label = data.val_labels[i];
      rec.posteriors[0] = predict_full_image(net, data.val_images[i]);
      val_loss -= std::log(std::max(rec.posteriors[0][rec.label], 1e-12));
      val.push_back(std::move(rec));
    }
    val_loss /= static_cast<double>(val.size());
    if (!std::isfinite(val_loss)) {
      throw DivergenceError("training diverged: non-finite validation loss at epoch " +
                            std::to_string(net.epoch + 1));
    }
    double mca = std::numeric_limits<double>::quiet_NaN();
    try {
      const std::size_t key[] = {0};
      mca = compute_metrics(val, key).mca;
    } catch (const std::invalid_argument&) {
      // some class has no validation image
    }
    ++net.epoch;
    EpochRecord rec{net.epoch, loss_sum / static_cast<double>(order.size()), val_loss, mca,
                    net.learning_rate};
    history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    net.learning_rate = schedule.observe(val_loss);
    if (net.learning_rate < cfg.min_lr) break;
  }
  return history;
}

void write_history_csv(const TrainHistory& history, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,train_loss,val_loss,val_mca,lr\n";
  char buf[160];
  for (const auto& e : history.epochs) {
    std::snprintf(buf, sizeof buf, "%zu,%.8g,%.8g,%.4f,%.8g\n", e.epoch, e.train_loss, e.val_loss,
                  e.val_mca, e.lr);
    out << buf;
  }
}

namespace {
fs::path sidecar_path(const fs::path& path) {
  fs::path p = path;
  p.replace_extension(".json");
  return p;
}
}  // namespace

template <typename T>
void save_checkpoint(const Network<T>& net, const fs::path& path) {
  std::vector<Tensor<T>> tensors;
  for (const auto& p : net.params) {
    tensors.push_back(p.weights);
    tensors.push_back(p.bias);
  }
  for (const auto& v : net.velocity) {
    tensors.push_back(v.weights);
    tensors.push_back(v.bias);
  }
  save_tensors(path, tensors);
  json j{{"format", "scalestack-checkpoint"},
         {"tensors", path.filename().string()},
         {"precision", sizeof(T) == 4 ? "f32" : "f64"},
         {"config", config_to_json(net.config)},
         {"epoch", net.epoch},
         {"scale", net.scale},
         {"class_names", net.class_names},
         {"learning_rate", net.learning_rate},
         {"normalization", {{"mean", net.channel_mean}}}};
  std::ofstream out(sidecar_path(path), std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + sidecar_path(path).string());
  out << j.dump(2) << '\n';
}

template <typename T>
Network<T> load_checkpoint(const fs::path& path) {
  std::ifstream in(sidecar_path(path));
  if (!in) throw std::runtime_error("missing checkpoint sidecar " + sidecar_path(path).string());
  const json j = json::parse(in);
  Network<T> net;
  net.config = config_from_json(j.at("config"));
  net.epoch = j.at("epoch").get<std::size_t>();
  net.scale = j.value("scale", std::size_t{0});
  net.class_names = j.value("class_names", std::vector<std::string>{});
  net.learning_rate = j.at("learning_rate").get<double>();
  net.channel_mean = j.at("normalization").at("mean").get<std::vector<double>>();
  auto tensors = load_tensors<T>(path);
  const std::size_t convs = net.config.num_conv_layers();
  if (tensors.size() != 4 * convs) {
    throw FormatError("checkpoint " + path.string() + " holds " + std::to_string(tensors.size()) +
                      " tensors, expected " + std::to_string(4 * convs));
  }
  Rng unused(0);
  const auto shapes = build_network<T>(net.config, unused);
  for (std::size_t i = 0; i < convs; ++i) {
    ConvParams<T> p{std::move(tensors[2 * i]), std::move(tensors[2 * i + 1])};
    ConvParams<T> v{std::move(tensors[2 * (convs + i)]), std::move(tensors[2 * (convs + i) + 1])};
    if (p.weights.shape() != shapes.params[i].weights.shape() ||
        p.bias.shape() != shapes.params[i].bias.shape() ||
        v.weights.shape() != p.weights.shape() || v.bias.shape() != p.bias.shape()) {
      throw FormatError("checkpoint tensor shapes do not match the stored config");
    }
    net.params.push_back(std::move(p));
    net.velocity.push_back(std::move(v));
  }
  return net;
}

#define SCALESTACK_INSTANTIATE_NETWORK(T)                                                        \
  template Network<T> build_network<T>(const NetworkConfig&, Rng&);                              \
  template ForwardResult<T> forward(const Network<T>&, const Tensor<T>&, bool, Rng&);            \
  template Gradients<T> backward(const Network<T>&, const ForwardCache<T>&, const Tensor<T>&,    \
                                 ReluGate, bool, GateTrace<T>*);                                 \
  template LossAndGradients<T> loss_and_gradients(const Network<T>&, const Tensor<T>&,           \
                                                  std::span<const std::size_t>, bool, Rng&);     \
  template void sgd_update(Network<T>&, const Gradients<T>&, const TrainConfig&);                \
  template double clip_gradients(Gradients<T>&, double);                                         \
  template T train_step(Network<T>&, const Tensor<T>&, std::span<const std::size_t>,            \
                        const TrainConfig&, Rng&);                                               \
  template std::vector<double> predict_full_image(const Network<T>&, const Image&);             \
  template TrainHistory train(Network<T>&, const ScaleData&, const TrainConfig&,                 \
                              const EpochCallback&);                                             \
  template void save_checkpoint(const Network<T>&, const fs::path&);                             \
  template Network<T> load_checkpoint<T>(const fs::path&);

SCALESTACK_INSTANTIATE_NETWORK(float)
SCALESTACK_INSTANTIATE_NETWORK(double)

}  // namespace scalestack
