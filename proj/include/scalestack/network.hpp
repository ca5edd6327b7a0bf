#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "scalestack/image.hpp"
#include "scalestack/ops.hpp"
#include "scalestack/rng.hpp"
#include "scalestack/tensor.hpp"

namespace scalestack {

enum class LayerKind { conv, dropout, global_pool, softmax };

struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  std::string name;
  ConvSpec conv;        // conv layers only
  bool relu = false;    // conv layers only
  double dropout = 0.0; // dropout layers only
};

struct NetworkConfig {
  std::string preset;
  std::vector<LayerSpec> layers;
  std::size_t num_classes = 0;
  std::size_t in_channels = 3;
  std::size_t crop_size = 0;

  // Throws std::invalid_argument describing the first broken rule.
  void validate() const;
  // Smallest square input for which every layer produces at least 1x1.
  std::size_t min_input_size() const;
  std::size_t num_conv_layers() const;
};

// Single-scale architecture with 96/256/384/1024 filters, crop 224.
NetworkConfig full_preset(std::size_t num_classes);
// Same three-block + 1x1 head layout at 16/32/48/128 filters, crop 64,
// with a 5x5/2 stem so the minimum input (29 px) fits the coarsest desk scale.
NetworkConfig desk_preset(std::size_t num_classes);
NetworkConfig make_preset(std::string_view name, std::size_t num_classes);

struct TrainConfig {
  double learning_rate = 1e-2;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double lr_decay_factor = 10.0;
  std::size_t plateau_patience = 3;
  double min_delta = 1e-4;
  double min_lr = 1e-5;
  std::size_t batch_size = 16;
  std::size_t max_epochs = 60;
  // Rescales the batch gradient (all weights and biases) to at most this L2
  // norm before the momentum update; 0 disables.
  double grad_clip_norm = 1.0;
  std::uint64_t seed = 0;
  bool flip = false;

  void validate() const;
};

template <typename T>
struct ConvParams {
  Tensor<T> weights;
  Tensor<T> bias;
};

template <typename T>
struct Network {
  NetworkConfig config;
  std::vector<ConvParams<T>> params;    // one per conv layer, in layer order
  std::vector<ConvParams<T>> velocity;  // momentum buffers, same shapes
  std::vector<double> channel_mean;     // subtracted from every input
  std::vector<std::string> class_names; // optional, index == label
  std::size_t scale = 0;                // shortest side it was trained at, 0 if unknown
  std::size_t epoch = 0;
  double learning_rate = 0.0;
};

// Initial bias of the class-score conv. Its inputs are post-ReLU and
// nonnegative, so with a zero bias a unit whose weights point the wrong way
// starts dead on nearly every input; with few classes that stalls training.
inline constexpr double kHeadBiasInit = 1.0;

// He-normal weights (std sqrt(2 / fan_in)), zero biases except the class-score
// conv (kHeadBiasInit), zero momentum.
template <typename T>
Network<T> build_network(const NetworkConfig& config, Rng& rng);

template <typename T>
struct ForwardCache {
  std::vector<Tensor<T>> conv_inputs;      // per conv layer
  std::vector<Tensor<T>> pre_activations;  // per conv layer (before ReLU)
  std::vector<Tensor<T>> dropout_masks;    // per dropout layer
  Shape pooled_shape;                      // input shape of the global pool
};

template <typename T>
struct ForwardResult {
  Tensor<T> logits;      // N x K, output of the global pool
  Tensor<T> posteriors;  // N x K
  ForwardCache<T> cache;
};

// batch: N x C x h x w raw pixels; mean subtraction happens here.
template <typename T>
ForwardResult<T> forward(const Network<T>& net, const Tensor<T>& batch, bool training, Rng& rng);

enum class ReluGate { standard, guided };

// Per-ReLU record of the gradient arriving at the gate and what it let through.
template <typename T>
struct GateTrace {
  std::vector<Tensor<T>> forward_inputs;
  std::vector<Tensor<T>> incoming;
  std::vector<Tensor<T>> passed;
};

template <typename T>
struct Gradients {
  std::vector<ConvParams<T>> params;
  Tensor<T> input;  // only when requested
};

// Backpropagates a gradient on the pooled class scores (N x K).
template <typename T>
Gradients<T> backward(const Network<T>& net, const ForwardCache<T>& cache,
                      const Tensor<T>& grad_logits, ReluGate gate, bool need_input_grad,
                      GateTrace<T>* trace = nullptr);

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
struct LossAndGradients {
  T loss;
  Tensor<T> posteriors;
  Gradients<T> grads;
};

template <typename T>
LossAndGradients<T> loss_and_gradients(const Network<T>& net, const Tensor<T>& batch,
                                       std::span<const std::size_t> labels, bool training,
                                       Rng& rng);

// v <- momentum * v + g + weight_decay * w (weights only); w <- w - lr * v.
template <typename T>
void sgd_update(Network<T>& net, const Gradients<T>& grads, const TrainConfig& cfg);

// Scales grads in place so their global L2 norm is at most max_norm; returns the norm before.
template <typename T>
double clip_gradients(Gradients<T>& grads, double max_norm);

// One forward/backward/(clip)/update on a batch; returns the pre-update batch loss.
template <typename T>
T train_step(Network<T>& net, const Tensor<T>& batch, std::span<const std::size_t> labels,
             const TrainConfig& cfg, Rng& rng);

// Eval-mode posterior of a whole image; the class map is averaged spatially.
template <typename T>
std::vector<double> predict_full_image(const Network<T>& net, const Image& img);

// Divides the learning rate once validation loss fails to improve by more
// than min_delta for `patience` consecutive epochs.
class PlateauSchedule {
 public:
  PlateauSchedule(double lr, double factor, std::size_t patience, double min_delta);
  // Feed one epoch's validation loss; returns the rate for the next epoch.
  double observe(double val_loss);
  double lr() const { return lr_; }

 private:
  double lr_;
  double factor_;
  std::size_t patience_;
  double min_delta_;
  double best_;
  std::size_t bad_epochs_ = 0;
};

struct ScaleData {
  std::vector<Image> train_images;
  std::vector<std::size_t> train_labels;
  std::vector<Image> val_images;
  std::vector<std::size_t> val_labels;
  std::size_t num_classes = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_mca = 0.0;
  double lr = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Random crops (one per training image per epoch), full-image validation.
template <typename T>
TrainHistory train(Network<T>& net, const ScaleData& data, const TrainConfig& cfg,
                   const EpochCallback& on_epoch = {});

void write_history_csv(const TrainHistory& history, const std::filesystem::path& path);

// Checkpoint = tensor container (weights, biases, then momentum buffers, per
// conv layer) plus a JSON sidecar (`path` with a .json extension) holding config, epoch,
// learning rate and normalization statistics.
template <typename T>
void save_checkpoint(const Network<T>& net, const std::filesystem::path& path);

template <typename T>
Network<T> load_checkpoint(const std::filesystem::path& path);

}  // namespace scalestack
