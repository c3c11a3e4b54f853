#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>
#include <torch/nn/module.h>
#include <torch/nn/modules/container/any.h>
#include <torch/nn/modules/conv.h>
#include <torch/nn/modules/linear.h>
#include <torch/nn/pimpl.h>

namespace admd::models {

enum class BottleneckVariant { None, OneConv, SpatialConvThen1d, PoolConv, FcAfterPool };

std::string to_string(BottleneckVariant v);
BottleneckVariant bottleneck_from_string(const std::string& name);

/// Architecture of one stream: residual backbone (stem + three stages),
/// a 1x1 projection of the last map to `feature_width` channels, a
/// bottleneck to `bottleneck_dim`, and a linear classifier per frame.
struct EncoderConfig {
  int num_classes = 4;
  int frames = 5;
  int image_size = 32;
  std::vector<int> widths = {32, 64, 128};
  double width_multiplier = 1.0;
  int units_per_stage = 2;
  int feature_width = 2048;  // 0 keeps the last stage width
  BottleneckVariant bottleneck = BottleneckVariant::PoolConv;
  int bottleneck_dim = 128;

  std::vector<int> stage_widths() const;
  int final_map_width() const;
  int final_map_size() const;
  /// Per-frame feature dimension d (the backbone width for the "none" variant).
  int feature_dim() const;
  void validate() const;

  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
  bool operator==(const EncoderConfig&) const = default;
};

struct StreamOutput {
  torch::Tensor features;  // [B, T, d]
  torch::Tensor logits;    // [B, C]
};

/// 1x1x3 convolution along time over a [B*T, C, H, W] map, zero-padded so T
/// is preserved. Kernels start as the identity: centre tap = I, side taps = 0.
class TemporalConvImpl : public torch::nn::Module {
 public:
  explicit TemporalConvImpl(int channels);

  torch::Tensor forward(const torch::Tensor& x, std::int64_t frames);
  void reset_identity();

  /// [C_out, C_in, 3, 1, 1]
  torch::Tensor weight;
};
TORCH_MODULE(TemporalConv);

class ResidualUnitImpl : public torch::nn::Module {
 public:
  ResidualUnitImpl(int in_channels, int out_channels, int stride, bool temporal);

  torch::Tensor forward(const torch::Tensor& x, std::int64_t frames);
  bool has_temporal() const { return !temporal_.is_empty(); }
  TemporalConv& temporal() { return temporal_; }

 private:
  torch::nn::Conv2d conv1_{nullptr};
  torch::nn::Conv2d conv2_{nullptr};
  torch::nn::Conv2d shortcut_{nullptr};
  TemporalConv temporal_{nullptr};
};
TORCH_MODULE(ResidualUnit);

/// Maps the final [N, C, h, w] feature map to one vector per frame.
class BottleneckImpl : public torch::nn::Module {
 public:
  BottleneckImpl(BottleneckVariant variant, int in_channels, int spatial, int dim);

  torch::Tensor forward(const torch::Tensor& map);
  BottleneckVariant variant() const { return variant_; }
  int output_dim() const { return output_dim_; }

 private:
  BottleneckVariant variant_;
  int output_dim_;
  torch::nn::Conv2d conv_{nullptr};
  torch::nn::Conv2d spatial_{nullptr};
  torch::nn::Linear fc_{nullptr};
};
TORCH_MODULE(Bottleneck);

Bottleneck build_bottleneck(BottleneckVariant variant, int in_channels, int spatial, int dim);

class StreamEncoderImpl : public torch::nn::Module {
 public:
  explicit StreamEncoderImpl(EncoderConfig config);

  /// clips: [B, T, H, W, 3] -> per-frame features and per-clip logits.
  StreamOutput forward(const torch::Tensor& clips);

  /// Per-frame features [B, T, d] only (skips the classifier).
  torch::Tensor features(const torch::Tensor& clips);

  /// Final backbone map for [B*T, 3, H, W] frames (before the bottleneck).
  torch::Tensor backbone(const torch::Tensor& frames, std::int64_t time);

  /// Classifier head on per-frame features: mean over time of per-frame logits.
  torch::Tensor classify(const torch::Tensor& features);

  std::vector<TemporalConv> temporal_layers() const;
  std::vector<torch::Tensor> head_parameters() const;
  /// Everything except the classifier head.
  std::vector<torch::Tensor> trunk_parameters() const;

  const EncoderConfig& config() const { return config_; }

 private:
  EncoderConfig config_;
  torch::nn::Conv2d stem_{nullptr};
  std::vector<ResidualUnit> units_;
  torch::nn::Conv2d projection_{nullptr};
  Bottleneck bottleneck_{nullptr};
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(StreamEncoder);

/// Builds an encoder whose random initialization is fully determined by `init_seed`.
/// Temporal kernels are created as identities and draw no randomness, so the
/// same seed yields identical spatial weights in video and single-image mode.
StreamEncoder build_encoder(const EncoderConfig& config, std::uint64_t init_seed);

/// Resets every temporal kernel to the [0, 1, 0] identity.
void init_temporal_identity(StreamEncoderImpl& encoder);

// --- discriminators -----------------------------------------------------------------

enum class DiscriminatorVariant { Shallow, DeepWithSkips };

std::string to_string(DiscriminatorVariant v);
DiscriminatorVariant discriminator_from_string(const std::string& name);

struct DiscriminatorConfig {
  DiscriminatorVariant variant = DiscriminatorVariant::Shallow;
  int feature_dim = 128;
  /// Length of the frame one-hot concatenated to the features (0: none).
  int conditioning_dim = 5;
  /// C + 1 for the extended-label game, 2 for the binary game.
  int num_outputs = 5;
  /// Multiplier on the literal layer widths (2048/1024 and 1024.../3072).
  double width_scale = 0.25;

  int input_dim() const { return feature_dim + conditioning_dim; }
  std::vector<int> hidden_widths() const;
  void validate() const;

  nlohmann::json to_json() const;
  static DiscriminatorConfig from_json(const nlohmann::json& j);
  bool operator==(const DiscriminatorConfig&) const = default;
};

/// Fully connected discriminator. Shallow: fc(2048) fc(1024) fc(out).
/// Deep-with-skips: three fc(1024) with residual additions, fc(2048),
/// fc(3072), fc(out). Widths are multiplied by `width_scale`.
class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(DiscriminatorConfig config);

  /// input: [N, feature_dim + conditioning_dim] -> logits [N, num_outputs]
  torch::Tensor forward(const torch::Tensor& input);

  const DiscriminatorConfig& config() const { return config_; }

 private:
  DiscriminatorConfig config_;
  std::vector<torch::nn::Linear> layers_;
};
TORCH_MODULE(Discriminator);

Discriminator build_discriminator(const DiscriminatorConfig& config, std::uint64_t init_seed);

/// Concatenates [features ; frame one-hot] and runs the discriminator.
/// The one-hot must be given exactly when the discriminator is conditioned.
torch::Tensor discriminator_forward(DiscriminatorImpl& disc, const torch::Tensor& features,
                                    const std::optional<torch::Tensor>& frame_onehot);

// --- checkpoints ---------------------------------------------------------------------

/// Parameters and buffers in registration order.
std::vector<std::pair<std::string, torch::Tensor>> named_state(const torch::nn::Module& module);

/// Fingerprint of every parameter and buffer (names, shapes, raw bytes).
std::uint64_t parameter_hash(const torch::nn::Module& module);

/// Checkpoint file: "ADMDCKPT", u32 version, u64 descriptor length, JSON
/// descriptor ({kind, architecture, config_hash, ...}), u64 tensor count,
/// then (u32 name length, name, tensor record) per named tensor.
void save_checkpoint(const std::filesystem::path& path, const torch::nn::Module& module,
                     const std::string& kind, const nlohmann::json& architecture,
                     const std::string& config_hash = {});

nlohmann::json read_checkpoint_descriptor(const std::filesystem::path& path);

/// Loads tensors into `module`; throws CheckpointError if the stored kind or
/// architecture differs from the expected one or any tensor is missing.
void load_checkpoint(const std::filesystem::path& path, torch::nn::Module& module,
                     const std::string& kind, const nlohmann::json& architecture);

void save_encoder(const std::filesystem::path& path, StreamEncoderImpl& encoder,
                  const std::string& config_hash = {});
StreamEncoder load_encoder(const std::filesystem::path& path);
void save_discriminator(const std::filesystem::path& path, DiscriminatorImpl& disc,
                        const std::string& config_hash = {});
Discriminator load_discriminator(const std::filesystem::path& path);

/// Deep copy of an encoder (same architecture, cloned tensors).
StreamEncoder clone_encoder(StreamEncoderImpl& encoder);
void copy_state(const torch::nn::Module& from, torch::nn::Module& to);

}  // namespace admd::models
