#include "admd/models.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "admd/errors.hpp"
#include "admd/rng.hpp"
#include "admd/tensor_io.hpp"

namespace admd::models {
namespace nn = torch::nn;
using json = nlohmann::json;

namespace {

nn::Conv2d conv(int in, int out, int kernel, int stride = 1, int padding = 0, bool bias = true,
                int groups = 1) {
  return nn::Conv2d(
      nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding).bias(bias).groups(groups));
}

int ceil_half(int n) { return (n + 1) / 2; }

}  // namespace

std::string to_string(BottleneckVariant v) {
  switch (v) {
    case BottleneckVariant::None: return "none";
    case BottleneckVariant::OneConv: return "one-conv";
    case BottleneckVariant::SpatialConvThen1d: return "spatial-conv+1d-conv";
    case BottleneckVariant::PoolConv: return "pool+conv";
    case BottleneckVariant::FcAfterPool: return "fc-after-pool";
  }
  return "?";
}

BottleneckVariant bottleneck_from_string(const std::string& name) {
  for (auto v : {BottleneckVariant::None, BottleneckVariant::OneConv,
                 BottleneckVariant::SpatialConvThen1d, BottleneckVariant::PoolConv,
                 BottleneckVariant::FcAfterPool}) {
    if (to_string(v) == name) return v;
  }
  throw ConfigError("unknown bottleneck variant '" + name +
                    "' (expected none, one-conv, spatial-conv+1d-conv, pool+conv, fc-after-pool)");
}

// --- EncoderConfig -------------------------------------------------------------------

std::vector<int> EncoderConfig::stage_widths() const {
  std::vector<int> out;
  for (int w : widths) out.push_back(std::max(1, static_cast<int>(std::lround(w * width_multiplier))));
  return out;
}

int EncoderConfig::final_map_width() const {
  return feature_width > 0 ? feature_width : stage_widths().back();
}

int EncoderConfig::final_map_size() const {
  int s = ceil_half(image_size);  // stem
  for (std::size_t stage = 1; stage < widths.size(); ++stage) s = ceil_half(s);
  return s;
}

int EncoderConfig::feature_dim() const {
  return bottleneck == BottleneckVariant::None ? final_map_width() : bottleneck_dim;
}

void EncoderConfig::validate() const {
  std::vector<std::string> problems;
  if (num_classes < 1) problems.emplace_back("number of classes must be positive");
  if (frames < 1) problems.emplace_back("frames per clip must be positive");
  if (image_size < 4) problems.emplace_back("image size must be at least 4");
  if (widths.empty()) problems.emplace_back("backbone needs at least one stage width");
  for (int w : widths) {
    if (w < 1) problems.emplace_back("backbone widths must be positive");
  }
  if (!(width_multiplier > 0.0)) problems.emplace_back("width multiplier must be positive");
  if (units_per_stage < 2) {
    problems.emplace_back("each stage needs at least two residual units (the second hosts the temporal convolution)");
  }
  if (feature_width < 0) problems.emplace_back("feature width must be nonnegative");
  if (bottleneck_dim < 1) problems.emplace_back("bottleneck dimension must be positive");
  if (!problems.empty()) throw ConfigError(std::move(problems));
}

json EncoderConfig::to_json() const {
  return json{{"num_classes", num_classes},
              {"frames", frames},
              {"image_size", image_size},
              {"widths", widths},
              {"width_multiplier", width_multiplier},
              {"units_per_stage", units_per_stage},
              {"feature_width", feature_width},
              {"bottleneck", to_string(bottleneck)},
              {"bottleneck_dim", bottleneck_dim}};
}

EncoderConfig EncoderConfig::from_json(const json& j) {
  EncoderConfig c;
  c.num_classes = j.at("num_classes").get<int>();
  c.frames = j.at("frames").get<int>();
  c.image_size = j.at("image_size").get<int>();
  c.widths = j.at("widths").get<std::vector<int>>();
  c.width_multiplier = j.at("width_multiplier").get<double>();
  c.units_per_stage = j.at("units_per_stage").get<int>();
  c.feature_width = j.at("feature_width").get<int>();
  c.bottleneck = bottleneck_from_string(j.at("bottleneck").get<std::string>());
  c.bottleneck_dim = j.at("bottleneck_dim").get<int>();
  return c;
}

// --- layers --------------------------------------------------------------------------

TemporalConvImpl::TemporalConvImpl(int channels) {
  weight = register_parameter("weight", torch::zeros({channels, channels, 3, 1, 1}));
  reset_identity();
}

void TemporalConvImpl::reset_identity() {
  torch::NoGradGuard no_grad;
  weight.zero_();
  const auto channels = weight.size(0);
  weight.select(2, 1).squeeze(-1).squeeze(-1).copy_(torch::eye(channels));
}

torch::Tensor TemporalConvImpl::forward(const torch::Tensor& x, std::int64_t frames) {
  const auto n = x.size(0);
  if (n % frames != 0) throw ShapeError("temporal conv: batch*time not divisible by time");
  const auto c = x.size(1), h = x.size(2), w = x.size(3);
  auto volume = x.view({n / frames, frames, c, h, w}).permute({0, 2, 1, 3, 4});
  auto y = torch::conv3d(volume, weight, {}, /*stride=*/1, /*padding=*/torch::IntArrayRef{1, 0, 0});
  return y.permute({0, 2, 1, 3, 4}).reshape({n, c, h, w});
}

ResidualUnitImpl::ResidualUnitImpl(int in_channels, int out_channels, int stride, bool temporal) {
  conv1_ = register_module("conv1", conv(in_channels, out_channels, 3, stride, 1));
  conv2_ = register_module("conv2", conv(out_channels, out_channels, 3, 1, 1));
  if (stride != 1 || in_channels != out_channels) {
    shortcut_ = register_module("shortcut", conv(in_channels, out_channels, 1, stride, 0, false));
  }
  if (temporal) temporal_ = register_module("temporal", TemporalConv(out_channels));
}

torch::Tensor ResidualUnitImpl::forward(const torch::Tensor& x, std::int64_t frames) {
  auto h = torch::relu(conv1_->forward(x));
  if (!temporal_.is_empty()) h = temporal_->forward(h, frames);
  h = conv2_->forward(h);
  auto skip = shortcut_.is_empty() ? x : shortcut_->forward(x);
  return torch::relu(h + skip);
}

BottleneckImpl::BottleneckImpl(BottleneckVariant variant, int in_channels, int spatial, int dim)
    : variant_(variant), output_dim_(variant == BottleneckVariant::None ? in_channels : dim) {
  switch (variant) {
    case BottleneckVariant::None:
      break;
    case BottleneckVariant::OneConv:
      conv_ = register_module("conv", conv(in_channels, dim, spatial));
      break;
    case BottleneckVariant::SpatialConvThen1d:
      spatial_ = register_module("spatial", conv(in_channels, in_channels, spatial, 1, 0, true, in_channels));
      conv_ = register_module("conv", conv(in_channels, dim, 1));
      break;
    case BottleneckVariant::PoolConv:
      conv_ = register_module("conv", conv(in_channels, dim, 1));
      break;
    case BottleneckVariant::FcAfterPool:
      fc_ = register_module("fc", nn::Linear(in_channels, dim));
      break;
  }
  // MSRA init for the freshly added reduction layers.
  torch::NoGradGuard no_grad;
  for (auto& p : named_parameters(/*recurse=*/true)) {
    if (p.key().find("weight") != std::string::npos) {
      nn::init::kaiming_normal_(p.value(), 0.0, torch::kFanIn, torch::kLinear);
    } else {
      p.value().zero_();
    }
  }
}

torch::Tensor BottleneckImpl::forward(const torch::Tensor& map) {
  switch (variant_) {
    case BottleneckVariant::None:
      return map.mean({2, 3});
    case BottleneckVariant::OneConv:
      return conv_->forward(map).flatten(1);
    case BottleneckVariant::SpatialConvThen1d:
      return conv_->forward(spatial_->forward(map)).flatten(1);
    case BottleneckVariant::PoolConv:
      return conv_->forward(map.mean({2, 3}, /*keepdim=*/true)).flatten(1);
    case BottleneckVariant::FcAfterPool:
      return fc_->forward(map.mean({2, 3}));
  }
  return map;
}

Bottleneck build_bottleneck(BottleneckVariant variant, int in_channels, int spatial, int dim) {
  if (in_channels < 1 || spatial < 1 || dim < 1) throw ConfigError("bottleneck dimension must be positive");
  return Bottleneck(variant, in_channels, spatial, dim);
}

// --- StreamEncoder -------------------------------------------------------------------

StreamEncoderImpl::StreamEncoderImpl(EncoderConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto widths = config_.stage_widths();
  stem_ = register_module("stem", conv(3, widths.front(), 3, 2, 1));
  int in = widths.front();
  for (std::size_t stage = 0; stage < widths.size(); ++stage) {
    for (int unit = 0; unit < config_.units_per_stage; ++unit) {
      const int stride = (stage > 0 && unit == 0) ? 2 : 1;
      const bool temporal = unit == 1 && config_.frames > 1;
      auto name = "stage" + std::to_string(stage + 1) + "_unit" + std::to_string(unit + 1);
      units_.push_back(register_module(name, ResidualUnit(in, widths[stage], stride, temporal)));
      in = widths[stage];
    }
  }
  if (config_.feature_width > 0) {
    projection_ = register_module("projection", conv(in, config_.feature_width, 1));
    in = config_.feature_width;
  }
  bottleneck_ = register_module(
      "bottleneck", build_bottleneck(config_.bottleneck, in, config_.final_map_size(), config_.bottleneck_dim));
  head_ = register_module("head", nn::Linear(bottleneck_->output_dim(), config_.num_classes));
}

torch::Tensor StreamEncoderImpl::backbone(const torch::Tensor& frames, std::int64_t time) {
  auto x = torch::relu(stem_->forward(frames));
  for (auto& unit : units_) x = unit->forward(x, time);
  if (!projection_.is_empty()) x = torch::relu(projection_->forward(x));
  return x;
}

torch::Tensor StreamEncoderImpl::features(const torch::Tensor& clips) {
  if (clips.dim() != 5 || clips.size(4) != 3) {
    throw ShapeError("encoder input must be [B, T, H, W, 3], got " + std::to_string(clips.dim()) + " dims");
  }
  const auto b = clips.size(0), t = clips.size(1);
  if (t != config_.frames) {
    throw ShapeError("encoder expects " + std::to_string(config_.frames) + " frames per clip, got " +
                     std::to_string(t));
  }
  auto frames = clips.permute({0, 1, 4, 2, 3}).reshape({b * t, 3, clips.size(2), clips.size(3)});
  auto map = backbone(frames, t);
  return bottleneck_->forward(map).view({b, t, -1});
}

torch::Tensor StreamEncoderImpl::classify(const torch::Tensor& features) {
  return head_->forward(features).mean(1);
}

StreamOutput StreamEncoderImpl::forward(const torch::Tensor& clips) {
  auto f = features(clips);
  return {f, classify(f)};
}

std::vector<TemporalConv> StreamEncoderImpl::temporal_layers() const {
  std::vector<TemporalConv> out;
  for (const auto& unit : units_) {
    if (unit->has_temporal()) out.push_back(const_cast<ResidualUnitImpl&>(*unit).temporal());
  }
  return out;
}

std::vector<torch::Tensor> StreamEncoderImpl::head_parameters() const { return head_->parameters(); }

std::vector<torch::Tensor> StreamEncoderImpl::trunk_parameters() const {
  std::vector<torch::Tensor> out;
  for (const auto& p : named_parameters()) {
    if (p.key().rfind("head.", 0) != 0) out.push_back(p.value());
  }
  return out;
}

StreamEncoder build_encoder(const EncoderConfig& config, std::uint64_t init_seed) {
  torch::manual_seed(init_seed);
  return StreamEncoder(config);
}

void init_temporal_identity(StreamEncoderImpl& encoder) {
  for (auto& layer : encoder.temporal_layers()) layer->reset_identity();
}

// --- discriminators -------------------------------------------------------------------

std::string to_string(DiscriminatorVariant v) {
  return v == DiscriminatorVariant::Shallow ? "shallow" : "deep-with-skips";
}

DiscriminatorVariant discriminator_from_string(const std::string& name) {
  if (name == "shallow") return DiscriminatorVariant::Shallow;
  if (name == "deep-with-skips") return DiscriminatorVariant::DeepWithSkips;
  throw ConfigError("unknown discriminator variant '" + name + "' (expected shallow or deep-with-skips)");
}

std::vector<int> DiscriminatorConfig::hidden_widths() const {
  const std::vector<int> literal = variant == DiscriminatorVariant::Shallow
                                       ? std::vector<int>{2048, 1024}
                                       : std::vector<int>{1024, 1024, 1024, 2048, 3072};
  std::vector<int> out;
  for (int w : literal) out.push_back(std::max(4, static_cast<int>(std::lround(w * width_scale))));
  return out;
}

void DiscriminatorConfig::validate() const {
  std::vector<std::string> problems;
  if (feature_dim < 1) problems.emplace_back("discriminator feature dimension must be positive");
  if (conditioning_dim < 0) problems.emplace_back("discriminator conditioning dimension must be nonnegative");
  if (num_outputs < 2) problems.emplace_back("discriminator needs at least two outputs");
  if (!(width_scale > 0.0)) problems.emplace_back("discriminator width scale must be positive");
  if (!problems.empty()) throw ConfigError(std::move(problems));
}

json DiscriminatorConfig::to_json() const {
  return json{{"variant", to_string(variant)},
              {"feature_dim", feature_dim},
              {"conditioning_dim", conditioning_dim},
              {"num_outputs", num_outputs},
              {"width_scale", width_scale}};
}

DiscriminatorConfig DiscriminatorConfig::from_json(const json& j) {
  DiscriminatorConfig c;
  c.variant = discriminator_from_string(j.at("variant").get<std::string>());
  c.feature_dim = j.at("feature_dim").get<int>();
  c.conditioning_dim = j.at("conditioning_dim").get<int>();
  c.num_outputs = j.at("num_outputs").get<int>();
  c.width_scale = j.at("width_scale").get<double>();
  return c;
}

DiscriminatorImpl::DiscriminatorImpl(DiscriminatorConfig config) : config_(std::move(config)) {
  config_.validate();
  int in = config_.input_dim();
  int index = 0;
  for (int width : config_.hidden_widths()) {
    layers_.push_back(register_module("fc" + std::to_string(++index), nn::Linear(in, width)));
    in = width;
  }
  layers_.push_back(register_module("fc" + std::to_string(++index), nn::Linear(in, config_.num_outputs)));
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& input) {
  if (input.dim() != 2 || input.size(1) != config_.input_dim()) {
    throw ShapeError("discriminator input: expected [N, " + std::to_string(config_.input_dim()) +
                     "], got last dim " + std::to_string(input.size(-1)));
  }
  auto act = [](const torch::Tensor& t) { return torch::leaky_relu(t, 0.2); };
  auto x = input;
  const auto hidden = layers_.size() - 1;
  for (std::size_t i = 0; i < hidden; ++i) {
    auto y = act(layers_[i]->forward(x));
    // Deep variant: residual additions across the three equal-width lower layers.
    const bool skip = config_.variant == DiscriminatorVariant::DeepWithSkips && (i == 1 || i == 2);
    x = skip ? y + x : y;
  }
  return layers_.back()->forward(x);
}

Discriminator build_discriminator(const DiscriminatorConfig& config, std::uint64_t init_seed) {
  torch::manual_seed(init_seed);
  return Discriminator(config);
}

torch::Tensor discriminator_forward(DiscriminatorImpl& disc, const torch::Tensor& features,
                                    const std::optional<torch::Tensor>& frame_onehot) {
  const auto& cfg = disc.config();
  if (features.dim() != 2 || features.size(1) != cfg.feature_dim) {
    throw ShapeError("discriminator features: expected dim " + std::to_string(cfg.feature_dim) + ", got " +
                     std::to_string(features.size(-1)));
  }
  if (cfg.conditioning_dim == 0) {
    if (frame_onehot) throw ShapeError("discriminator is unconditioned: expected no frame one-hot, got one");
    return disc.forward(features);
  }
  if (!frame_onehot) {
    throw ShapeError("discriminator expects a frame one-hot of dim " + std::to_string(cfg.conditioning_dim) +
                     ", got none");
  }
  if (frame_onehot->dim() != 2 || frame_onehot->size(1) != cfg.conditioning_dim ||
      frame_onehot->size(0) != features.size(0)) {
    throw ShapeError("frame one-hot: expected [" + std::to_string(features.size(0)) + ", " +
                     std::to_string(cfg.conditioning_dim) + "], got last dim " +
                     std::to_string(frame_onehot->size(-1)));
  }
  return disc.forward(torch::cat({features, frame_onehot->to(features.dtype())}, 1));
}

// --- checkpoints ------------------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[8] = {'A', 'D', 'M', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw CheckpointError("truncated checkpoint");
  return v;
}

struct StoredCheckpoint {
  json descriptor;
  std::vector<std::pair<std::string, torch::Tensor>> tensors;
};

StoredCheckpoint read_checkpoint(const std::filesystem::path& path, bool with_tensors) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw CheckpointError(path.string() + " is not an admd checkpoint");
  }
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw CheckpointError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto len = get<std::uint64_t>(in);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  StoredCheckpoint ck;
  ck.descriptor = json::parse(text);
  if (!with_tensors) return ck;
  const auto count = get<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    try {
      ck.tensors.emplace_back(name, io::read_tensor(in));
    } catch (const DataError& e) {
      throw CheckpointError(path.string() + ": " + e.what());
    }
  }
  return ck;
}

}  // namespace

std::vector<std::pair<std::string, torch::Tensor>> named_state(const torch::nn::Module& module) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& p : module.named_parameters()) out.emplace_back(p.key(), p.value());
  for (const auto& b : module.named_buffers()) out.emplace_back(b.key(), b.value());
  return out;
}

std::uint64_t parameter_hash(const torch::nn::Module& module) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, t] : named_state(module)) {
    h = fnv1a64(name, h);
    h = io::tensor_fingerprint(t, h);
  }
  return h;
}

void save_checkpoint(const std::filesystem::path& path, const torch::nn::Module& module,
                     const std::string& kind, const json& architecture, const std::string& config_hash) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  json descriptor{{"format", "admd-checkpoint"},
                  {"version", kCheckpointVersion},
                  {"kind", kind},
                  {"architecture", architecture},
                  {"config_hash", config_hash}};
  const auto text = descriptor.dump();
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    out.write(kCheckpointMagic, 8);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    const auto state = named_state(module);
    put<std::uint64_t>(out, state.size());
    for (const auto& [name, t] : state) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      io::write_tensor(out, t);
    }
  }
  std::filesystem::rename(tmp, path);
}

json read_checkpoint_descriptor(const std::filesystem::path& path) {
  return read_checkpoint(path, false).descriptor;
}

void load_checkpoint(const std::filesystem::path& path, torch::nn::Module& module, const std::string& kind,
                     const json& architecture) {
  auto ck = read_checkpoint(path, true);
  if (ck.descriptor.value("kind", std::string()) != kind) {
    throw CheckpointError(path.string() + ": expected a " + kind + " checkpoint, found " +
                          ck.descriptor.value("kind", std::string("?")));
  }
  if (ck.descriptor.at("architecture") != architecture) {
    throw CheckpointError(path.string() + ": architecture mismatch; stored " +
                          ck.descriptor.at("architecture").dump() + " vs expected " + architecture.dump());
  }
  std::map<std::string, torch::Tensor> stored(ck.tensors.begin(), ck.tensors.end());
  torch::NoGradGuard no_grad;
  for (auto& [name, t] : named_state(module)) {
    auto it = stored.find(name);
    if (it == stored.end()) throw CheckpointError(path.string() + ": missing tensor " + name);
    if (it->second.sizes() != t.sizes()) throw CheckpointError(path.string() + ": shape mismatch for " + name);
    t.copy_(it->second);
  }
}

void save_encoder(const std::filesystem::path& path, StreamEncoderImpl& encoder, const std::string& config_hash) {
  save_checkpoint(path, encoder, "encoder", encoder.config().to_json(), config_hash);
}

StreamEncoder load_encoder(const std::filesystem::path& path) {
  auto descriptor = read_checkpoint_descriptor(path);
  if (descriptor.value("kind", std::string()) != "encoder") {
    throw CheckpointError(path.string() + " is not an encoder checkpoint");
  }
  auto config = EncoderConfig::from_json(descriptor.at("architecture"));
  StreamEncoder encoder(config);
  load_checkpoint(path, *encoder, "encoder", config.to_json());
  return encoder;
}

void save_discriminator(const std::filesystem::path& path, DiscriminatorImpl& disc,
                        const std::string& config_hash) {
  save_checkpoint(path, disc, "discriminator", disc.config().to_json(), config_hash);
}

Discriminator load_discriminator(const std::filesystem::path& path) {
  auto descriptor = read_checkpoint_descriptor(path);
  if (descriptor.value("kind", std::string()) != "discriminator") {
    throw CheckpointError(path.string() + " is not a discriminator checkpoint");
  }
  auto config = DiscriminatorConfig::from_json(descriptor.at("architecture"));
  Discriminator disc(config);
  load_checkpoint(path, *disc, "discriminator", config.to_json());
  return disc;
}

void copy_state(const torch::nn::Module& from, torch::nn::Module& to) {
  auto src = named_state(from);
  auto dst = named_state(to);
  if (src.size() != dst.size()) throw CheckpointError("copy_state: modules have different tensor sets");
  torch::NoGradGuard no_grad;
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].first != dst[i].first || src[i].second.sizes() != dst[i].second.sizes()) {
      throw CheckpointError("copy_state: tensor mismatch at " + src[i].first);
    }
    dst[i].second.copy_(src[i].second);
  }
}

StreamEncoder clone_encoder(StreamEncoderImpl& encoder) {
  StreamEncoder copy(encoder.config());
  copy_state(encoder, *copy);
  return copy;
}

}  // namespace admd::models
