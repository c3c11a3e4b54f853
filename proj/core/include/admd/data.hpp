#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <torch/types.h>

namespace admd::data {

/// A is the modality available at test time (RGB); B is the privileged
/// training-only modality (depth).
enum class Modality { A, B };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& name);

/// Parameters of the procedurally generated paired-modality task.
///
/// Every class owns two pattern banks: a silhouette drawn in modality A and
/// an oriented depth relief (grating) in modality B. `*_informativeness` is
/// the fraction of samples in which a modality shows its class pattern
/// (otherwise a class-neutral distractor). `overlap` is the fraction of each
/// modality's class signal that also leaks into the other one: depth-induced
/// shading in A, silhouette relief in B.
struct SyntheticTaskSpec {
  int num_classes = 4;
  int samples_per_class = 200;
  int image_size = 32;
  int frames_per_clip = 5;
  double modality_a_informativeness = 0.5;
  double modality_b_informativeness = 0.5;
  double overlap = 0.0;
  std::uint64_t seed = 7;

  double test_fraction = 0.25;
  double validation_fraction = 0.1;
  /// Standard deviation of additive per-pixel sensor noise on both modalities.
  double pixel_noise = 0.05;

  /// Throws ConfigError naming every invalid field.
  void validate() const;

  bool operator==(const SyntheticTaskSpec&) const = default;
};

/// Time-aligned paired clips. Modality tensors are [B, T, H, W, 3] float32
/// in [0, 1]; labels are int64 [B]; frame_index_onehot is [B, T, T].
struct ClipBatch {
  torch::Tensor modality_a;
  torch::Tensor modality_b;
  torch::Tensor class_label;
  torch::Tensor frame_index_onehot;

  std::int64_t size() const { return class_label.size(0); }
  std::int64_t frames() const { return modality_a.size(1); }
  const torch::Tensor& modality(Modality m) const {
    return m == Modality::A ? modality_a : modality_b;
  }
};

/// One partition of a dataset held in memory.
struct Split {
  torch::Tensor modality_a;   // [N, T, H, W, 3]
  torch::Tensor modality_b;   // [N, T, H, W, 3]
  torch::Tensor class_label;  // [N] int64
  std::vector<std::string> ids;

  std::int64_t size() const { return class_label.defined() ? class_label.size(0) : 0; }

  ClipBatch gather(const std::vector<std::int64_t>& indices) const;
  ClipBatch slice(std::int64_t begin, std::int64_t end) const;
  ClipBatch all() const { return slice(0, size()); }
};

struct Dataset {
  Split train;
  Split validation;
  Split test;
  int num_classes = 0;
  int frames_per_clip = 0;
  int image_size = 0;
};

Dataset generate_synthetic(const SyntheticTaskSpec& spec);

/// The frame one-hot block y^t for a batch: [batch, T, T], row t = e_t.
torch::Tensor frame_onehot(std::int64_t batch, std::int64_t frames);

/// Indices picked by uniform sampling of `count` frames out of `length`:
/// round(i * (length - 1) / (count - 1)), halves rounded away from zero;
/// a single frame is the middle one.
/// A jitter engine shifts each index uniformly within its half-gap.
std::vector<std::int64_t> uniform_frame_indices(std::int64_t length, std::int64_t count,
                                                std::mt19937_64* jitter = nullptr);

/// Picks `count` frames from a [L, H, W, C] video; returns [count, H, W, C].
torch::Tensor sample_frames(const torch::Tensor& video, std::int64_t count,
                            std::mt19937_64* jitter = nullptr);

/// Standard jet colormap (piecewise linear, blue -> cyan -> yellow -> red).
std::array<float, 3> jet(double v);

/// Normalizes a depth map (or a whole clip of them, [..., H, W]) to [0, 1]
/// over its own min/max and maps it through jet: returns [..., H, W, 3].
/// A constant map lands on jet(0.5).
torch::Tensor encode_depth_jet(const torch::Tensor& depth);

struct NoiseSpec {
  double variance = 0.0;
  std::uint64_t seed = 0;
};

/// Multiplicative speckle: every element times an independent N(1, variance) draw.
torch::Tensor speckle_noise(const torch::Tensor& image, const NoiseSpec& spec);

/// Deterministic mini-batch partition of [0, n): shuffled when `engine` is given.
std::vector<std::vector<std::int64_t>> make_batches(std::int64_t n, std::int64_t batch_size,
                                                    std::mt19937_64* engine);

// --- on-disk datasets --------------------------------------------------------

/// Writes `<dir>/manifest.jsonl` (header line plus one record per sample)
/// and one tensor file per sample and modality under `<dir>/samples/`.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir,
                  const std::optional<SyntheticTaskSpec>& spec = std::nullopt,
                  const std::string& config_hash = {});

/// Reads a manifest written by save_dataset, or a hand-written one whose
/// modality paths are directories of frames (.ppm color, .pgm depth) or
/// tensor files. Frames are uniformly sampled to `frames_per_clip`;
/// single-channel depth frames are jet-encoded per clip.
Dataset load_dataset(const std::filesystem::path& dir, int frames_per_clip = 0);

/// Loads one clip from a directory of frames or a tensor file.
torch::Tensor load_clip(const std::filesystem::path& path, int frames_per_clip);

}  // namespace admd::data
