#pragma once

#include <filesystem>
#include <functional>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/types.h>

#include "admd/data.hpp"
#include "admd/models.hpp"

namespace admd::evaluation {

/// Anything that scores a batch of clips: returns logits [B, C].
using LogitFn = std::function<torch::Tensor(const data::ClipBatch&)>;

/// Logits of a stream run on one modality.
LogitFn stream_logits(models::StreamEncoder encoder, data::Modality modality);

/// Evaluation-mode, no-grad logits over a whole split in fixed order: [N, C].
torch::Tensor predict(const LogitFn& model, const data::Split& split, std::int64_t batch_size = 64);

double accuracy(const torch::Tensor& logits, const torch::Tensor& labels);

/// Accuracy of `model` on `split` (predict + accuracy).
double split_accuracy(const LogitFn& model, const data::Split& split, std::int64_t batch_size = 64);

}  // namespace admd::evaluation

namespace admd {

/// Line-delimited JSON metric records.
void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& records);
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

}  // namespace admd
