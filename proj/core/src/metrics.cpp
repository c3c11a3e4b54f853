#include "admd/metrics.hpp"

#include <fstream>

#include <torch/torch.h>

#include "admd/errors.hpp"

namespace admd::evaluation {

LogitFn stream_logits(models::StreamEncoder encoder, data::Modality modality) {
  return [encoder, modality](const data::ClipBatch& batch) mutable {
    return encoder->forward(batch.modality(modality)).logits;
  };
}

torch::Tensor predict(const LogitFn& model, const data::Split& split, std::int64_t batch_size) {
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> chunks;
  for (std::int64_t begin = 0; begin < split.size(); begin += batch_size) {
    chunks.push_back(model(split.slice(begin, std::min(split.size(), begin + batch_size))));
  }
  if (chunks.empty()) return torch::empty({0, 0});
  return torch::cat(chunks, 0);
}

double accuracy(const torch::Tensor& logits, const torch::Tensor& labels) {
  if (logits.size(0) != labels.size(0)) {
    throw ShapeError("accuracy: " + std::to_string(logits.size(0)) + " predictions for " +
                     std::to_string(labels.size(0)) + " labels");
  }
  if (labels.size(0) == 0) return 0.0;
  return logits.argmax(1).eq(labels).to(torch::kFloat64).mean().item<double>();
}

double split_accuracy(const LogitFn& model, const data::Split& split, std::int64_t batch_size) {
  return accuracy(predict(model, split, batch_size), split.class_label);
}

}  // namespace admd::evaluation

namespace admd {

void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : records) out << r.dump() << '\n';
}

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  }
  return out;
}

}  // namespace admd
