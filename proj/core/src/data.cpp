#include "admd/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "admd/errors.hpp"
#include "admd/rng.hpp"
#include "admd/tensor_io.hpp"

namespace admd::data {
namespace fs = std::filesystem;
using json = nlohmann::json;

std::string to_string(Modality m) { return m == Modality::A ? "a" : "b"; }

Modality modality_from_string(const std::string& name) {
  if (name == "a" || name == "A" || name == "rgb") return Modality::A;
  if (name == "b" || name == "B" || name == "depth") return Modality::B;
  throw ConfigError("unknown modality '" + name + "' (expected a or b)");
}

void SyntheticTaskSpec::validate() const {
  std::vector<std::string> problems;
  auto unit = [&](double v, const char* field) {
    if (!(v >= 0.0 && v <= 1.0)) problems.push_back(std::string(field) + " must lie in [0, 1]");
  };
  if (num_classes < 1) problems.emplace_back("num_classes must be a positive integer");
  if (samples_per_class < 1) problems.emplace_back("samples_per_class must be a positive integer");
  if (image_size < 8) problems.emplace_back("image_size must be at least 8 pixels");
  if (frames_per_clip < 1) problems.emplace_back("frames_per_clip must be a positive integer");
  unit(modality_a_informativeness, "modality_a_informativeness");
  unit(modality_b_informativeness, "modality_b_informativeness");
  unit(overlap, "overlap");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    problems.emplace_back("test_fraction must lie in (0, 1)");
  }
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    problems.emplace_back("validation_fraction must lie in [0, 1)");
  }
  if (!(pixel_noise >= 0.0)) problems.emplace_back("pixel_noise must be nonnegative");
  if (!problems.empty()) throw ConfigError(std::move(problems));
}

// --- batches -----------------------------------------------------------------

ClipBatch Split::gather(const std::vector<std::int64_t>& indices) const {
  auto idx = torch::tensor(indices, torch::kInt64);
  ClipBatch batch;
  batch.modality_a = modality_a.index_select(0, idx);
  batch.modality_b = modality_b.index_select(0, idx);
  batch.class_label = class_label.index_select(0, idx);
  batch.frame_index_onehot = frame_onehot(batch.size(), modality_a.size(1));
  return batch;
}

ClipBatch Split::slice(std::int64_t begin, std::int64_t end) const {
  ClipBatch batch;
  batch.modality_a = modality_a.slice(0, begin, end);
  batch.modality_b = modality_b.slice(0, begin, end);
  batch.class_label = class_label.slice(0, begin, end);
  batch.frame_index_onehot = frame_onehot(end - begin, modality_a.size(1));
  return batch;
}

torch::Tensor frame_onehot(std::int64_t batch, std::int64_t frames) {
  return torch::eye(frames).unsqueeze(0).expand({batch, frames, frames}).contiguous();
}

std::vector<std::vector<std::int64_t>> make_batches(std::int64_t n, std::int64_t batch_size,
                                                    std::mt19937_64* engine) {
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  if (engine != nullptr) std::shuffle(order.begin(), order.end(), *engine);
  std::vector<std::vector<std::int64_t>> batches;
  for (std::int64_t begin = 0; begin < n; begin += batch_size) {
    const auto end = std::min(n, begin + batch_size);
    batches.emplace_back(order.begin() + begin, order.begin() + end);
  }
  return batches;
}

// --- frame sampling ------------------------------------------------------------

std::vector<std::int64_t> uniform_frame_indices(std::int64_t length, std::int64_t count,
                                                std::mt19937_64* jitter) {
  if (length < 1) throw DataError("cannot sample frames from an empty video");
  if (count < 1) throw ConfigError("frames_per_clip must be a positive integer");
  std::vector<std::int64_t> indices(static_cast<std::size_t>(count));
  if (count == 1) {
    indices[0] = static_cast<std::int64_t>(std::round((length - 1) / 2.0));
    return indices;
  }
  const double step = static_cast<double>(length - 1) / static_cast<double>(count - 1);
  for (std::int64_t i = 0; i < count; ++i) {
    double pos = i * step;
    if (jitter != nullptr && step > 1.0) {
      std::uniform_real_distribution<double> offset(-step / 2.0, step / 2.0);
      pos = std::clamp(pos + offset(*jitter), 0.0, static_cast<double>(length - 1));
    }
    indices[static_cast<std::size_t>(i)] = static_cast<std::int64_t>(std::round(pos));
  }
  if (jitter != nullptr) std::sort(indices.begin(), indices.end());
  return indices;
}

torch::Tensor sample_frames(const torch::Tensor& video, std::int64_t count, std::mt19937_64* jitter) {
  if (!video.defined() || video.dim() < 1 || video.size(0) == 0) {
    throw DataError("cannot sample frames from an empty video");
  }
  auto indices = uniform_frame_indices(video.size(0), count, jitter);
  return video.index_select(0, torch::tensor(indices, torch::kInt64));
}

// --- jet -----------------------------------------------------------------------

namespace {

struct Knot {
  double x, y;
};

double piecewise(const std::vector<Knot>& knots, double v) {
  if (v <= knots.front().x) return knots.front().y;
  for (std::size_t i = 1; i < knots.size(); ++i) {
    if (v <= knots[i].x) {
      const auto& lo = knots[i - 1];
      const auto& hi = knots[i];
      return lo.y + (hi.y - lo.y) * (v - lo.x) / (hi.x - lo.x);
    }
  }
  return knots.back().y;
}

const std::vector<Knot> kJetRed = {{0.0, 0.0}, {0.35, 0.0}, {0.66, 1.0}, {0.89, 1.0}, {1.0, 0.5}};
const std::vector<Knot> kJetGreen = {{0.0, 0.0},  {0.125, 0.0}, {0.375, 1.0},
                                     {0.64, 1.0}, {0.91, 0.0},  {1.0, 0.0}};
const std::vector<Knot> kJetBlue = {{0.0, 0.5}, {0.11, 1.0}, {0.34, 1.0}, {0.65, 0.0}, {1.0, 0.0}};

}  // namespace

std::array<float, 3> jet(double v) {
  v = std::clamp(v, 0.0, 1.0);
  return {static_cast<float>(piecewise(kJetRed, v)), static_cast<float>(piecewise(kJetGreen, v)),
          static_cast<float>(piecewise(kJetBlue, v))};
}

torch::Tensor encode_depth_jet(const torch::Tensor& depth) {
  if (!depth.defined() || depth.dim() < 2) throw ShapeError("depth map must be at least [H, W]");
  auto d = depth.detach().to(torch::kFloat64).contiguous();
  if (!torch::isfinite(d).all().item<bool>()) throw DataError("depth map contains non-finite values");
  const double lo = d.min().item<double>();
  const double hi = d.max().item<double>();
  auto sizes = d.sizes().vec();
  sizes.push_back(3);
  auto out = torch::empty(sizes, torch::kFloat32);
  const auto* src = d.data_ptr<double>();
  auto* dst = out.data_ptr<float>();
  const auto n = d.numel();
  const double range = hi - lo;
  for (std::int64_t i = 0; i < n; ++i) {
    const double v = range > 0.0 ? (src[i] - lo) / range : 0.5;
    const auto rgb = jet(v);
    dst[3 * i + 0] = rgb[0];
    dst[3 * i + 1] = rgb[1];
    dst[3 * i + 2] = rgb[2];
  }
  return out;
}

torch::Tensor speckle_noise(const torch::Tensor& image, const NoiseSpec& spec) {
  if (!(spec.variance >= 0.0)) throw ConfigError("noise variance must be nonnegative");
  if (spec.variance == 0.0) return image.clone();
  auto gen = make_torch_generator(spec.seed);
  auto z = torch::randn(image.sizes(), gen, image.options());
  return image * (1.0 + std::sqrt(spec.variance) * z);
}

// --- synthetic generation --------------------------------------------------------

namespace {

constexpr int kGrid = 4;  // silhouettes live on a 4x4 cell grid
using Silhouette = std::uint16_t;

int hamming(Silhouette a, Silhouette b) { return std::popcount(static_cast<unsigned>(a ^ b)); }

Silhouette random_silhouette(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> bits(0, 0xFFFF);
  while (true) {
    auto s = static_cast<Silhouette>(bits(rng));
    const int on = std::popcount(static_cast<unsigned>(s));
    if (on >= 6 && on <= 11) return s;
  }
}

struct PatternBank {
  std::vector<Silhouette> silhouettes;
  std::vector<double> orientation;  // radians
  std::vector<double> frequency;    // cycles per image width
};

PatternBank make_bank(const SyntheticTaskSpec& spec) {
  auto rng = SeedTree(spec.seed).engine("bank");
  PatternBank bank;
  int min_distance = 5;
  int attempts = 0;
  while (static_cast<int>(bank.silhouettes.size()) < spec.num_classes) {
    auto s = random_silhouette(rng);
    bool ok = true;
    for (auto other : bank.silhouettes) ok = ok && hamming(s, other) >= min_distance;
    if (ok) {
      bank.silhouettes.push_back(s);
    } else if (++attempts > 5000 && min_distance > 1) {
      --min_distance;
      attempts = 0;
    }
  }
  const int orientations = spec.num_classes <= 6 ? spec.num_classes : (spec.num_classes + 1) / 2;
  for (int c = 0; c < spec.num_classes; ++c) {
    bank.orientation.push_back(std::numbers::pi * (c % orientations) / orientations);
    bank.frequency.push_back(3.0 + 1.5 * (c / orientations));
  }
  return bank;
}

/// Distractor silhouette that is not close to any class silhouette.
Silhouette distractor(const PatternBank& bank, std::mt19937_64& rng) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    auto s = random_silhouette(rng);
    bool far = true;
    for (auto c : bank.silhouettes) far = far && hamming(s, c) >= 3;
    if (far) return s;
  }
  return random_silhouette(rng);
}

struct Rendered {
  std::vector<float> rgb;    // [T, S, S, 3]
  std::vector<double> depth; // [T, S, S]
};

constexpr double kGratingAmplitude = 0.12;
constexpr double kSilhouetteRelief = 0.25;
constexpr double kShadingGain = 1.5;

Rendered render_sample(const SyntheticTaskSpec& spec, const PatternBank& bank, int label,
                       std::mt19937_64& rng) {
  const int S = spec.image_size;
  const int T = spec.frames_per_clip;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const bool show_a = unit(rng) < spec.modality_a_informativeness;
  const bool show_b = unit(rng) < spec.modality_b_informativeness;
  const Silhouette silhouette = show_a ? bank.silhouettes[label] : distractor(bank, rng);

  const int cell = std::max(1, static_cast<int>(std::lround(S * 3.0 / 32.0)));
  const int object = cell * kGrid;
  std::array<double, 3> background{}, foreground{};
  for (auto& c : background) c = 0.35 * unit(rng);
  for (auto& c : foreground) c = 0.55 + 0.45 * unit(rng);

  std::uniform_int_distribution<int> place(0, std::max(0, S - object));
  std::uniform_int_distribution<int> step(-1, 1);
  int ox = place(rng), oy = place(rng);
  int vx = step(rng), vy = step(rng);

  const double tilt_x = 0.5 * (unit(rng) - 0.5);
  const double tilt_y = 0.5 * (unit(rng) - 0.5);
  struct Bump {
    double cx, cy, amp;
  };
  std::array<Bump, 2> bumps{};
  for (auto& b : bumps) b = {S * unit(rng), S * unit(rng), 0.2 * (unit(rng) - 0.5)};
  const double bump_sigma2 = (S / 4.0) * (S / 4.0);
  const double theta = bank.orientation[label];
  const double freq = bank.frequency[label];
  const double phase = 2.0 * std::numbers::pi * unit(rng);

  // Static scene relief: bumps plus (when shown) the class grating.
  std::vector<double> relief(static_cast<std::size_t>(S * S));
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      double r = 0.0;
      for (const auto& b : bumps) {
        const double dx = x - b.cx, dy = y - b.cy;
        r += b.amp * std::exp(-(dx * dx + dy * dy) / (2.0 * bump_sigma2));
      }
      if (show_b) {
        const double u = (x * std::cos(theta) + y * std::sin(theta)) / S;
        r += kGratingAmplitude * std::sin(2.0 * std::numbers::pi * freq * u + phase);
      }
      relief[static_cast<std::size_t>(y * S + x)] = r;
    }
  }

  Rendered out;
  out.rgb.resize(static_cast<std::size_t>(T) * S * S * 3);
  out.depth.resize(static_cast<std::size_t>(T) * S * S);
  for (int t = 0; t < T; ++t) {
    for (int y = 0; y < S; ++y) {
      for (int x = 0; x < S; ++x) {
        const int lx = x - ox, ly = y - oy;
        bool inside = false;
        if (lx >= 0 && ly >= 0 && lx < object && ly < object) {
          const int bit = (ly / cell) * kGrid + (lx / cell);
          inside = (silhouette >> bit) & 1U;
        }
        const auto p = static_cast<std::size_t>(y * S + x);
        const double scene = relief[p];
        const double plane = 0.5 + tilt_x * (x / double(S) - 0.5) + tilt_y * (y / double(S) - 0.5);
        const double depth = plane + scene - (inside ? spec.overlap * kSilhouetteRelief : 0.0) +
                             spec.pixel_noise * gauss(rng);
        out.depth[static_cast<std::size_t>(t) * S * S + p] = depth;
        const double shading = spec.overlap * kShadingGain * scene;
        for (int ch = 0; ch < 3; ++ch) {
          const double base = inside ? foreground[ch] : background[ch];
          const double v = base + shading + spec.pixel_noise * gauss(rng);
          out.rgb[(static_cast<std::size_t>(t) * S * S + p) * 3 + ch] =
              static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
    }
    // Advance the object, bouncing off the borders.
    if (ox + vx < 0 || ox + vx > S - object) vx = -vx;
    if (oy + vy < 0 || oy + vy > S - object) vy = -vy;
    ox += vx;
    oy += vy;
  }
  return out;
}

Split make_split(const std::vector<std::int64_t>& members, const torch::Tensor& a,
                 const torch::Tensor& b, const torch::Tensor& labels,
                 const std::vector<std::string>& ids) {
  Split split;
  auto idx = torch::tensor(members, torch::kInt64);
  split.modality_a = a.index_select(0, idx);
  split.modality_b = b.index_select(0, idx);
  split.class_label = labels.index_select(0, idx);
  for (auto m : members) split.ids.push_back(ids[static_cast<std::size_t>(m)]);
  return split;
}

}  // namespace

Dataset generate_synthetic(const SyntheticTaskSpec& spec) {
  spec.validate();
  const auto bank = make_bank(spec);
  const SeedTree seeds(spec.seed);
  const std::int64_t n = static_cast<std::int64_t>(spec.num_classes) * spec.samples_per_class;
  const std::int64_t S = spec.image_size;
  const std::int64_t T = spec.frames_per_clip;

  auto a = torch::empty({n, T, S, S, 3}, torch::kFloat32);
  auto b = torch::empty({n, T, S, S, 3}, torch::kFloat32);
  auto labels = torch::empty({n}, torch::kInt64);
  std::vector<std::string> ids;
  for (std::int64_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % spec.num_classes);
    std::mt19937_64 rng(seeds.seed("sample", static_cast<std::uint64_t>(i)));
    auto r = render_sample(spec, bank, label, rng);
    a[i].copy_(torch::from_blob(r.rgb.data(), {T, S, S, 3}, torch::kFloat32));
    auto depth = torch::from_blob(r.depth.data(), {T, S, S}, torch::kFloat64);
    b[i].copy_(encode_depth_jet(depth));
    labels[i] = label;
    std::ostringstream id;
    id << "s" << std::setw(6) << std::setfill('0') << i;
    ids.push_back(id.str());
  }

  // Stratified, disjoint train / validation / test partition.
  auto split_rng = seeds.engine("split");
  std::vector<std::int64_t> train, validation, test;
  for (int c = 0; c < spec.num_classes; ++c) {
    std::vector<std::int64_t> members;
    for (std::int64_t i = c; i < n; i += spec.num_classes) members.push_back(i);
    std::shuffle(members.begin(), members.end(), split_rng);
    const auto m = static_cast<std::int64_t>(members.size());
    auto n_test = static_cast<std::int64_t>(std::lround(spec.test_fraction * m));
    n_test = std::clamp<std::int64_t>(n_test, 1, std::max<std::int64_t>(1, m - 1));
    const auto remaining = m - n_test;
    const auto n_val = std::min<std::int64_t>(
        remaining > 1 ? remaining - 1 : 0,
        static_cast<std::int64_t>(std::lround(spec.validation_fraction * remaining)));
    for (std::int64_t k = 0; k < m; ++k) {
      auto& dst = k < n_test ? test : (k < n_test + n_val ? validation : train);
      dst.push_back(members[static_cast<std::size_t>(k)]);
    }
  }
  for (auto* v : {&train, &validation, &test}) std::sort(v->begin(), v->end());

  Dataset ds;
  ds.train = make_split(train, a, b, labels, ids);
  ds.validation = make_split(validation, a, b, labels, ids);
  ds.test = make_split(test, a, b, labels, ids);
  ds.num_classes = spec.num_classes;
  ds.frames_per_clip = spec.frames_per_clip;
  ds.image_size = spec.image_size;
  return ds;
}

// --- disk --------------------------------------------------------------------------

namespace {

constexpr const char* kManifestFormat = "admd-dataset";
constexpr int kManifestVersion = 1;

json spec_to_json(const SyntheticTaskSpec& s) {
  return json{{"num_classes", s.num_classes},
              {"samples_per_class", s.samples_per_class},
              {"image_size", s.image_size},
              {"frames_per_clip", s.frames_per_clip},
              {"modality_a_informativeness", s.modality_a_informativeness},
              {"modality_b_informativeness", s.modality_b_informativeness},
              {"overlap", s.overlap},
              {"seed", s.seed},
              {"test_fraction", s.test_fraction},
              {"validation_fraction", s.validation_fraction},
              {"pixel_noise", s.pixel_noise}};
}

/// Binary netpbm (P5 gray / P6 color) reader; returns [H, W, channels] in [0, 1].
torch::Tensor read_netpbm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open frame " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P5" && magic != "P6") throw DataError(path.string() + ": only binary P5/P6 supported");
  auto next_int = [&]() {
    int value = 0;
    while (true) {
      in >> std::ws;
      if (in.peek() == '#') {
        std::string comment;
        std::getline(in, comment);
        continue;
      }
      in >> value;
      return value;
    }
  };
  const int w = next_int(), h = next_int(), maxval = next_int();
  in.get();
  if (!in || w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) {
    throw DataError(path.string() + ": malformed netpbm header");
  }
  const int channels = magic == "P6" ? 3 : 1;
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * channels);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw DataError(path.string() + ": truncated pixel data");
  auto t = torch::from_blob(raw.data(), {h, w, channels}, torch::kUInt8).to(torch::kFloat32);
  return t / static_cast<float>(maxval);
}

}  // namespace

torch::Tensor load_clip(const fs::path& path, int frames_per_clip) {
  if (fs::is_regular_file(path)) {
    auto clip = io::load_tensor(path);
    if (clip.dim() != 4 || clip.size(3) != 3) {
      throw ShapeError(path.string() + ": clip tensor must be [T, H, W, 3]");
    }
    if (frames_per_clip > 0 && clip.size(0) != frames_per_clip) {
      clip = sample_frames(clip, frames_per_clip);
    }
    return clip;
  }
  if (!fs::is_directory(path)) throw DataError("clip path does not exist: " + path.string());
  std::vector<fs::path> frames;
  for (const auto& entry : fs::directory_iterator(path)) {
    const auto ext = entry.path().extension().string();
    if (ext == ".ppm" || ext == ".pgm") frames.push_back(entry.path());
  }
  std::sort(frames.begin(), frames.end());
  if (frames.empty()) throw DataError("no .ppm/.pgm frames in " + path.string());
  const auto picks = uniform_frame_indices(static_cast<std::int64_t>(frames.size()),
                                           frames_per_clip > 0 ? frames_per_clip : 1);
  std::vector<torch::Tensor> loaded;
  for (auto i : picks) loaded.push_back(read_netpbm(frames[static_cast<std::size_t>(i)]));
  auto clip = torch::stack(loaded);  // [T, H, W, ch]
  if (clip.size(3) == 1) return encode_depth_jet(clip.squeeze(3));
  return clip;
}

void save_dataset(const Dataset& dataset, const fs::path& dir,
                  const std::optional<SyntheticTaskSpec>& spec, const std::string& config_hash) {
  fs::create_directories(dir / "samples");
  std::ofstream manifest(dir / "manifest.jsonl");
  if (!manifest) throw DataError("cannot write manifest in " + dir.string());
  json header{{"format", kManifestFormat},
              {"version", kManifestVersion},
              {"num_classes", dataset.num_classes},
              {"frames_per_clip", dataset.frames_per_clip},
              {"image_size", dataset.image_size}};
  if (spec) header["synthetic_spec"] = spec_to_json(*spec);
  if (!config_hash.empty()) header["config_hash"] = config_hash;
  manifest << header.dump() << '\n';
  auto write_split = [&](const Split& split, const char* name) {
    for (std::int64_t i = 0; i < split.size(); ++i) {
      const auto& id = split.ids[static_cast<std::size_t>(i)];
      const auto a_rel = fs::path("samples") / (id + "_a.tensor");
      const auto b_rel = fs::path("samples") / (id + "_b.tensor");
      io::save_tensor(dir / a_rel, split.modality_a[i]);
      io::save_tensor(dir / b_rel, split.modality_b[i]);
      json record{{"id", id},
                  {"class", split.class_label[i].item<std::int64_t>()},
                  {"split", name},
                  {"a", a_rel.generic_string()},
                  {"b", b_rel.generic_string()}};
      manifest << record.dump() << '\n';
    }
  };
  write_split(dataset.train, "train");
  write_split(dataset.validation, "validation");
  write_split(dataset.test, "test");
}

Dataset load_dataset(const fs::path& dir, int frames_per_clip) {
  std::ifstream manifest(dir / "manifest.jsonl");
  if (!manifest) throw DataError("missing manifest.jsonl in " + dir.string());
  Dataset ds;
  struct Pending {
    std::vector<torch::Tensor> a, b;
    std::vector<std::int64_t> labels;
    std::vector<std::string> ids;
  };
  std::map<std::string, Pending> pending;
  std::string line;
  std::int64_t max_class = -1;
  int line_no = 0;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    if (rec.contains("format")) {
      if (rec.at("format") != kManifestFormat) throw DataError("unknown manifest format");
      ds.num_classes = rec.value("num_classes", 0);
      if (frames_per_clip == 0) frames_per_clip = rec.value("frames_per_clip", 0);
      continue;
    }
    const auto split = rec.value("split", std::string("train"));
    if (split != "train" && split != "validation" && split != "test") {
      throw DataError("manifest line " + std::to_string(line_no) + ": unknown split '" + split + "'");
    }
    auto& p = pending[split];
    const auto label = rec.at("class").get<std::int64_t>();
    if (label < 0) throw DataError("manifest line " + std::to_string(line_no) + ": negative class");
    max_class = std::max(max_class, label);
    p.a.push_back(load_clip(dir / rec.at("a").get<std::string>(), frames_per_clip));
    p.b.push_back(load_clip(dir / rec.at("b").get<std::string>(), frames_per_clip));
    if (p.a.back().sizes() != p.b.back().sizes()) {
      throw ShapeError("sample " + rec.value("id", std::string("?")) +
                       ": modalities are not time-aligned (shape mismatch)");
    }
    p.labels.push_back(label);
    p.ids.push_back(rec.value("id", std::to_string(line_no)));
  }
  if (pending.empty()) throw DataError("manifest in " + dir.string() + " lists no samples");
  if (ds.num_classes == 0) ds.num_classes = static_cast<int>(max_class + 1);
  if (max_class >= ds.num_classes) throw DataError("manifest class index exceeds num_classes");
  auto finish = [](Pending& p) {
    Split s;
    if (p.a.empty()) return s;
    s.modality_a = torch::stack(p.a);
    s.modality_b = torch::stack(p.b);
    s.class_label = torch::tensor(p.labels, torch::kInt64);
    s.ids = std::move(p.ids);
    return s;
  };
  ds.train = finish(pending["train"]);
  ds.validation = finish(pending["validation"]);
  ds.test = finish(pending["test"]);
  const auto& any = ds.train.size() > 0 ? ds.train : ds.test;
  ds.frames_per_clip = static_cast<int>(any.modality_a.size(1));
  ds.image_size = static_cast<int>(any.modality_a.size(2));
  return ds;
}

}  // namespace admd::data
