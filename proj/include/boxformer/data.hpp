#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "boxformer/aggregator.hpp"

namespace boxformer {

enum class Domain { kA, kB };

std::string to_string(Domain d);
Domain domain_from_string(const std::string& name);

enum class ShapeKind { kRectangle, kDisc };

constexpr std::int64_t kMaxInstances = 6;
constexpr double kMinInstanceArea = 0.04;
constexpr double kMaxInstanceArea = 0.25;
constexpr int kPlacementRetries = 100;

struct SceneSpec {
  std::uint64_t seed = 0;
  std::int64_t image_size = 64;
  std::int64_t n_instances = 2;  // 0..kMaxInstances
  Domain domain = Domain::kA;
};

struct Sample {
  Tensor image;  // [3, H, W] in [-1, 1]
  std::vector<BoundingBox> boxes;
  std::vector<ShapeKind> kinds;
  Domain domain = Domain::kA;
  std::string id;
  /// Instances dropped because non-overlapping placement failed.
  std::int64_t dropped_instances = 0;
};

/// Geometry depends only on (seed, image_size, n_instances); the domain
/// only selects the palette.
Sample gen_scene(const SceneSpec& spec);

/// Per-channel mean (3) then std (3) of the domain's pure background.
std::array<double, 6> background_stats(Domain d, std::int64_t image_size);
/// Same statistics for an image [3, H, W].
std::array<double, 6> channel_stats(const Tensor& image);

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 8-bit binary PPM; [-1, 1] maps linearly to [0, 255] rounding half up.
void write_ppm(const std::filesystem::path& path, const Tensor& image);
Tensor read_ppm(const std::filesystem::path& path);

/// Writes images/<id>.ppm, annotations.jsonl and manifest.json.
void write_dataset(const std::vector<Sample>& samples, const std::filesystem::path& dir);
/// Missing or empty directory -> empty list.
std::vector<Sample> read_dataset(const std::filesystem::path& dir);

struct Batch {
  Tensor images;  // [B, 3, H, W]
  BoxLists boxes;
};

Batch load_batch(const std::vector<Sample>& samples, const std::vector<std::int64_t>& indices);

/// Scene seeds used by generate_dataset: unpaired across domains unless
/// `paired` is set.
std::vector<Sample> generate_dataset(Domain d, std::int64_t count, std::int64_t image_size, std::uint64_t seed,
                                     bool paired = false);

}  // namespace boxformer
