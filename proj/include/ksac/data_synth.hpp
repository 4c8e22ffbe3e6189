#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ksac/nn_ops.hpp"
#include "ksac/tensor.hpp"

namespace ksac {

enum class ShapeClass : std::int32_t { background = 0, circle = 1, square = 2, triangle = 3 };
inline constexpr std::int64_t kSceneClasses = 4;

/// One drawn shape. `size` is the diameter (circle), side (square) or side
/// of the upward-pointing equilateral triangle.
struct ShapeInstance {
  ShapeClass cls = ShapeClass::circle;
  double cx = 0;
  double cy = 0;
  double size = 0;

  /// Analytic inside test at pixel coordinates (x, y).
  bool contains(double x, double y) const;
};

struct SceneSample {
  /// (1, 3, H, W), values in [0, 1].
  Tensor image;
  /// (1, H, W); 0 background, 1..3 shapes, ignore label on augmentation padding.
  LabelMap labels;
  /// Shapes in draw order (later ones occlude earlier ones). Empty after augmentation.
  std::vector<ShapeInstance> shapes;

  std::int64_t height() const { return labels.h; }
  std::int64_t width() const { return labels.w; }
};

/// Renders a textured background and 2..max_shapes shapes. The first shape
/// is large (size > H/2), the last is small (size < H/8) and never occluded.
/// Throws ConfigError if H or W < 32 or max_shapes < 2.
SceneSample generate_scene(std::uint64_t seed, std::int64_t height, std::int64_t width, int max_shapes = 5);

/// Mirrors the left half onto the right half so the scene is exactly
/// symmetric under a horizontal flip.
SceneSample mirror_symmetrize(const SceneSample& s);

struct AugmentSpec {
  double flip_prob = 0.5;
  /// 0.5 to 2.0 in steps of 0.25.
  std::vector<double> scale_set{0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0};
  std::int64_t crop_h = 97;
  std::int64_t crop_w = 97;
  Real pad_image = Real(0.5);
  std::int32_t pad_label = kDefaultIgnoreLabel;

  void validate() const;
  /// flip_prob 0, scale {1}, crop equal to the input: leaves samples unchanged.
  static AugmentSpec identity(std::int64_t h, std::int64_t w);
};

/// Random choices of one augmentation, fixed by the seed.
struct AugmentDraw {
  bool flip = false;
  std::size_t scale_index = 0;
  double scale = 1.0;
  std::int64_t scaled_h = 0;
  std::int64_t scaled_w = 0;
  std::int64_t offset_y = 0;
  std::int64_t offset_x = 0;
};

AugmentDraw draw_augment(const AugmentSpec& spec, std::uint64_t seed, std::int64_t height, std::int64_t width);

/// Flip, rescale (bilinear image, nearest labels), pad, random crop.
SceneSample augment(const SceneSample& s, const AugmentSpec& spec, std::uint64_t seed);

SceneSample flip_horizontal(const SceneSample& s);
SceneSample resize_sample(const SceneSample& s, std::int64_t height, std::int64_t width);
/// Nearest-neighbour resampling with half-pixel centers.
LabelMap resize_labels_nearest(const LabelMap& labels, std::int64_t height, std::int64_t width);

/// One line "seed,H,W" of a dataset manifest.
struct SceneRecord {
  std::uint64_t seed = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
  friend bool operator==(const SceneRecord&, const SceneRecord&) = default;
};

std::vector<SceneRecord> make_records(std::uint64_t base_seed, std::int64_t count, std::int64_t height,
                                      std::int64_t width);
std::string format_manifest(const std::vector<SceneRecord>& records);
std::vector<SceneRecord> parse_manifest(const std::string& text);

/// Generates the records on `threads` workers over disjoint index ranges.
/// The result is ordered like `records` regardless of the thread count.
std::vector<SceneSample> generate_scenes(const std::vector<SceneRecord>& records, int max_shapes = 5,
                                         int threads = 1);

/// Stacks same-sized samples into an (N,3,H,W) batch and (N,H,W) labels.
struct Batch {
  Tensor images;
  LabelMap labels;
};
Batch stack_samples(const std::vector<SceneSample>& samples);

}  // namespace ksac
