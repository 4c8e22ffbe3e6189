#include "ksac/data_synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>
#include <thread>

#include "ksac/autograd.hpp"
#include "ksac/errors.hpp"
#include "ksac/kv_text.hpp"
#include "ksac/random.hpp"
#include "ksac/tensor_ops.hpp"

namespace ksac {

bool ShapeInstance::contains(double x, double y) const {
  const double half = size / 2.0;
  switch (cls) {
    case ShapeClass::circle:
      return (x - cx) * (x - cx) + (y - cy) * (y - cy) <= half * half;
    case ShapeClass::square:
      return std::abs(x - cx) <= half && std::abs(y - cy) <= half;
    case ShapeClass::triangle: {
      // Upward equilateral triangle with its centroid at (cx, cy).
      const double height = size * std::sqrt(3.0) / 2.0;
      const double top = cy - 2.0 * height / 3.0;
      const double bottom = cy + height / 3.0;
      if (y < top || y > bottom) return false;
      const double half_width = (y - top) / height * half;
      return std::abs(x - cx) <= half_width;
    }
    case ShapeClass::background:
      return false;
  }
  return false;
}

namespace {

// Base RGB per foreground class; individual shapes jitter around it.
constexpr std::array<std::array<double, 3>, 3> kClassColors{{
    {0.85, 0.25, 0.20},
    {0.20, 0.75, 0.30},
    {0.25, 0.35, 0.90},
}};

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

SceneSample generate_scene(std::uint64_t seed, std::int64_t height, std::int64_t width, int max_shapes) {
  if (height < 32 || width < 32) {
    throw ConfigError("generate_scene: H and W must be >= 32, got " + std::to_string(height) + "x" +
                      std::to_string(width));
  }
  if (max_shapes < 2) throw ConfigError("generate_scene: max_shapes must be >= 2");

  Rng rng(seed);
  const double H = static_cast<double>(height);
  const double W = static_cast<double>(width);
  const auto count = static_cast<int>(rng.uniform_int(2, max_shapes));

  auto random_class = [&rng] { return static_cast<ShapeClass>(rng.uniform_int(1, 3)); };

  std::vector<ShapeInstance> shapes;
  shapes.push_back({random_class(), rng.uniform(0.3 * W, 0.7 * W), rng.uniform(0.3 * H, 0.7 * H),
                    rng.uniform(0.55 * H, 0.8 * H)});
  for (int i = 0; i < count - 2; ++i) {
    shapes.push_back({random_class(), rng.uniform(0.0, W), rng.uniform(0.0, H), rng.uniform(H / 8.0, H / 2.0)});
  }
  const double small = rng.uniform(std::max(3.0, H / 16.0), H / 8.0 - 0.25);
  shapes.push_back({random_class(), rng.uniform(small, W - small), rng.uniform(small, H - small), small});

  std::vector<std::array<double, 3>> colors;
  for (const ShapeInstance& s : shapes) {
    const auto& base = kClassColors[static_cast<std::size_t>(s.cls) - 1];
    const double brightness = rng.uniform(0.8, 1.15);
    colors.push_back({clamp01(base[0] * brightness + rng.uniform(-0.08, 0.08)),
                      clamp01(base[1] * brightness + rng.uniform(-0.08, 0.08)),
                      clamp01(base[2] * brightness + rng.uniform(-0.08, 0.08))});
  }

  // Low-saturation textured background.
  const double gray = rng.uniform(0.3, 0.7);
  std::array<double, 3> bg{};
  for (double& c : bg) c = clamp01(gray + rng.uniform(-0.06, 0.06));
  const double fx = rng.uniform(0.1, 0.5);
  const double fy = rng.uniform(0.1, 0.5);
  const double phase = rng.uniform(0.0, 6.283185307179586);
  const double amplitude = rng.uniform(0.03, 0.1);

  SceneSample out;
  out.image = Tensor::zeros({1, 3, height, width});
  out.labels = LabelMap(1, height, width, 0);
  out.shapes = shapes;
  auto img = out.image.mutable_data();
  const std::int64_t plane = height * width;
  for (std::int64_t y = 0; y < height; ++y) {
    for (std::int64_t x = 0; x < width; ++x) {
      const double px = static_cast<double>(x);
      const double py = static_cast<double>(y);
      std::array<double, 3> rgb = bg;
      const double texture = amplitude * std::sin(fx * px + phase) * std::cos(fy * py - phase);
      for (double& c : rgb) c += texture;
      std::int32_t label = 0;
      for (std::size_t k = 0; k < shapes.size(); ++k) {
        if (shapes[k].contains(px, py)) {
          label = static_cast<std::int32_t>(shapes[k].cls);
          rgb = colors[k];
        }
      }
      const double noise = rng.uniform(-0.03, 0.03);
      for (std::int64_t c = 0; c < 3; ++c) {
        img[static_cast<std::size_t>(c * plane + y * width + x)] = static_cast<Real>(clamp01(rgb[c] + noise));
      }
      out.labels.at(0, y, x) = label;
    }
  }
  return out;
}

SceneSample mirror_symmetrize(const SceneSample& s) {
  SceneSample out;
  out.image = s.image.detach();
  out.labels = s.labels;
  const Shape sh = s.image.shape();
  auto img = out.image.mutable_data();
  for (std::int64_t row = 0; row < sh.n * sh.c * sh.h; ++row) {
    for (std::int64_t x = 0; x < sh.w / 2; ++x) img[row * sh.w + (sh.w - 1 - x)] = img[row * sh.w + x];
  }
  for (std::int64_t y = 0; y < s.labels.h; ++y) {
    for (std::int64_t x = 0; x < s.labels.w / 2; ++x) out.labels.at(0, y, s.labels.w - 1 - x) = out.labels.at(0, y, x);
  }
  return out;
}

// ---------------------------------------------------------------------------

void AugmentSpec::validate() const {
  if (flip_prob < 0.0 || flip_prob > 1.0) throw ConfigError("augment: flip_prob must lie in [0,1]");
  if (scale_set.empty()) throw ConfigError("augment: scale_set is empty");
  for (double s : scale_set) {
    if (!(s > 0.0)) throw ConfigError("augment: scales must be positive");
  }
  if (crop_h < 1 || crop_w < 1) throw ConfigError("augment: crop must be positive");
}

AugmentSpec AugmentSpec::identity(std::int64_t h, std::int64_t w) {
  AugmentSpec spec;
  spec.flip_prob = 0.0;
  spec.scale_set = {1.0};
  spec.crop_h = h;
  spec.crop_w = w;
  return spec;
}

AugmentDraw draw_augment(const AugmentSpec& spec, std::uint64_t seed, std::int64_t height, std::int64_t width) {
  spec.validate();
  Rng rng(seed);
  AugmentDraw d;
  d.flip = rng.bernoulli(spec.flip_prob);
  d.scale_index = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(spec.scale_set.size()) - 1));
  d.scale = spec.scale_set[d.scale_index];
  d.scaled_h = std::max<std::int64_t>(1, std::llround(static_cast<double>(height) * d.scale));
  d.scaled_w = std::max<std::int64_t>(1, std::llround(static_cast<double>(width) * d.scale));
  d.offset_y = rng.uniform_int(0, std::max(d.scaled_h, spec.crop_h) - spec.crop_h);
  d.offset_x = rng.uniform_int(0, std::max(d.scaled_w, spec.crop_w) - spec.crop_w);
  return d;
}

SceneSample flip_horizontal(const SceneSample& s) {
  SceneSample out;
  out.image = flip_horizontal(s.image.detach());
  out.labels = s.labels;
  for (std::int64_t n = 0; n < s.labels.n; ++n) {
    for (std::int64_t y = 0; y < s.labels.h; ++y) {
      for (std::int64_t x = 0; x < s.labels.w; ++x) out.labels.at(n, y, x) = s.labels.at(n, y, s.labels.w - 1 - x);
    }
  }
  return out;
}

LabelMap resize_labels_nearest(const LabelMap& labels, std::int64_t height, std::int64_t width) {
  LabelMap out(labels.n, height, width);
  auto source = [](std::int64_t dst, std::int64_t in, std::int64_t outn) {
    const double src = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(outn);
    return std::min<std::int64_t>(in - 1, static_cast<std::int64_t>(std::floor(src)));
  };
  for (std::int64_t n = 0; n < labels.n; ++n) {
    for (std::int64_t y = 0; y < height; ++y) {
      const std::int64_t sy = source(y, labels.h, height);
      for (std::int64_t x = 0; x < width; ++x) out.at(n, y, x) = labels.at(n, sy, source(x, labels.w, width));
    }
  }
  return out;
}

SceneSample resize_sample(const SceneSample& s, std::int64_t height, std::int64_t width) {
  NoGradGuard no_grad;
  SceneSample out;
  out.image = bilinear_resize(s.image, height, width);
  out.labels = resize_labels_nearest(s.labels, height, width);
  return out;
}

SceneSample augment(const SceneSample& s, const AugmentSpec& spec, std::uint64_t seed) {
  const AugmentDraw d = draw_augment(spec, seed, s.height(), s.width());
  SceneSample work = d.flip ? flip_horizontal(s) : SceneSample{s.image.detach(), s.labels, {}};
  if (d.scaled_h != s.height() || d.scaled_w != s.width()) work = resize_sample(work, d.scaled_h, d.scaled_w);

  SceneSample out;
  out.image = Tensor({1, 3, spec.crop_h, spec.crop_w}, fill::Constant{spec.pad_image});
  out.labels = LabelMap(1, spec.crop_h, spec.crop_w, spec.pad_label);
  auto dst = out.image.mutable_data();
  auto src = work.image.data();
  const std::int64_t sh = work.height();
  const std::int64_t sw = work.width();
  // Padding sits below and right of the scaled image, then the crop window is cut.
  for (std::int64_t y = 0; y < spec.crop_h; ++y) {
    const std::int64_t yy = y + d.offset_y;
    if (yy >= sh) continue;
    for (std::int64_t x = 0; x < spec.crop_w; ++x) {
      const std::int64_t xx = x + d.offset_x;
      if (xx >= sw) continue;
      for (std::int64_t c = 0; c < 3; ++c) {
        dst[static_cast<std::size_t>((c * spec.crop_h + y) * spec.crop_w + x)] =
            src[static_cast<std::size_t>((c * sh + yy) * sw + xx)];
      }
      out.labels.at(0, y, x) = work.labels.at(0, yy, xx);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<SceneRecord> make_records(std::uint64_t base_seed, std::int64_t count, std::int64_t height,
                                      std::int64_t width) {
  std::vector<SceneRecord> out;
  for (std::int64_t i = 0; i < count; ++i) {
    out.push_back({derive_seed(base_seed, static_cast<std::uint64_t>(i)), height, width});
  }
  return out;
}

std::string format_manifest(const std::vector<SceneRecord>& records) {
  std::ostringstream os;
  for (const SceneRecord& r : records) os << r.seed << ',' << r.height << ',' << r.width << '\n';
  return os.str();
}

std::vector<SceneRecord> parse_manifest(const std::string& text) {
  std::vector<SceneRecord> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string seed, h, w;
    if (!std::getline(fields, seed, ',') || !std::getline(fields, h, ',') || !std::getline(fields, w)) {
      throw ConfigError("manifest line " + std::to_string(lineno) + ": expected seed,H,W");
    }
    std::uint64_t seed_value = 0;
    try {
      std::size_t used = 0;
      seed_value = std::stoull(seed, &used);
      if (used != seed.size()) throw std::invalid_argument(seed);
    } catch (const std::logic_error&) {
      throw ConfigError("manifest line " + std::to_string(lineno) + ": bad seed '" + seed + "'");
    }
    out.push_back({seed_value, parse_int("H", h), parse_int("W", w)});
  }
  return out;
}

std::vector<SceneSample> generate_scenes(const std::vector<SceneRecord>& records, int max_shapes, int threads) {
  std::vector<SceneSample> out(records.size());
  const std::size_t workers = static_cast<std::size_t>(std::max(1, threads));
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      out[i] = generate_scene(records[i].seed, records[i].height, records[i].width, max_shapes);
    }
  };
  if (workers == 1 || records.size() < 2) {
    work(0, records.size());
    return out;
  }
  std::vector<std::jthread> pool;
  const std::size_t chunk = (records.size() + workers - 1) / workers;
  for (std::size_t begin = 0; begin < records.size(); begin += chunk) {
    pool.emplace_back(work, begin, std::min(records.size(), begin + chunk));
  }
  pool.clear();
  return out;
}

Batch stack_samples(const std::vector<SceneSample>& samples) {
  if (samples.empty()) throw ContractError("stack_samples: no samples");
  const std::int64_t h = samples.front().height();
  const std::int64_t w = samples.front().width();
  const auto n = static_cast<std::int64_t>(samples.size());
  Batch b{Tensor::zeros({n, 3, h, w}), LabelMap(n, h, w)};
  auto dst = b.images.mutable_data();
  for (std::int64_t i = 0; i < n; ++i) {
    const SceneSample& s = samples[static_cast<std::size_t>(i)];
    if (s.height() != h || s.width() != w) throw ShapeError("stack_samples: samples differ in size");
    std::copy(s.image.data().begin(), s.image.data().end(), dst.begin() + i * 3 * h * w);
    std::copy(s.labels.values.begin(), s.labels.values.end(), b.labels.values.begin() + i * h * w);
  }
  return b;
}

}  // namespace ksac
