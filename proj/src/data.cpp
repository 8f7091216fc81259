#include "fxf/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "fxf/error.hpp"

namespace fxf {

namespace {

constexpr double kPi = std::numbers::pi;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t sample_seed(std::uint64_t seed, Task task, std::uint64_t index) {
  return splitmix(splitmix(splitmix(seed) ^ (task_index(task) + 1)) ^ index);
}

struct Vec3 {
  double x, y, z;
};

struct Point {
  double x, y;
};

// Shape traits shared by every sample of one identity.
struct IdentityShape {
  double width;     // face half-width relative to half-height
  double eye_sep;   // eye center offset from the midline
  double nose_len;
  double mouth_w;   // mouth half-width
  double tint;      // skin blue-channel offset
};

IdentityShape identity_shape(std::size_t identity) {
  Rng r(splitmix(0x1d5eedULL + identity));
  IdentityShape s;
  s.width = r.uniform(0.68, 0.86);
  s.eye_sep = r.uniform(0.28, 0.38);
  s.nose_len = r.uniform(0.26, 0.40);
  s.mouth_w = r.uniform(0.22, 0.32);
  s.tint = r.uniform(-0.08, 0.08);
  return s;
}

struct MouthShape {
  double open;   // inner-lip opening
  double curve;  // corner lift, positive for a smile
};

MouthShape mouth_shape(std::size_t expression, std::size_t expressions) {
  const double e = static_cast<double>(expression);
  const double n = static_cast<double>(expressions);
  const double step = expressions > 1 ? static_cast<double>((expression * 3) % expressions) / (n - 1.0) : 0.0;
  return {0.02 + 0.16 * step, 0.12 * std::cos(2.0 * kPi * e / n)};
}

// 3D landmark template in face units: x right, y down, z toward the camera,
// half face height 1.
std::vector<Vec3> landmark_template(const IdentityShape& id, const MouthShape& mouth) {
  std::vector<Vec3> p;
  p.reserve(kNumLandmarks);
  for (int k = 0; k <= 16; ++k) {  // jaw
    double t = kPi * k / 16.0;
    p.push_back({-id.width * std::cos(t), 0.05 + 0.95 * std::sin(t), 0.2 + 0.3 * std::sin(t)});
  }
  for (int j = 0; j < 5; ++j) p.push_back({-0.62 + 0.11 * j, -0.42 - 0.06 * std::sin(kPi * j / 4.0), 0.5});
  for (int j = 0; j < 5; ++j) p.push_back({0.18 + 0.11 * j, -0.42 - 0.06 * std::sin(kPi * j / 4.0), 0.5});
  for (int j = 0; j < 4; ++j) p.push_back({0.0, -0.3 + id.nose_len * j / 3.0, 0.6 + 0.08 * j});
  const double nose_base = -0.3 + id.nose_len + 0.05;
  for (int j = 0; j < 5; ++j) p.push_back({-0.14 + 0.07 * j, nose_base - 0.03 * (1.0 - std::abs(j - 2) / 2.0), 0.62});
  for (double side : {-1.0, 1.0}) {  // right eye, then left eye
    const double cx = side * id.eye_sep;
    for (int j = 0; j < 6; ++j) {
      double a = kPi - kPi * j / 3.0;
      p.push_back({cx + 0.12 * std::cos(a), -0.22 - 0.05 * std::sin(a), 0.45});
    }
  }
  const double my = 0.52;
  const double ry = 0.07 + mouth.open / 2.0;
  auto lift = [&](double x, double rx) { return -mouth.curve * (x / rx) * (x / rx); };
  for (int k = 0; k < 12; ++k) {  // outer lip
    double a = k <= 6 ? kPi - kPi * k / 6.0 : -kPi / 6.0 * (k - 6);
    double x = id.mouth_w * std::cos(a);
    p.push_back({x, my - ry * std::sin(a) + lift(x, id.mouth_w), 0.55});
  }
  const double rxi = 0.7 * id.mouth_w;
  for (int k = 0; k < 8; ++k) {  // inner lip
    double a = k <= 4 ? kPi - kPi * k / 4.0 : -kPi / 4.0 * (k - 4);
    double x = rxi * std::cos(a);
    p.push_back({x, my - (mouth.open / 2.0) * std::sin(a) + lift(x, id.mouth_w), 0.55});
  }
  return p;
}

Vec3 rotate(const std::array<double, 9>& r, const Vec3& v) {
  return {r[0] * v.x + r[1] * v.y + r[2] * v.z, r[3] * v.x + r[4] * v.y + r[5] * v.z,
          r[6] * v.x + r[7] * v.y + r[8] * v.z};
}

struct Ellipse {
  Point c;
  double a, b, angle;

  bool contains(Point q) const {
    const double dx = q.x - c.x, dy = q.y - c.y;
    const double cs = std::cos(angle), sn = std::sin(angle);
    const double u = (cs * dx + sn * dy) / a;
    const double v = (-sn * dx + cs * dy) / b;
    return u * u + v * v <= 1.0;
  }
  // Vertical coordinate in the ellipse frame, in units of b.
  double frame_y(Point q) const {
    const double dx = q.x - c.x, dy = q.y - c.y;
    return (-std::sin(angle) * dx + std::cos(angle) * dy) / b;
  }
};

struct Box {
  double x0, y0, x1, y1;
  bool contains(Point q) const { return q.x >= x0 && q.x <= x1 && q.y >= y0 && q.y <= y1; }
};

using Color = std::array<double, 3>;

Color skin_color(const FaceParams& p, const HeadConfig& h, const IdentityShape& id) {
  static const std::array<Color, 4> palette = {
      Color{0.95, 0.80, 0.70}, Color{0.80, 0.60, 0.45}, Color{0.62, 0.44, 0.32}, Color{0.42, 0.30, 0.22}};
  Color c = palette[p.race % palette.size()];
  const double extra = static_cast<double>(p.race / palette.size()) * 0.07;
  const double aging = 1.0 - 0.3 * p.age / h.max_age;
  c[0] = c[0] - extra + 0.06 * static_cast<double>(p.gender);
  c[1] = c[1] * aging;
  c[2] = c[2] + id.tint + extra;
  return c;
}

std::uint8_t fold_class(Region r, std::size_t classes) {
  const auto id = static_cast<std::size_t>(r);
  if (id < classes) return static_cast<std::uint8_t>(id);
  return r == Region::hair ? static_cast<std::uint8_t>(Region::background) : static_cast<std::uint8_t>(Region::skin);
}

}  // namespace

void DataSpec::validate() const {
  heads.validate();
  if (height == 0 || width == 0 || height % 32 != 0 || width % 32 != 0) {
    throw ConfigError("image size must be a positive multiple of 32, got " + std::to_string(height) + "x" +
                      std::to_string(width));
  }
  if (heads.seg_classes < 2 || heads.seg_classes > kNumRegions) {
    throw ConfigError("synthetic parsing supports 2 to " + std::to_string(kNumRegions) + " classes, got " +
                      std::to_string(heads.seg_classes));
  }
  if (heads.visibility != kNumLandmarkGroups) {
    throw ConfigError("synthetic visibility uses " + std::to_string(kNumLandmarkGroups) + " landmark groups, got " +
                      std::to_string(heads.visibility));
  }
}

std::array<double, 9> euler_to_rotation(double yaw, double pitch, double roll) {
  const double cy = std::cos(yaw), sy = std::sin(yaw);
  const double cp = std::cos(pitch), sp = std::sin(pitch);
  const double cr = std::cos(roll), sr = std::sin(roll);
  // Rz(roll) · Ry(yaw) · Rx(pitch)
  return {cr * cy, cr * sy * sp - sr * cp, cr * sy * cp + sr * sp,
          sr * cy, sr * sy * sp + cr * cp, sr * sy * cp - cr * sp,
          -sy,     cy * sp,                cy * cp};
}

std::array<double, 3> rotation_to_euler(const std::array<double, 9>& r) {
  const double yaw = std::asin(std::clamp(-r[6], -1.0, 1.0));
  const double pitch = std::atan2(r[7], r[8]);
  const double roll = std::atan2(r[3], r[0]);
  return {yaw, pitch, roll};
}

const std::vector<std::size_t>& landmark_group(std::size_t group) {
  static const std::array<std::vector<std::size_t>, kNumLandmarkGroups> groups = [] {
    std::array<std::vector<std::size_t>, kNumLandmarkGroups> g;
    auto range = [](std::size_t a, std::size_t b) {
      std::vector<std::size_t> v;
      for (std::size_t i = a; i < b; ++i) v.push_back(i);
      return v;
    };
    g[0] = range(0, 9);    // jaw, image left
    g[1] = range(8, 17);   // jaw, image right
    g[2] = range(17, 22);  // right brow
    g[3] = range(22, 27);  // left brow
    g[4] = range(27, 36);  // nose
    g[5] = range(36, 42);  // right eye
    g[6] = range(42, 48);  // left eye
    g[7] = range(48, 68);  // mouth
    return g;
  }();
  if (group >= kNumLandmarkGroups) throw DomainError("landmark group " + std::to_string(group) + " out of range");
  return groups[group];
}

SyntheticSample render_sample(const DataSpec& spec, const FaceParams& p, Task task) {
  spec.validate();
  const HeadConfig& h = spec.heads;
  if (p.attributes.size() != h.attributes || p.occluded.size() != h.visibility) {
    throw ConfigError("face parameters do not match the head configuration");
  }
  const IdentityShape id = identity_shape(p.identity);
  const MouthShape mouth = mouth_shape(p.expression, h.expressions);
  const auto rot = euler_to_rotation(p.yaw, p.pitch, p.roll);

  auto project = [&](const Vec3& v) {
    Vec3 q = rotate(rot, v);
    return Point{p.cx + p.size * q.x, p.cy + p.size * q.y};
  };

  SyntheticSample s;
  s.task = task;
  s.params = p;
  s.height = spec.height;
  s.width = spec.width;
  SampleLabels& lab = s.labels;
  lab.rotation = rot;
  lab.attributes = p.attributes;
  lab.age = p.age;
  lab.gender = p.gender;
  lab.race = p.race;
  lab.expression = p.expression;
  lab.identity = p.identity;
  lab.occluded = p.occluded;

  std::vector<Point> pts;
  for (const Vec3& v : landmark_template(id, mouth)) pts.push_back(project(v));
  for (const Point& q : pts) {
    lab.landmarks.push_back(q.x);
    lab.landmarks.push_back(q.y);
  }

  // Region shapes. Sizes shrink with the out-of-plane angles so the pose is
  // visible in the silhouette as well as in the feature layout.
  const double s_ = p.size;
  const double fx = 0.8 + 0.2 * std::cos(p.yaw), fy = 0.8 + 0.2 * std::cos(p.pitch);
  const Ellipse face{project({0.0, 0.04, 0.0}), s_ * id.width * fx, s_ * 0.98 * fy, p.roll};
  const Ellipse hair_outline{project({0.0, -0.05, 0.0}), face.a * 1.14, face.b * 1.1, p.roll};
  // hair covers the forehead above kForehead and, for gender 1, falls
  // beside the face down to the hairline
  constexpr double kForehead = -0.6;
  const double hairline = p.gender == 1 ? 0.35 : -0.3;
  const std::array<Ellipse, 2> eyes = {Ellipse{project({-id.eye_sep, -0.22, 0.45}), s_ * 0.16 * fx, s_ * 0.08, p.roll},
                                       Ellipse{project({id.eye_sep, -0.22, 0.45}), s_ * 0.16 * fx, s_ * 0.08, p.roll}};
  const std::array<Ellipse, 2> brows = {Ellipse{project({-0.4, -0.46, 0.5}), s_ * 0.24 * fx, s_ * 0.05, p.roll},
                                        Ellipse{project({0.4, -0.46, 0.5}), s_ * 0.24 * fx, s_ * 0.05, p.roll}};
  const Ellipse nose{project({0.0, -0.3 + id.nose_len / 2.0 + 0.05, 0.65}), s_ * 0.11 * fx,
                     s_ * (id.nose_len / 2.0 + 0.06) * fy, p.roll};
  const Ellipse mouth_e{project({0.0, 0.52, 0.55}), s_ * (id.mouth_w + 0.03) * fx,
                        s_ * (0.08 + mouth.open / 2.0) * fy, p.roll};
  std::vector<Box> occluders;
  for (std::size_t g = 0; g < kNumLandmarkGroups; ++g) {
    if (!p.occluded[g]) continue;
    Box b{1e9, 1e9, -1e9, -1e9};
    for (std::size_t i : landmark_group(g)) {
      b.x0 = std::min(b.x0, pts[i].x);
      b.y0 = std::min(b.y0, pts[i].y);
      b.x1 = std::max(b.x1, pts[i].x);
      b.y1 = std::max(b.y1, pts[i].y);
    }
    const double pad = 0.03;
    occluders.push_back({b.x0 - pad, b.y0 - pad, b.x1 + pad, b.y1 + pad});
  }

  const Color skin = skin_color(p, h, id);
  const Color hair_c = p.attributes[0] ? Color{0.85, 0.75, 0.40} : Color{0.15, 0.10, 0.08};
  const Color mouth_c{0.75 - 0.3 * mouth.open, 0.15, 0.2 + mouth.curve};
  const std::size_t height = spec.height, width = spec.width, hw = height * width;
  s.image.assign(3 * hw, 0.0);
  lab.parsing.assign(hw, 0);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      const Point q{(static_cast<double>(c) + 0.5) / static_cast<double>(width),
                    (static_cast<double>(r) + 0.5) / static_cast<double>(height)};
      Region region = Region::background;
      if (mouth_e.contains(q)) {
        region = Region::mouth;
      } else if (eyes[0].contains(q) || eyes[1].contains(q)) {
        region = Region::eyes;
      } else if (brows[0].contains(q) || brows[1].contains(q)) {
        region = Region::brows;
      } else if (nose.contains(q)) {
        region = Region::nose;
      } else if (hair_outline.contains(q) &&
                 (face.contains(q) ? face.frame_y(q) < kForehead : hair_outline.frame_y(q) < hairline)) {
        region = Region::hair;
      } else if (face.contains(q)) {
        region = Region::skin;
      }

      Color col{};
      switch (region) {
        case Region::background: {
          // attribute bits as a 5 x 8 grid of background cells
          const std::size_t cell = std::min<std::size_t>(4, r * 5 / height) * 8 + std::min<std::size_t>(7, c * 8 / width);
          const double bit = cell < p.attributes.size() ? static_cast<double>(p.attributes[cell]) : 0.0;
          col = {0.25, 0.30 + 0.12 * bit, 0.35 + 0.2 * bit};
          break;
        }
        case Region::skin: col = skin; break;
        case Region::hair: col = hair_c; break;
        case Region::eyes: col = {0.05, 0.05, 0.12}; break;
        case Region::brows: col = {0.22 + 0.5 * p.attributes[0], 0.14, 0.08}; break;
        case Region::nose: col = {skin[0] * 0.85, skin[1] * 0.8, skin[2] * 0.8}; break;
        case Region::mouth: col = mouth_c; break;
      }
      for (const Box& b : occluders) {
        if (b.contains(q)) {
          const double check = ((r / 2 + c / 2) % 2 == 0) ? 0.1 : -0.1;
          col = {0.5 + check, 0.5 + check, 0.5 + check};
        }
      }
      for (std::size_t ch = 0; ch < 3; ++ch) s.image[ch * hw + r * width + c] = std::clamp(col[ch], 0.0, 1.0);
      lab.parsing[r * width + c] = fold_class(region, h.seg_classes);
    }
  }
  return s;
}

std::vector<SyntheticSample> generate_dataset(const DataSpec& spec, Task task, std::size_t size, std::uint64_t seed) {
  spec.validate();
  if (size == 0) throw ConfigError("dataset size must be at least 1");
  const HeadConfig& h = spec.heads;
  const double deg = kPi / 180.0;
  std::vector<SyntheticSample> out;
  out.reserve(size);
  for (std::size_t i = 0; i < size; ++i) {
    Rng r(sample_seed(seed, task, i));
    FaceParams p;
    p.cx = r.uniform(0.46, 0.54);
    p.cy = r.uniform(0.46, 0.54);
    p.size = r.uniform(0.30, 0.36);
    p.yaw = r.uniform(-30.0, 30.0) * deg;
    p.pitch = r.uniform(-30.0, 30.0) * deg;
    p.roll = r.uniform(-20.0, 20.0) * deg;
    p.gender = r.below(2);
    p.race = r.below(h.races);
    p.expression = r.below(h.expressions);
    p.identity = r.below(h.num_identities);
    const double bin_width = h.max_age / static_cast<double>(h.age_bins);
    std::size_t bin = r.below(h.age_bins);
    for (std::size_t a = 0; a < h.attributes; ++a) p.attributes.push_back(static_cast<std::uint8_t>(r.below(2)));
    p.occluded.assign(h.visibility, 0);
    switch (task) {
      case Task::gender: p.gender = i % 2; break;
      case Task::race: p.race = i % h.races; break;
      case Task::expression: p.expression = i % h.expressions; break;
      case Task::recognition: p.identity = (i / 2) % h.num_identities; break;
      case Task::age: bin = i % h.age_bins; break;
      case Task::visibility:
        for (auto& o : p.occluded) o = static_cast<std::uint8_t>(r.below(2));
        break;
      default: break;
    }
    // keep clear of the bin edges so the bin label is unambiguous
    p.age = (static_cast<double>(bin) + r.uniform(0.1, 0.9)) * bin_width;
    SyntheticSample s = render_sample(spec, p, task);
    s.index = i;
    out.push_back(std::move(s));
  }
  return out;
}

TaskSelection TaskBatch::selection() const {
  TaskSelection sel;
  for (std::size_t i = 0; i < samples.size(); ++i) sel[task_index(samples[i]->task)].push_back(i);
  return sel;
}

template <typename T>
Tensor<T> TaskBatch::images() const {
  if (samples.empty()) throw ShapeError("empty batch");
  const std::size_t height = samples.front()->height, width = samples.front()->width;
  std::vector<T> buf;
  buf.reserve(3 * height * width * samples.size());
  for (const SyntheticSample* s : samples) {
    if (s->height != height || s->width != width) throw ShapeError("batch mixes image sizes");
    for (double v : s->image) buf.push_back(static_cast<T>((v - 0.5) / 0.25));
  }
  return Tensor<T>({samples.size(), 3, height, width}, std::move(buf));
}

template Tensor<float> TaskBatch::images<float>() const;
template Tensor<double> TaskBatch::images<double>() const;

BalancedSampler::BalancedSampler(const DatasetMap& datasets, std::size_t batch_size, std::uint64_t seed)
    : rng_(splitmix(seed ^ 0xba1a0ceULL)) {
  if (datasets.empty()) throw ConfigError("balanced sampler needs at least one dataset");
  if (batch_size == 0 || batch_size % datasets.size() != 0) {
    throw ConfigError("batch size " + std::to_string(batch_size) + " is not divisible by the " +
                      std::to_string(datasets.size()) + " active tasks");
  }
  per_task_ = batch_size / datasets.size();
  std::size_t largest = 0;
  for (const auto& [task, data] : datasets) {
    if (data.empty()) throw ConfigError("dataset for task " + std::string(task_name(task)) + " is empty");
    Stream st{&data, {}, 0};
    st.order.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) st.order[i] = i;
    rng_.shuffle(st.order);
    streams_.push_back(std::move(st));
    largest = std::max(largest, data.size());
  }
  batches_per_epoch_ = (largest + per_task_ - 1) / per_task_;
}

TaskBatch BalancedSampler::next() {
  TaskBatch batch;
  for (Stream& st : streams_) {
    for (std::size_t k = 0; k < per_task_; ++k) {
      if (st.cursor == st.order.size()) {
        rng_.shuffle(st.order);
        st.cursor = 0;
      }
      batch.samples.push_back(&(*st.data)[st.order[st.cursor++]]);
    }
  }
  return batch;
}

}  // namespace fxf
