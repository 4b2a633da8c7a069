#include "boxformer/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace boxformer {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

using Rgb = std::array<double, 3>;  // 0..255

struct Palette {
  Rgb top, bottom;
  std::vector<Rgb> instances;
  bool rim = false;
};

const std::vector<Rgb> kDayColors = {
    {220, 40, 40}, {235, 200, 30}, {40, 180, 70}, {245, 130, 20}, {200, 40, 180}, {30, 190, 210},
};

// Night tones keep each channel on the same side of mid-gray as the day
// color but pull it toward gray and down.
Rgb night_tone(const Rgb& c) {
  Rgb out;
  for (int i = 0; i < 3; ++i) {
    const double a = c[static_cast<std::size_t>(i)] / 127.5 - 1.0;
    out[static_cast<std::size_t>(i)] = (0.45 * a - 0.08 + 1.0) * 127.5;
  }
  return out;
}

const Palette& palette(Domain d) {
  static const Palette day{{135, 206, 235}, {168, 158, 146}, kDayColors, false};
  static const Palette night = [] {
    Palette p{{12, 12, 20}, {20, 32, 96}, {}, true};
    for (const auto& c : kDayColors) p.instances.push_back(night_tone(c));
    return p;
  }();
  return d == Domain::kA ? day : night;
}

const Rgb kRim = {235, 230, 190};

std::uint8_t quantize(double v) {
  // [-1, 1] -> [0, 255], round half up.
  const double q = std::floor((v + 1.0) * 127.5 + 0.5);
  return static_cast<std::uint8_t>(std::clamp(q, 0.0, 255.0));
}

double to_unit(double byte) { return byte / 127.5 - 1.0; }

struct Placed {
  std::int64_t x0, y0, w, h;
  ShapeKind kind;
  std::size_t color;
};

bool overlaps(const Placed& a, const Placed& b) {
  return a.x0 < b.x0 + b.w && b.x0 < a.x0 + a.w && a.y0 < b.y0 + b.h && b.y0 < a.y0 + a.h;
}

bool inside_shape(const Placed& p, std::int64_t x, std::int64_t y) {
  if (x < p.x0 || y < p.y0 || x >= p.x0 + p.w || y >= p.y0 + p.h) return false;
  if (p.kind == ShapeKind::kRectangle) return true;
  const double rx = static_cast<double>(p.w) / 2, ry = static_cast<double>(p.h) / 2;
  const double dx = (static_cast<double>(x - p.x0) + 0.5 - rx) / rx;
  const double dy = (static_cast<double>(y - p.y0) + 0.5 - ry) / ry;
  return dx * dx + dy * dy <= 1.0;
}

std::vector<Placed> place_instances(std::uint64_t seed, std::int64_t size, std::int64_t wanted,
                                    std::int64_t& dropped) {
  auto rng = derive_rng(seed, {0x67656f6dull});
  std::uniform_real_distribution<double> area_frac(kMinInstanceArea, kMaxInstanceArea);
  std::uniform_real_distribution<double> log_aspect(std::log(0.6), std::log(1.6));
  std::uniform_int_distribution<int> kind(0, 1);
  std::uniform_int_distribution<std::size_t> color(0, kDayColors.size() - 1);
  const double total = static_cast<double>(size * size);
  std::vector<Placed> placed;
  dropped = 0;
  for (std::int64_t n = 0; n < wanted; ++n) {
    bool ok = false;
    for (int attempt = 0; attempt < kPlacementRetries && !ok; ++attempt) {
      const double area = area_frac(rng) * total;
      const double aspect = std::exp(log_aspect(rng));
      const auto w = static_cast<std::int64_t>(std::lround(std::sqrt(area * aspect)));
      const auto h = static_cast<std::int64_t>(std::lround(std::sqrt(area / aspect)));
      const auto frac = static_cast<double>(w * h) / total;
      if (w < 2 || h < 2 || w > size || h > size || frac < kMinInstanceArea || frac > kMaxInstanceArea) continue;
      Placed p{std::uniform_int_distribution<std::int64_t>(0, size - w)(rng),
               std::uniform_int_distribution<std::int64_t>(0, size - h)(rng), w, h,
               kind(rng) ? ShapeKind::kDisc : ShapeKind::kRectangle, color(rng)};
      ok = std::none_of(placed.begin(), placed.end(), [&](const Placed& q) { return overlaps(p, q); });
      if (ok) placed.push_back(p);
    }
    if (!ok) ++dropped;
  }
  return placed;
}

Tensor render(const std::vector<Placed>& placed, std::int64_t size, const Palette& pal) {
  std::vector<Real> v(static_cast<std::size_t>(3 * size * size));
  auto at = [&](std::int64_t c, std::int64_t y, std::int64_t x) -> Real& {
    return v[static_cast<std::size_t>((c * size + y) * size + x)];
  };
  for (std::int64_t y = 0; y < size; ++y) {
    const double t = (static_cast<double>(y) + 0.5) / static_cast<double>(size);
    for (std::int64_t c = 0; c < 3; ++c) {
      const auto cc = static_cast<std::size_t>(c);
      const double byte = pal.top[cc] + t * (pal.bottom[cc] - pal.top[cc]);
      const double q = to_unit(static_cast<double>(quantize(to_unit(byte))));
      for (std::int64_t x = 0; x < size; ++x) at(c, y, x) = static_cast<Real>(q);
    }
  }
  for (const auto& p : placed) {
    const auto& fill = pal.instances[p.color];
    for (std::int64_t y = p.y0; y < p.y0 + p.h; ++y)
      for (std::int64_t x = p.x0; x < p.x0 + p.w; ++x) {
        if (!inside_shape(p, x, y)) continue;
        const bool edge = !inside_shape(p, x - 1, y) || !inside_shape(p, x + 1, y) || !inside_shape(p, x, y - 1) ||
                          !inside_shape(p, x, y + 1);
        const auto& col = pal.rim && edge ? kRim : fill;
        for (std::int64_t c = 0; c < 3; ++c) {
          at(c, y, x) = static_cast<Real>(to_unit(static_cast<double>(quantize(to_unit(col[static_cast<std::size_t>(c)])))));
        }
      }
  }
  return Tensor::from({3, size, size}, std::move(v));
}

}  // namespace

std::string to_string(Domain d) { return d == Domain::kA ? "A" : "B"; }

Domain domain_from_string(const std::string& name) {
  if (name == "A") return Domain::kA;
  if (name == "B") return Domain::kB;
  throw std::invalid_argument("unknown domain '" + name + "' (expected A or B)");
}

Sample gen_scene(const SceneSpec& spec) {
  if (spec.image_size < 8 || spec.image_size % 4 != 0) {
    throw std::invalid_argument("image_size must be >= 8 and divisible by 4");
  }
  if (spec.n_instances < 0 || spec.n_instances > kMaxInstances) {
    throw std::invalid_argument("n_instances must be in [0, " + std::to_string(kMaxInstances) + "]");
  }
  Sample s;
  s.domain = spec.domain;
  const auto placed = place_instances(spec.seed, spec.image_size, spec.n_instances, s.dropped_instances);
  s.image = render(placed, spec.image_size, palette(spec.domain));
  for (const auto& p : placed) {
    s.boxes.push_back({static_cast<double>(p.x0) + static_cast<double>(p.w) / 2,
                       static_cast<double>(p.y0) + static_cast<double>(p.h) / 2, static_cast<double>(p.w),
                       static_cast<double>(p.h)});
    s.kinds.push_back(p.kind);
  }
  s.id = to_string(spec.domain) + "_" + std::to_string(spec.seed);
  return s;
}

std::array<double, 6> channel_stats(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("channel_stats: expected [3,H,W], got " + to_string(image.shape()));
  }
  const auto n = image.dim(1) * image.dim(2);
  std::array<double, 6> out{};
  for (std::int64_t c = 0; c < 3; ++c) {
    const auto ch = image.data().subspan(static_cast<std::size_t>(c * n), static_cast<std::size_t>(n));
    double m = 0;
    for (Real v : ch) m += v;
    m /= static_cast<double>(n);
    double var = 0;
    for (Real v : ch) var += (v - m) * (v - m);
    out[static_cast<std::size_t>(c)] = m;
    out[static_cast<std::size_t>(c + 3)] = std::sqrt(var / static_cast<double>(n));
  }
  return out;
}

std::array<double, 6> background_stats(Domain d, std::int64_t image_size) {
  return channel_stats(render({}, image_size, palette(d)));
}

void write_ppm(const fs::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("write_ppm: expected [3,H,W], got " + to_string(image.shape()));
  const auto h = image.dim(1), w = image.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cannot write " + path.string());
  out << "P6\n" << w << " " << h << "\n255\n";
  std::vector<char> bytes(static_cast<std::size_t>(3 * h * w));
  const auto d = image.data();
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x)
      for (std::int64_t c = 0; c < 3; ++c)
        bytes[static_cast<std::size_t>((y * w + x) * 3 + c)] =
            static_cast<char>(quantize(d[static_cast<std::size_t>((c * h + y) * w + x)]));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DatasetError("failed writing " + path.string());
}

Tensor read_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("missing image file " + path.string());
  auto token = [&]() {
    std::string t;
    char ch;
    while (in.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(in, skip);
      } else if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!t.empty()) break;
      } else {
        t.push_back(ch);
      }
    }
    return t;
  };
  if (token() != "P6") throw DatasetError(path.string() + ": not a binary PPM (P6)");
  std::int64_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoll(token());
    h = std::stoll(token());
    maxval = std::stoll(token());
  } catch (const std::exception&) {
    throw DatasetError(path.string() + ": malformed PPM header");
  }
  if (w <= 0 || h <= 0 || maxval != 255) throw DatasetError(path.string() + ": unsupported PPM geometry or maxval");
  std::vector<unsigned char> bytes(static_cast<std::size_t>(3 * w * h));
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw DatasetError(path.string() + ": pixel count mismatch (expected " + std::to_string(w * h) + " pixels)");
  }
  std::vector<Real> v(bytes.size());
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x)
      for (std::int64_t c = 0; c < 3; ++c)
        v[static_cast<std::size_t>((c * h + y) * w + x)] =
            static_cast<Real>(to_unit(bytes[static_cast<std::size_t>((y * w + x) * 3 + c)]));
  return Tensor::from({3, h, w}, std::move(v));
}

void write_dataset(const std::vector<Sample>& samples, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  if (ec) throw DatasetError("cannot create " + (dir / "images").string() + ": " + ec.message());
  std::ofstream ann(dir / "annotations.jsonl");
  if (!ann) throw DatasetError("cannot write " + (dir / "annotations.jsonl").string());
  std::vector<std::string> domains;
  std::int64_t image_size = 0;
  for (const auto& s : samples) {
    const std::string file = "images/" + s.id + ".ppm";
    write_ppm(dir / file, s.image);
    json boxes = json::array();
    for (const auto& b : s.boxes) boxes.push_back({b.cx, b.cy, b.w, b.h});
    ann << json{{"file", file}, {"domain", to_string(s.domain)}, {"boxes", boxes}}.dump() << "\n";
    const auto d = to_string(s.domain);
    if (std::find(domains.begin(), domains.end(), d) == domains.end()) domains.push_back(d);
    image_size = s.image.dim(1);
  }
  std::ofstream manifest(dir / "manifest.json");
  manifest << json{{"count", samples.size()}, {"image_size", image_size}, {"domains", domains}}.dump(2) << "\n";
  if (!ann || !manifest) throw DatasetError("failed writing dataset metadata in " + dir.string());
}

std::vector<Sample> read_dataset(const fs::path& dir) {
  std::vector<Sample> out;
  const auto ann_path = dir / "annotations.jsonl";
  if (!fs::exists(ann_path)) {
    if (fs::exists(dir) && !fs::is_empty(dir)) throw DatasetError("missing " + ann_path.string());
    return out;
  }
  std::ifstream ann(ann_path);
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(ann, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Sample s;
    try {
      const auto j = json::parse(line);
      const auto file = j.at("file").get<std::string>();
      s.domain = domain_from_string(j.at("domain").get<std::string>());
      for (const auto& b : j.at("boxes")) {
        if (b.size() != 4) throw std::invalid_argument("box must have 4 numbers");
        s.boxes.push_back({b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()});
      }
      s.id = fs::path(file).stem().string();
      s.image = read_ppm(dir / file);
    } catch (const DatasetError&) {
      throw;
    } catch (const std::exception& e) {
      throw DatasetError(ann_path.string() + ":" + std::to_string(line_no) + ": malformed annotation: " + e.what());
    }
    out.push_back(std::move(s));
  }
  return out;
}

Batch load_batch(const std::vector<Sample>& samples, const std::vector<std::int64_t>& indices) {
  if (indices.empty()) throw std::invalid_argument("load_batch: empty index list");
  Batch b;
  std::vector<Tensor> images;
  const auto& first = samples.at(static_cast<std::size_t>(indices.front())).image.shape();
  for (auto i : indices) {
    const auto& s = samples.at(static_cast<std::size_t>(i));
    if (s.image.shape() != first) {
      throw ShapeError("load_batch: heterogeneous image sizes " + to_string(first) + " vs " + to_string(s.image.shape()));
    }
    images.push_back(reshape(s.image, {1, first[0], first[1], first[2]}));
    b.boxes.push_back(s.boxes);
  }
  b.images = images.size() == 1 ? images.front() : concat(images, 0);
  return b;
}

std::vector<Sample> generate_dataset(Domain d, std::int64_t count, std::int64_t image_size, std::uint64_t seed,
                                     bool paired) {
  std::vector<Sample> out;
  const std::uint64_t domain_salt = paired ? 0 : (d == Domain::kA ? 1 : 2);
  for (std::int64_t i = 0; i < count; ++i) {
    auto rng = derive_rng(seed, {domain_salt, static_cast<std::uint64_t>(i)});
    const std::uint64_t scene_seed = rng();
    const auto n = std::uniform_int_distribution<std::int64_t>(1, 3)(rng);
    auto s = gen_scene({scene_seed, image_size, n, d});
    s.id = to_string(d) + "_" + std::to_string(i);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace boxformer
