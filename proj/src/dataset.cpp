/**
 * Copyright 2026 The DSG Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "dsg/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include "dsg/binary_io.hpp"
#include "dsg/random.hpp"

namespace dsg {
namespace fs = std::filesystem;

Dataset Dataset::subset(Index begin, Index end) const {
  Dataset out{images.slice_batch(begin, end), {}};
  if (labeled()) out.labels.assign(labels.begin() + begin, labels.begin() + end);
  return out;
}

namespace {

constexpr std::uint32_t kIdxImages3 = 0x00000803;
constexpr std::uint32_t kIdxImages4 = 0x00000804;
constexpr std::uint32_t kIdxLabels = 0x00000801;

std::uint32_t read_be32(std::istream& in, const fs::path& path) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw_format(path.string() + ": truncated IDX header");
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) | b[3];
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
  out.write(b.data(), 4);
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_format("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw_format("cannot write " + path.string());
  return out;
}

}  // namespace

Dataset load_idx(const fs::path& images_path, const fs::path& labels_path) {
  auto in = open_in(images_path);
  const std::uint32_t magic = read_be32(in, images_path);
  if (magic != kIdxImages3 && magic != kIdxImages4) throw_format(images_path.string() + ": bad IDX image magic");
  Shape shape{read_be32(in, images_path), 1, 0, 0};
  if (magic == kIdxImages4) shape[1] = read_be32(in, images_path);
  shape[2] = read_be32(in, images_path);
  shape[3] = read_be32(in, images_path);
  for (Index d : shape) {
    if (d <= 0) throw_format(images_path.string() + ": zero IDX dimension");
  }
  std::vector<unsigned char> pixels(std::size_t(shape_size(shape)));
  if (!in.read(reinterpret_cast<char*>(pixels.data()), std::streamsize(pixels.size()))) {
    throw_format(images_path.string() + ": truncated IDX pixel data");
  }
  Dataset d{Tensor(shape), {}};
  for (std::size_t i = 0; i < pixels.size(); ++i) d.images[Index(i)] = double(pixels[i]) / 255.0;

  auto lin = open_in(labels_path);
  if (read_be32(lin, labels_path) != kIdxLabels) throw_format(labels_path.string() + ": bad IDX label magic");
  const std::uint32_t count = read_be32(lin, labels_path);
  if (Index(count) != shape[0]) throw_format("IDX label count does not match image count");
  std::vector<unsigned char> labels(count);
  if (!lin.read(reinterpret_cast<char*>(labels.data()), std::streamsize(count))) {
    throw_format(labels_path.string() + ": truncated IDX labels");
  }
  d.labels.assign(labels.begin(), labels.end());
  return d;
}

void save_idx(const Dataset& data, const fs::path& images_path, const fs::path& labels_path) {
  const Shape& s = data.images.shape();
  if (s.size() != 4) throw_invalid("save_idx: images must be [B,C,H,W]");
  if (Index(data.labels.size()) != s[0]) throw_invalid("save_idx: IDX requires one label per image");
  auto out = open_out(images_path);
  write_be32(out, s[1] == 1 ? kIdxImages3 : kIdxImages4);
  write_be32(out, std::uint32_t(s[0]));
  if (s[1] != 1) write_be32(out, std::uint32_t(s[1]));
  write_be32(out, std::uint32_t(s[2]));
  write_be32(out, std::uint32_t(s[3]));
  std::vector<char> pixels(std::size_t(data.images.size()));
  for (Index i = 0; i < data.images.size(); ++i) {
    pixels[std::size_t(i)] = char(std::lround(std::clamp(data.images[i], 0.0, 1.0) * 255.0));
  }
  out.write(pixels.data(), std::streamsize(pixels.size()));

  auto lout = open_out(labels_path);
  write_be32(lout, kIdxLabels);
  write_be32(lout, std::uint32_t(data.labels.size()));
  for (std::int32_t l : data.labels) {
    if (l < 0 || l > 255) throw_invalid("save_idx: label does not fit an unsigned byte");
    lout.put(char(l));
  }
}

Dataset load_raw(const fs::path& dir) {
  std::ifstream meta(dir / "data.meta");
  if (!meta) throw_format("cannot open " + (dir / "data.meta").string());
  std::string line;
  std::getline(meta, line);
  if (line.rfind("shape=", 0) != 0) throw_format("data.meta: expected 'shape=B,C,H,W'");
  Shape shape;
  std::stringstream ss(line.substr(6));
  for (std::string tok; std::getline(ss, tok, ',');) {
    try {
      shape.push_back(std::stoll(tok));
    } catch (const std::exception&) {
      throw_format("data.meta: bad extent '" + tok + "'");
    }
  }
  if (shape.size() != 4 || std::any_of(shape.begin(), shape.end(), [](Index d) { return d <= 0; })) {
    throw_format("data.meta: shape must have four positive extents");
  }
  Dataset d{Tensor(shape, read_f64_file(dir / "data.bin", shape_size(shape))), {}};
  if (fs::exists(dir / "labels.bin")) {
    d.labels = read_i32_file(dir / "labels.bin", shape[0]);
  }
  return d;
}

void save_raw(const Dataset& data, const fs::path& dir) {
  fs::create_directories(dir);
  const Shape& s = data.images.shape();
  if (s.size() != 4) throw_invalid("save_raw: images must be [B,C,H,W]");
  {
    auto meta = open_out(dir / "data.meta");
    meta << "shape=" << s[0] << ',' << s[1] << ',' << s[2] << ',' << s[3] << '\n';
  }
  write_f64_file(dir / "data.bin", data.images.data(), data.images.size());
  if (data.labeled()) write_i32_file(dir / "labels.bin", data.labels);
}

Dataset load_dataset(const fs::path& dir) {
  if (fs::exists(dir / "data.meta")) return load_raw(dir);
  if (fs::exists(dir / "images.idx")) return load_idx(dir / "images.idx", dir / "labels.idx");
  throw_format(dir.string() + ": neither a raw (data.meta) nor an IDX (images.idx) dataset");
}

// ---------------------------------------------------------------------------
// synthetic digits

namespace {

struct Point {
  double x, y;
};
using Stroke = std::vector<Point>;

void arc(Stroke& s, double cx, double cy, double rx, double ry, double from_deg, double to_deg) {
  const int steps = std::max(4, int(std::abs(to_deg - from_deg) / 15.0));
  for (int i = 0; i <= steps; ++i) {
    const double a = (from_deg + (to_deg - from_deg) * i / steps) * std::numbers::pi / 180.0;
    s.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
  }
}

// Unit-square glyphs, y pointing down.
std::vector<Stroke> glyph(int digit) {
  std::vector<Stroke> g;
  switch (digit) {
    case 0: {
      Stroke s;
      arc(s, 0.5, 0.5, 0.26, 0.38, 0, 360);
      g.push_back(s);
      break;
    }
    case 1:
      g.push_back({{0.36, 0.26}, {0.52, 0.12}, {0.52, 0.88}});
      break;
    case 2: {
      Stroke s;
      arc(s, 0.5, 0.33, 0.25, 0.21, 190, 400);
      s.push_back({0.24, 0.88});
      s.push_back({0.78, 0.88});
      g.push_back(s);
      break;
    }
    case 3: {
      Stroke a, b;
      arc(a, 0.48, 0.31, 0.22, 0.19, 200, 450);
      arc(b, 0.48, 0.69, 0.25, 0.19, 270, 520);
      g.push_back(a);
      g.push_back(b);
      break;
    }
    case 4:
      g.push_back({{0.62, 0.88}, {0.62, 0.12}, {0.22, 0.66}, {0.80, 0.66}});
      break;
    case 5: {
      Stroke s{{0.74, 0.14}, {0.32, 0.14}, {0.29, 0.46}};
      arc(s, 0.49, 0.65, 0.25, 0.22, 220, 520);
      g.push_back(s);
      break;
    }
    case 6: {
      Stroke s{{0.68, 0.12}, {0.45, 0.30}, {0.32, 0.52}, {0.29, 0.68}};
      arc(s, 0.5, 0.68, 0.21, 0.2, 180, 540);
      g.push_back(s);
      break;
    }
    case 7:
      g.push_back({{0.22, 0.14}, {0.78, 0.14}, {0.42, 0.88}});
      break;
    case 8: {
      Stroke a, b;
      arc(a, 0.5, 0.30, 0.2, 0.17, 0, 360);
      arc(b, 0.5, 0.68, 0.24, 0.2, 0, 360);
      g.push_back(a);
      g.push_back(b);
      break;
    }
    case 9: {
      Stroke a;
      arc(a, 0.5, 0.33, 0.21, 0.2, 0, 360);
      g.push_back(a);
      g.push_back({{0.71, 0.33}, {0.68, 0.60}, {0.55, 0.88}});
      break;
    }
    default:
      throw_invalid("glyph: digit out of range");
  }
  return g;
}

double segment_distance(Point p, Point a, Point b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = a.x + t * dx - p.x, ey = a.y + t * dy - p.y;
  return std::sqrt(ex * ex + ey * ey);
}

void render_digit(int digit, Rng& rng, double* out, Index h, Index w) {
  auto strokes = glyph(digit);
  const double angle = std::clamp(rng.normal() * 0.15, -0.35, 0.35);
  const double sx = rng.uniform(0.8, 1.1), sy = rng.uniform(0.85, 1.1);
  const double shear = rng.uniform(-0.2, 0.2);
  const double tx = rng.uniform(-0.08, 0.08), ty = rng.uniform(-0.07, 0.07);
  const double half_width = rng.uniform(0.8, 1.7);
  const double ink = rng.uniform(0.75, 1.0);
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double span = double(std::min(h, w)) - 4.0;
  for (auto& s : strokes) {
    for (auto& p : s) {
      const double ux = p.x - 0.5 + 0.025 * rng.normal();
      const double uy = p.y - 0.5 + 0.025 * rng.normal();
      const double qx = sx * (ux + shear * uy), qy = sy * uy;
      p.x = (ca * qx - sa * qy + 0.5 + tx) * span + 2.0;
      p.y = (sa * qx + ca * qy + 0.5 + ty) * span + 2.0;
    }
  }
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      const Point c{double(x) + 0.5, double(y) + 0.5};
      double d = 1e9;
      for (const auto& s : strokes) {
        for (std::size_t i = 0; i + 1 < s.size(); ++i) d = std::min(d, segment_distance(c, s[i], s[i + 1]));
      }
      const double v = ink * std::clamp(half_width + 0.5 - d, 0.0, 1.0) + 0.04 * rng.normal();
      out[y * w + x] = std::clamp(v, 0.0, 1.0);
    }
  }
}

}  // namespace

Dataset make_synthetic_digits(Index count, std::uint64_t seed) {
  if (count <= 0) throw_invalid("make_synthetic_digits: count must be positive");
  constexpr Index kSide = 28;
  Dataset d{Tensor({count, 1, kSide, kSide}), std::vector<std::int32_t>(std::size_t(count))};
  Rng rng(seed);
  for (Index i = 0; i < count; ++i) {
    const int digit = int(i % 10);
    d.labels[std::size_t(i)] = digit;
    render_digit(digit, rng, d.images.data() + i * kSide * kSide, kSide, kSide);
  }
  return d;
}

void standardize(Dataset& data, double mean, double std) {
  if (!(std > 0.0)) throw_invalid("standardize: std must be positive");
  data.images.array() = (data.images.array() - mean) / std;
}

}  // namespace dsg
