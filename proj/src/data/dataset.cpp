// Copyright 2026 The privseg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

#include "privseg/data.hpp"
#include "privseg/serialize.hpp"

namespace privseg {

namespace {

double pixel(const Eigen::VectorXd& v, Index w, Index h, Index x, Index y) {
  return (x < 0 || y < 0 || x >= w || y >= h) ? 0.0 : v[y * w + x];
}

}  // namespace

PhantomSample apply_affine(const PhantomSample& sample, const Affine& t) {
  if (!(t.scale > 0.0)) throw std::invalid_argument("affine scale must be > 0");
  const Index h = sample.image.dim(1), w = sample.image.dim(2);
  const double cx = static_cast<double>(w) / 2.0, cy = static_cast<double>(h) / 2.0;
  const double angle = t.rotate_deg * std::numbers::pi / 180.0;
  const double c = std::cos(angle), s = std::sin(angle);
  const Eigen::VectorXd& src_img = sample.image.values();
  const Eigen::VectorXd& src_mask = sample.mask.values();
  Eigen::VectorXd img(h * w), mask(h * w);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      // Inverse map: undo translation, then rotation and scale about the centre.
      const double dx = static_cast<double>(x) + 0.5 - t.tx - cx;
      const double dy = static_cast<double>(y) + 0.5 - t.ty - cy;
      const double u = (c * dx + s * dy) / t.scale + cx - 0.5;
      const double v = (-s * dx + c * dy) / t.scale + cy - 0.5;
      const double fu = std::floor(u), fv = std::floor(v);
      const Index x0 = static_cast<Index>(fu), y0 = static_cast<Index>(fv);
      const double ax = u - fu, ay = v - fv;
      double value = (1.0 - ay) * ((1.0 - ax) * pixel(src_img, w, h, x0, y0) +
                                   ax * pixel(src_img, w, h, x0 + 1, y0));
      if (ay != 0.0) {
        value += ay * ((1.0 - ax) * pixel(src_img, w, h, x0, y0 + 1) +
                       ax * pixel(src_img, w, h, x0 + 1, y0 + 1));
      }
      img[y * w + x] = value;
      const double m = pixel(src_mask, w, h, static_cast<Index>(std::lround(u)),
                             static_cast<Index>(std::lround(v)));
      mask[y * w + x] = m >= 0.5 ? 1.0 : 0.0;
    }
  }
  PhantomSample out = sample;
  out.image = Tensor(sample.image.shape(), std::move(img));
  out.mask = Tensor(sample.mask.shape(), std::move(mask));
  return out;
}

void AugmentConfig::validate() const {
  if (!(max_translate >= 0.0) || !(max_rotate_deg >= 0.0) || !(scale_lo > 0.0) ||
      !(scale_hi >= scale_lo)) {
    throw std::invalid_argument(fmt::format(
        "invalid augmentation: translate={} rotate={} scale=[{}, {}]", max_translate,
        max_rotate_deg, scale_lo, scale_hi));
  }
}

Affine random_affine(const AugmentConfig& config, RandomStream& rng) {
  config.validate();
  Affine t;
  t.tx = rng.uniform(-config.max_translate, config.max_translate);
  t.ty = rng.uniform(-config.max_translate, config.max_translate);
  t.rotate_deg = rng.uniform(-config.max_rotate_deg, config.max_rotate_deg);
  t.scale = rng.uniform(config.scale_lo, config.scale_hi);
  return t;
}

PhantomSample augment(const PhantomSample& sample, const AugmentConfig& config,
                      RandomStream& rng) {
  return apply_affine(sample, random_affine(config, rng));
}

Batch make_batch(const std::vector<PhantomSample>& samples, std::span<const Index> indices) {
  if (indices.empty()) throw std::invalid_argument("make_batch: no samples selected");
  const Shape& one = samples.at(static_cast<size_t>(indices[0])).image.shape();
  const Index per = shape_numel(one);
  const auto n = static_cast<Index>(indices.size());
  Eigen::VectorXd img(n * per), mask(n * per);
  for (Index k = 0; k < n; ++k) {
    const PhantomSample& s = samples.at(static_cast<size_t>(indices[static_cast<size_t>(k)]));
    if (s.image.shape() != one) {
      throw ShapeError(fmt::format("make_batch: sample shapes {} and {} differ",
                                   shape_string(one), shape_string(s.image.shape())));
    }
    img.segment(k * per, per) = s.image.values();
    mask.segment(k * per, per) = s.mask.values();
  }
  Shape shape = {n, one[0], one[1], one[2]};
  return {Tensor(shape, std::move(img)), Tensor(shape, std::move(mask))};
}

Batch make_batch(const std::vector<PhantomSample>& samples) {
  std::vector<Index> all(samples.size());
  for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<Index>(i);
  return make_batch(samples, all);
}

SplitDataset apply_split(const std::vector<PhantomSample>& samples,
                         const SplitManifest& split) {
  std::map<int, int> where;
  for (int p : split.train) where[p] = 0;
  for (int p : split.val) where[p] = 1;
  for (int p : split.test) where[p] = 2;
  SplitDataset out;
  for (const PhantomSample& s : samples) {
    auto it = where.find(s.patient_id);
    if (it == where.end()) {
      throw std::invalid_argument(fmt::format("patient {} is in no split", s.patient_id));
    }
    (it->second == 0 ? out.train : it->second == 1 ? out.val : out.test).push_back(s);
  }
  return out;
}

namespace {

constexpr const char* kSplitNames[] = {"train", "val", "test"};

std::string record_stem(const PhantomSample& s) {
  return fmt::format("p{:04d}_s{:02d}", s.patient_id, s.slice);
}

Tensor as_2d(const Tensor& t) { return Tensor({t.dim(1), t.dim(2)}, t.values()); }

}  // namespace

void write_dataset(const std::filesystem::path& dir, const std::vector<PhantomSample>& samples,
                   const SplitManifest& split, bool preview) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  if (preview) fs::create_directories(dir / "preview");
  std::map<int, int> where;
  for (int p : split.train) where[p] = 0;
  for (int p : split.val) where[p] = 1;
  for (int p : split.test) where[p] = 2;

  std::ofstream manifest(dir / "manifest.csv", std::ios::binary);
  if (!manifest) throw std::runtime_error(fmt::format("cannot write {}/manifest.csv", dir.string()));
  manifest << "patient_id,split,image_path,mask_path\n";
  for (const PhantomSample& s : samples) {
    auto it = where.find(s.patient_id);
    if (it == where.end()) {
      throw std::invalid_argument(fmt::format("patient {} is in no split", s.patient_id));
    }
    const std::string stem = record_stem(s);
    const std::string image_rel = "images/" + stem + ".pten";
    const std::string mask_rel = "masks/" + stem + ".pten";
    save_pten(dir / image_rel, s.image);
    save_pten(dir / mask_rel, s.mask);
    if (preview) {
      save_pgm(dir / "preview" / (stem + "_image.pgm"), as_2d(s.image));
      save_pgm(dir / "preview" / (stem + "_mask.pgm"), as_2d(s.mask));
    }
    manifest << fmt::format("{},{},{},{}\n", s.patient_id, kSplitNames[it->second], image_rel,
                            mask_rel);
  }
  if (!manifest.flush()) throw std::runtime_error("failed writing dataset manifest");
}

SplitDataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.csv");
  if (!in) throw std::runtime_error(fmt::format("cannot open {}", (dir / "manifest.csv").string()));
  std::string line;
  std::getline(in, line);
  if (line != "patient_id,split,image_path,mask_path") {
    throw FormatError(fmt::format("unexpected manifest header '{}'", line));
  }
  SplitDataset out;
  std::map<int, int> slices;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string id, split, image_rel, mask_rel;
    std::getline(row, id, ',');
    std::getline(row, split, ',');
    std::getline(row, image_rel, ',');
    std::getline(row, mask_rel);
    PhantomSample s;
    try {
      s.patient_id = std::stoi(id);
    } catch (const std::exception&) {
      throw FormatError(fmt::format("bad patient id in manifest row '{}'", line));
    }
    s.slice = slices[s.patient_id]++;
    s.image = load_pten(dir / image_rel);
    s.mask = load_pten(dir / mask_rel);
    if (s.image.rank() != 3 || s.image.shape() != s.mask.shape()) {
      throw FormatError(fmt::format("record {} has image {} and mask {}", image_rel,
                                    shape_string(s.image.shape()),
                                    shape_string(s.mask.shape())));
    }
    if (split == "train") {
      out.train.push_back(std::move(s));
    } else if (split == "val") {
      out.val.push_back(std::move(s));
    } else if (split == "test") {
      out.test.push_back(std::move(s));
    } else {
      throw FormatError(fmt::format("unknown split '{}' in manifest", split));
    }
  }
  return out;
}

}  // namespace privseg
