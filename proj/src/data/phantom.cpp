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

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include <fmt/format.h>

#include "privseg/data.hpp"

namespace privseg {
namespace {

// Stream ids within one patient seed.
constexpr std::uint64_t kGeometryStream = 0x6e0;
constexpr std::uint64_t kSliceStream = 0x511ce;
constexpr std::uint64_t kNoiseStream = 0x4015e;

struct Ellipse {
  double cx, cy, a, b, angle;

  // Squared normalized radius; < 1 inside.
  double radius2(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = (c * dx + s * dy) / a, v = (-s * dx + c * dy) / b;
    return u * u + v * v;
  }
};

}  // namespace

PhantomSample generate_phantom(std::uint64_t patient_seed, Index height, Index width,
                               int slice) {
  if (height < 16 || width < 16) {
    throw std::invalid_argument(
        fmt::format("phantom size {}x{} is below the 16x16 minimum", height, width));
  }
  const double h = static_cast<double>(height), w = static_cast<double>(width);
  const double side = std::min(h, w);

  RandomStream geo(patient_seed, kGeometryStream);
  Ellipse organ{w / 2.0 + geo.uniform(-0.15, 0.15) * w, h / 2.0 + geo.uniform(-0.15, 0.15) * h,
                geo.uniform(0.13, 0.28) * side, geo.uniform(0.11, 0.22) * side,
                geo.uniform(0.0, std::numbers::pi)};
  const double plateau = geo.uniform(0.55, 0.75);
  const double base = geo.uniform(0.10, 0.25);
  const double slope = geo.uniform(0.0, 0.12);
  const double slope_dir = geo.uniform(0.0, 2.0 * std::numbers::pi);

  // Neighbouring slices of one patient cut the same organ at another height.
  RandomStream cut(patient_seed, derive_stream({kSliceStream, static_cast<std::uint64_t>(slice)}));
  if (slice != 0) {
    const double shrink = cut.uniform(0.85, 1.05);
    organ.a *= shrink;
    organ.b *= shrink;
    organ.cx += cut.uniform(-1.0, 1.0);
    organ.cy += cut.uniform(-1.0, 1.0);
  }

  struct Blob {
    double x, y, amp, radius;
  };
  std::vector<Blob> blobs(1 + cut.below(3));
  for (Blob& blob : blobs) {
    do {
      blob.x = cut.uniform(0.0, w);
      blob.y = cut.uniform(0.0, h);
    } while (organ.radius2(blob.x, blob.y) < 1.3);
    blob.amp = cut.uniform(0.10, 0.30);
    blob.radius = cut.uniform(1.2, 2.5) * side / 32.0;
  }

  const std::uint64_t noise_stream =
      derive_stream({kNoiseStream, static_cast<std::uint64_t>(slice)});
  Eigen::VectorXd image(height * width), mask(height * width);
  for (Index y = 0; y < height; ++y) {
    for (Index x = 0; x < width; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      const Index i = y * width + x;
      const double r2 = organ.radius2(px, py);
      double v;
      if (r2 < 1.0) {
        v = plateau + 0.05 * (1.0 - r2);
        mask[i] = 1.0;
      } else {
        v = base + slope * ((px / w - 0.5) * std::cos(slope_dir) +
                            (py / h - 0.5) * std::sin(slope_dir));
        mask[i] = 0.0;
      }
      for (const Blob& blob : blobs) {
        const double d2 = (px - blob.x) * (px - blob.x) + (py - blob.y) * (py - blob.y);
        v += blob.amp * std::exp(-d2 / (2.0 * blob.radius * blob.radius));
      }
      v += 0.05 * gaussian_at(patient_seed, noise_stream, static_cast<std::uint64_t>(i));
      image[i] = std::clamp(v, 0.0, 1.0);
    }
  }
  PhantomSample out;
  out.slice = slice;
  out.image = Tensor({1, height, width}, std::move(image));
  out.mask = Tensor({1, height, width}, std::move(mask));
  return out;
}

void DatasetConfig::validate() const {
  if (patients < 1 || slices_per_patient < 1) {
    throw std::invalid_argument(fmt::format("dataset needs >= 1 patient and slice, got {}x{}",
                                            patients, slices_per_patient));
  }
  if (height < 16 || width < 16) {
    throw std::invalid_argument(
        fmt::format("phantom size {}x{} is below the 16x16 minimum", height, width));
  }
}

std::vector<PhantomSample> generate_dataset(const DatasetConfig& config) {
  config.validate();
  std::vector<PhantomSample> out;
  out.reserve(static_cast<size_t>(config.patients * config.slices_per_patient));
  for (int p = 0; p < config.patients; ++p) {
    const std::uint64_t seed = derive_stream({config.seed, static_cast<std::uint64_t>(p)});
    for (int s = 0; s < config.slices_per_patient; ++s) {
      PhantomSample sample = generate_phantom(seed, config.height, config.width, s);
      sample.patient_id = p;
      out.push_back(std::move(sample));
    }
  }
  return out;
}

SplitManifest split_dataset(std::vector<int> patient_ids, std::array<double, 3> fractions,
                            std::uint64_t seed) {
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9 ||
      *std::min_element(fractions.begin(), fractions.end()) < 0.0) {
    throw std::invalid_argument(fmt::format("split fractions {}/{}/{} must sum to 1",
                                            fractions[0], fractions[1], fractions[2]));
  }
  const auto n = static_cast<long>(patient_ids.size());
  const long n_val = std::lround(fractions[1] * static_cast<double>(n));
  const long n_test = std::lround(fractions[2] * static_cast<double>(n));
  const long n_train = n - n_val - n_test;
  if (n_train < 1 || n_val < 1 || n_test < 1) {
    throw std::invalid_argument(fmt::format(
        "split of {} patients leaves an empty set ({}/{}/{})", n, n_train, n_val, n_test));
  }
  RandomStream rng(seed, hash_name("split"));
  rng.shuffle(patient_ids.begin(), patient_ids.end());
  SplitManifest out;
  out.train.assign(patient_ids.begin(), patient_ids.begin() + n_train);
  out.val.assign(patient_ids.begin() + n_train, patient_ids.begin() + n_train + n_val);
  out.test.assign(patient_ids.begin() + n_train + n_val, patient_ids.end());
  return out;
}

}  // namespace privseg
