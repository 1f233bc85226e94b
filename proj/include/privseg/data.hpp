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

#ifndef PRIVSEG_DATA_HPP_
#define PRIVSEG_DATA_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "privseg/random.hpp"
#include "privseg/tensor.hpp"

namespace privseg {

// One record: a (1,H,W) image in [0,1] and its binary organ mask.
struct PhantomSample {
  int patient_id = 0;
  int slice = 0;
  Tensor image;
  Tensor mask;
};

// Synthetic abdominal slice: a rotated ellipse "organ" with a smooth bright
// plateau over a dim background made of a linear gradient, 1-3 blob
// distractors and Gaussian pixel noise (std 0.05). The mask is the exact
// ellipse interior at pixel centres. `slice` varies the cross-section of the
// same patient's organ. Throws std::invalid_argument when H or W < 16.
PhantomSample generate_phantom(std::uint64_t patient_seed, Index height, Index width,
                               int slice = 0);

struct DatasetConfig {
  int patients = 120;
  int slices_per_patient = 1;
  Index height = 32;
  Index width = 32;
  std::uint64_t seed = 1;

  void validate() const;
};

// Patient p uses seed derive_stream({config.seed, p}); ids run 0..patients-1.
std::vector<PhantomSample> generate_dataset(const DatasetConfig& config);

struct SplitManifest {
  std::vector<int> train, val, test;
};

inline constexpr std::array<double, 3> kDefaultSplit = {0.63, 0.07, 0.30};

// Shuffles the ids with `seed`, then takes round(f_val * n) validation and
// round(f_test * n) test patients; the remainder is training.
SplitManifest split_dataset(std::vector<int> patient_ids, std::array<double, 3> fractions,
                            std::uint64_t seed);

struct Affine {
  double tx = 0.0, ty = 0.0;  // pixels, +x right, +y down
  double rotate_deg = 0.0;    // about the image centre
  double scale = 1.0;
};

// Applies the transform to image (bilinear, zero fill) and mask (nearest,
// re-binarized). Output pixel p samples the input at the inverse image of p.
PhantomSample apply_affine(const PhantomSample& sample, const Affine& t);

struct AugmentConfig {
  double max_translate = 3.0;
  double max_rotate_deg = 15.0;
  double scale_lo = 0.9, scale_hi = 1.1;

  void validate() const;
};

Affine random_affine(const AugmentConfig& config, RandomStream& rng);
PhantomSample augment(const PhantomSample& sample, const AugmentConfig& config,
                      RandomStream& rng);

// Stacks the selected samples into (N,1,H,W) images and masks.
struct Batch {
  Tensor images;
  Tensor masks;
};
Batch make_batch(const std::vector<PhantomSample>& samples, std::span<const Index> indices);
Batch make_batch(const std::vector<PhantomSample>& samples);

// Records split by patient.
struct SplitDataset {
  std::vector<PhantomSample> train, val, test;
};
SplitDataset apply_split(const std::vector<PhantomSample>& samples, const SplitManifest& split);

// dir/manifest.csv (patient_id,split,image_path,mask_path) with PTEN files
// under dir/images and dir/masks; PGM previews under dir/preview when asked.
void write_dataset(const std::filesystem::path& dir, const std::vector<PhantomSample>& samples,
                   const SplitManifest& split, bool preview);
SplitDataset read_dataset(const std::filesystem::path& dir);

}  // namespace privseg

#endif  // PRIVSEG_DATA_HPP_
