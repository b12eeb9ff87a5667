#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "aim/data/feature_space.hpp"

namespace aim::data {

struct GrayImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;  // row-major

  double at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }
  double& at(std::size_t r, std::size_t c) { return pixels[r * width + c]; }
};

/// Feature space of g x g superpixels over height x width images.
inline FeatureSpace image_space(std::size_t height, std::size_t width, std::size_t grid) {
  if (grid == 0 || height % grid != 0 || width % grid != 0) {
    throw std::invalid_argument("image dims must be divisible by the patch grid");
  }
  FeatureSpace s;
  s.modality = Modality::kImage;
  s.d = grid * grid;
  s.slot_width = (height / grid) * (width / grid);
  s.image_height = height;
  s.image_width = width;
  s.grid = grid;
  for (std::size_t r = 0; r < grid; ++r) {
    for (std::size_t c = 0; c < grid; ++c) s.descriptors.push_back("patch(" + std::to_string(r) + "," + std::to_string(c) + ")");
  }
  return s;
}

/// Splits an image into grid x grid patches; slot i (row-major patch order) holds the
/// flattened pixel block, row-major inside the patch.
inline FeatureVector patch_image(const GrayImage& img, std::size_t grid) {
  if (grid == 0 || img.height % grid != 0 || img.width % grid != 0) {
    throw std::invalid_argument("patch_image: " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                                " not divisible by grid " + std::to_string(grid));
  }
  if (img.pixels.size() != img.height * img.width) throw std::invalid_argument("patch_image: pixel count mismatch");
  const std::size_t ph = img.height / grid, pw = img.width / grid;
  FeatureVector x;
  x.values = Matrix(static_cast<Eigen::Index>(grid * grid), static_cast<Eigen::Index>(ph * pw));
  x.valid.assign(grid * grid, 1);
  for (std::size_t gr = 0; gr < grid; ++gr) {
    for (std::size_t gc = 0; gc < grid; ++gc) {
      const auto slot = static_cast<Eigen::Index>(gr * grid + gc);
      for (std::size_t r = 0; r < ph; ++r) {
        for (std::size_t c = 0; c < pw; ++c) {
          x.values(slot, static_cast<Eigen::Index>(r * pw + c)) = img.at(gr * ph + r, gc * pw + c);
        }
      }
    }
  }
  return x;
}

inline GrayImage reassemble_patches(const FeatureVector& x, std::size_t height, std::size_t width, std::size_t grid) {
  if (grid == 0 || height % grid != 0 || width % grid != 0) throw std::invalid_argument("reassemble_patches: bad grid");
  const std::size_t ph = height / grid, pw = width / grid;
  if (x.values.rows() != static_cast<Eigen::Index>(grid * grid) || x.values.cols() != static_cast<Eigen::Index>(ph * pw)) {
    throw std::invalid_argument("reassemble_patches: shape mismatch");
  }
  GrayImage img{height, width, std::vector<double>(height * width)};
  for (std::size_t gr = 0; gr < grid; ++gr) {
    for (std::size_t gc = 0; gc < grid; ++gc) {
      const auto slot = static_cast<Eigen::Index>(gr * grid + gc);
      for (std::size_t r = 0; r < ph; ++r) {
        for (std::size_t c = 0; c < pw; ++c) {
          img.at(gr * ph + r, gc * pw + c) = x.values(slot, static_cast<Eigen::Index>(r * pw + c));
        }
      }
    }
  }
  return img;
}

/// Flattens the slots of an image feature vector back into one image row (h * w).
inline RowVector image_row(const FeatureVector& x, const FeatureSpace& space) {
  const GrayImage img = reassemble_patches(x, space.image_height, space.image_width, space.grid);
  RowVector row(static_cast<Eigen::Index>(img.pixels.size()));
  for (std::size_t i = 0; i < img.pixels.size(); ++i) row(static_cast<Eigen::Index>(i)) = img.pixels[i];
  return row;
}

}  // namespace aim::data
