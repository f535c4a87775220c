#pragma once

#include <torch/torch.h>

#include <filesystem>

namespace singanseg {

/// Reads an image file as 3xHxW float RGB in [0,1]. Throws DataError.
torch::Tensor load_image_rgb(const std::filesystem::path& p);

/// Reads a mask file as 1xHxW float in [0,1] (grayscale, not binarized).
torch::Tensor load_mask_gray(const std::filesystem::path& p);

/// Writes a 3xHxW [0,1] tensor as an 8-bit PNG/JPEG (by extension).
void save_image_rgb(const std::filesystem::path& p, const torch::Tensor& image);

/// Writes a 1xHxW [0,1] tensor as an 8-bit grayscale image.
void save_mask_gray(const std::filesystem::path& p, const torch::Tensor& mask);

}  // namespace singanseg
