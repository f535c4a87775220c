#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <vector>

#include "singanseg/trainer.hpp"

namespace singanseg {

struct GeneratedSample {
    torch::Tensor image;     // 3xHxW in [0,1]
    torch::Tensor raw_mask;  // 1xHxW in [0,1], not yet binarized
};

/// n independent draws. Scales below start_scale follow the reconstruction
/// path; start_scale 0 (the coarsest) is fully random. start_scale ==
/// num_scales yields n copies of the reconstruction. Deterministic under
/// seed.
std::vector<GeneratedSample> generate_samples(Checkpoint& ckpt, int start_scale, int n,
                                              std::int64_t seed);

/// Deterministic fixed-noise generation; approximates the training sample.
GeneratedSample reconstruct(Checkpoint& ckpt);

/// Pixel-wise mean and population standard deviation over a stack of masks.
std::pair<torch::Tensor, torch::Tensor> mask_diversity(const std::vector<torch::Tensor>& masks);

struct ExportStats {
    int exported = 0;
    int flagged_empty = 0;
};

/// Writes samples as PNG pairs "<realid>_s<nn>.png" under out/images and
/// out/masks (binarized at `threshold`); samples whose mask binarizes to
/// all-background are flagged and skipped. Appends to the generation
/// manifest at out/generation_manifest.json.
ExportStats export_samples(Checkpoint& ckpt, const std::vector<GeneratedSample>& samples,
                           const std::filesystem::path& out_dir, int start_scale,
                           std::int64_t seed, double threshold = 0.5);

}  // namespace singanseg
