#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <vector>

namespace singanseg {

/// Per-image multi-scale schedule, ordered coarsest -> finest. Index 0 is
/// the coarsest level; the last index is the finest (G_0).
struct ScaleSchedule {
    double scale_factor = 0.75;
    int stop_scale_min_dim = 25;
    int max_dim_cap = 250;
    std::vector<std::pair<std::int64_t, std::int64_t>> dims;  // (h, w) coarse -> fine

    int num_scales() const { return static_cast<int>(dims.size()); }
    std::pair<std::int64_t, std::int64_t> finest() const { return dims.back(); }
    std::pair<std::int64_t, std::int64_t> coarsest() const { return dims.front(); }
};

/// Caps (h,w) so max(h,w) <= max_dim preserving aspect ratio, then derives
/// the geometric schedule dims[n] = round(finest * r^distance_from_finest)
/// down to min side >= min_dim.
ScaleSchedule compute_scale_schedule(std::int64_t h, std::int64_t w, double r = 0.75,
                                     int min_dim = 25, int max_dim = 250);

/// Bilinear resample (anti-aliased when downscaling) of a CxHxW tensor; all
/// channels treated identically.
torch::Tensor resample(const torch::Tensor& fc, std::int64_t h, std::int64_t w);

/// Levels aligned with ScaleSchedule.dims, each resampled directly from the
/// finest level. Level tensors are 4xHxW in model range.
struct ImagePyramid {
    ScaleSchedule schedule;
    std::vector<torch::Tensor> levels;  // coarse -> fine
};

ImagePyramid build_pyramid(const torch::Tensor& fc, const ScaleSchedule& schedule);

}  // namespace singanseg
