#include "singanseg/pyramid.hpp"

#include <cmath>

#include "singanseg/errors.hpp"

namespace singanseg {

ScaleSchedule compute_scale_schedule(std::int64_t h, std::int64_t w, double r, int min_dim,
                                     int max_dim) {
    if (!(r > 0.0 && r < 1.0)) throw ConfigError("scale factor must be in (0,1)");
    if (min_dim >= max_dim) throw ConfigError("min_dim must be < max_dim");
    if (std::min(h, w) < min_dim) {
        throw DataError("image too small for pyramid: " + std::to_string(h) + "x" +
                        std::to_string(w));
    }

    // aspect-preserving cap
    std::int64_t max_side = std::max(h, w);
    if (max_side > max_dim) {
        double cap = static_cast<double>(max_dim) / static_cast<double>(max_side);
        h = std::llround(static_cast<double>(h) * cap);
        w = std::llround(static_cast<double>(w) * cap);
    }

    int coarser_levels = static_cast<int>(std::floor(
        std::log(static_cast<double>(min_dim) / static_cast<double>(std::min(h, w))) /
        std::log(r)));
    coarser_levels = std::max(coarser_levels, 0);

    ScaleSchedule schedule;
    schedule.scale_factor = r;
    schedule.stop_scale_min_dim = min_dim;
    schedule.max_dim_cap = max_dim;
    for (int dist = coarser_levels; dist >= 0; --dist) {
        double f = std::pow(r, dist);
        auto sh = std::max<std::int64_t>(2, std::llround(static_cast<double>(h) * f));
        auto sw = std::max<std::int64_t>(2, std::llround(static_cast<double>(w) * f));
        schedule.dims.emplace_back(sh, sw);
    }
    return schedule;
}

torch::Tensor resample(const torch::Tensor& fc, std::int64_t h, std::int64_t w) {
    TORCH_CHECK(fc.dim() == 3, "expected CxHxW tensor");
    TORCH_CHECK(h >= 2 && w >= 2, "target dims must be >= 2");
    if (fc.size(1) == h && fc.size(2) == w) return fc;
    bool down = h < fc.size(1) || w < fc.size(2);
    namespace F = torch::nn::functional;
    auto out = F::interpolate(fc.unsqueeze(0),
                              F::InterpolateFuncOptions()
                                  .size(std::vector<std::int64_t>{h, w})
                                  .mode(torch::kBilinear)
                                  .align_corners(false)
                                  .antialias(down));
    return out.squeeze(0);
}

ImagePyramid build_pyramid(const torch::Tensor& fc, const ScaleSchedule& schedule) {
    auto [fh, fw] = schedule.finest();
    if (fc.dim() != 3 || fc.size(1) != fh || fc.size(2) != fw) {
        throw DataError("build_pyramid: input dims do not match schedule finest level");
    }
    ImagePyramid pyr;
    pyr.schedule = schedule;
    for (const auto& [h, w] : schedule.dims) pyr.levels.push_back(resample(fc, h, w));
    return pyr;
}

}  // namespace singanseg
