#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

#include "singanseg/dataset.hpp"
#include "singanseg/image_io.hpp"

namespace fixtures {

namespace fs = std::filesystem;

inline fs::path temp_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("singanseg_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

/// Polyp-like synthetic sample: textured background with an elliptical
/// foreground blob of distinct color/texture; the mask marks the ellipse.
inline singanseg::SegmentationSample make_polyp_sample(const std::string& id, std::int64_t h,
                                                       std::int64_t w, std::int64_t seed) {
    torch::manual_seed(static_cast<std::uint64_t>(seed));
    namespace F = torch::nn::functional;

    auto smooth_noise = [&](double amplitude) {
        auto coarse = torch::randn({1, 3, h / 8 + 2, w / 8 + 2});
        auto up = F::interpolate(coarse, F::InterpolateFuncOptions()
                                             .size(std::vector<std::int64_t>{h, w})
                                             .mode(torch::kBilinear)
                                             .align_corners(false));
        return up.squeeze(0) * amplitude;
    };

    auto base = torch::tensor({0.35, 0.25, 0.3}, torch::kFloat32).view({3, 1, 1});
    auto image = (base + smooth_noise(0.12)).clamp(0.05, 0.95);

    auto ys = torch::arange(h, torch::kFloat32).view({h, 1});
    auto xs = torch::arange(w, torch::kFloat32).view({1, w});
    double cy = static_cast<double>(h) * (0.4 + 0.2 * ((seed % 5) / 5.0));
    double cx = static_cast<double>(w) * (0.4 + 0.2 * ((seed % 7) / 7.0));
    double ry = static_cast<double>(h) * (0.18 + 0.08 * ((seed % 3) / 3.0));
    double rx = static_cast<double>(w) * (0.2 + 0.06 * ((seed % 4) / 4.0));
    auto dist = ((ys - cy) / ry).pow(2) + ((xs - cx) / rx).pow(2);
    auto mask = (dist <= 1.0).to(torch::kFloat32).unsqueeze(0);

    auto tint = torch::tensor({0.75, 0.45, 0.4}, torch::kFloat32).view({3, 1, 1});
    auto fg = (tint + smooth_noise(0.08)).clamp(0.05, 0.95);
    image = image * (1 - mask) + fg * mask;

    return {id, image.clamp(0, 1), mask};
}

inline std::vector<singanseg::SegmentationSample> make_polyp_dataset(int n, std::int64_t h,
                                                                     std::int64_t w,
                                                                     std::int64_t seed) {
    std::vector<singanseg::SegmentationSample> out;
    for (int i = 0; i < n; ++i) {
        char id[16];
        std::snprintf(id, sizeof(id), "img%02d", i);
        out.push_back(make_polyp_sample(id, h, w, seed + i));
    }
    return out;
}

inline void write_dataset(const fs::path& root,
                          const std::vector<singanseg::SegmentationSample>& samples) {
    fs::create_directories(root / "images");
    fs::create_directories(root / "masks");
    for (const auto& s : samples) {
        singanseg::save_image_rgb(root / "images" / (s.id + ".png"), s.image);
        singanseg::save_mask_gray(root / "masks" / (s.id + ".png"), s.mask);
    }
}

}  // namespace fixtures
