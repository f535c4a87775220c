#include "singanseg/sampler.hpp"

#include <nlohmann/json.hpp>

#include <fstream>

#include "singanseg/dataset.hpp"
#include "singanseg/errors.hpp"
#include "singanseg/image_io.hpp"
#include "singanseg/util.hpp"

namespace singanseg {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<GeneratedSample> generate_samples(Checkpoint& ckpt, int start_scale, int n,
                                              std::int64_t seed) {
    if (n < 1) throw ConfigError("generate_samples: n must be >= 1");
    int num_scales = ckpt.stack.schedule.num_scales();
    if (start_scale < 0 || start_scale > num_scales) {
        throw ConfigError("invalid start_scale " + std::to_string(start_scale));
    }
    torch::manual_seed(static_cast<std::uint64_t>(seed));
    std::vector<GeneratedSample> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        auto fc = random_output(ckpt.stack, num_scales - 1, start_scale);
        auto [image, raw_mask] = split_four_channel(fc);
        out.push_back({image, raw_mask});
    }
    return out;
}

GeneratedSample reconstruct(Checkpoint& ckpt) {
    auto fc = reconstruction_output(ckpt.stack, ckpt.stack.schedule.num_scales() - 1);
    auto [image, raw_mask] = split_four_channel(fc);
    return {image, raw_mask};
}

std::pair<torch::Tensor, torch::Tensor> mask_diversity(
    const std::vector<torch::Tensor>& masks) {
    if (masks.size() < 2) throw DataError("mask_diversity: need at least 2 masks");
    for (const auto& m : masks) {
        if (m.sizes() != masks.front().sizes()) {
            throw DataError("mask_diversity: dimension mismatch");
        }
    }
    auto stacked = torch::stack(masks, 0);
    auto mean = stacked.mean(0);
    auto std = stacked.std(0, /*unbiased=*/false);
    return {mean, std};
}

ExportStats export_samples(Checkpoint& ckpt, const std::vector<GeneratedSample>& samples,
                           const fs::path& out_dir, int start_scale, std::int64_t seed,
                           double threshold) {
    fs::create_directories(out_dir / "images");
    fs::create_directories(out_dir / "masks");

    ExportStats stats;
    json entries = json::array();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        auto mask = binarize_mask(samples[i].raw_mask, threshold);
        char suffix[16];
        std::snprintf(suffix, sizeof(suffix), "_s%02zu", i);
        std::string id = ckpt.source_id + suffix;
        if (mask.sum().item<double>() < 1.0) {
            stats.flagged_empty++;
            entries.push_back({{"id", id}, {"flagged_empty", true}});
            continue;
        }
        save_image_rgb(out_dir / "images" / (id + ".png"), samples[i].image);
        save_mask_gray(out_dir / "masks" / (id + ".png"), mask);
        stats.exported++;
        entries.push_back({{"id", id}, {"flagged_empty", false}});
    }

    // one manifest per output dataset; checkpoints append their record
    fs::path manifest_path = out_dir / "generation_manifest.json";
    json manifest = json::array();
    if (fs::exists(manifest_path)) {
        std::ifstream in(manifest_path);
        manifest = json::parse(in);
    }
    manifest.push_back({{"checkpoint_id", ckpt.source_id},
                        {"start_scale", start_scale},
                        {"seed", seed},
                        {"n", samples.size()},
                        {"threshold", threshold},
                        {"flagged_empty", stats.flagged_empty},
                        {"samples", entries}});
    std::ofstream out(manifest_path);
    out << manifest.dump(2) << '\n';
    return stats;
}

}  // namespace singanseg
