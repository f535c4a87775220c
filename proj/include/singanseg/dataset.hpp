#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace singanseg {

/// One real image/mask pair. `image` is 3xHxW float in [0,1], `mask` is
/// 1xHxW float containing only {0,1}.
struct SegmentationSample {
    std::string id;
    torch::Tensor image;
    torch::Tensor mask;
};

/// k-fold assignment keyed by sample id.
struct FoldSplit {
    int k = 0;
    std::int64_t seed = 0;
    std::map<std::string, int> assignments;

    void save_json(const std::filesystem::path& p) const;
    static FoldSplit load_json(const std::filesystem::path& p);
};

/// Loads matched pairs from root/images and root/masks (png/jpg, same stem).
/// Masks are binarized at half range. An optional JSON manifest
/// [{id, image_path, mask_path}, ...] overrides directory scanning.
std::vector<SegmentationSample> load_dataset(
    const std::filesystem::path& root_dir,
    const std::optional<std::filesystem::path>& manifest = std::nullopt);

/// [0,1] image + {0,1} mask -> 4xHxW tensor in model range [-1,1].
torch::Tensor stack_four_channel(const torch::Tensor& image, const torch::Tensor& mask);

/// Inverse of stack_four_channel, clipped to [0,1]. The returned mask is soft.
std::pair<torch::Tensor, torch::Tensor> split_four_channel(const torch::Tensor& fc);

/// Soft [0,1] mask -> {0,1} with `value >= threshold` convention.
torch::Tensor binarize_mask(const torch::Tensor& raw_mask, double threshold = 0.5);

/// 100 * true pixels / total pixels.
double true_pixel_percentage(const torch::Tensor& mask);

struct HistogramBin {
    double lo = 0.0;
    std::int64_t count = 0;
};

/// Bins true-pixel percentages into [0,b), [b,2b), ...; the last bin is
/// closed at 100. bin_size must divide 100.
std::vector<HistogramBin> mask_histogram(const std::vector<torch::Tensor>& masks,
                                         double bin_size);

/// Seeded shuffle + round-robin assignment. Synthetic ids ("<realid>_s<nn>")
/// inherit the fold of their source real image.
FoldSplit make_folds(const std::vector<SegmentationSample>& samples, int k, std::int64_t seed);

/// Source-id prefix of a (possibly synthetic) sample id: "img7_s03" -> "img7".
std::string source_id(const std::string& sample_id);

}  // namespace singanseg
