#include "singanseg/dataset.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "singanseg/errors.hpp"
#include "singanseg/image_io.hpp"

namespace singanseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kMinSideLen = 25;

bool has_image_ext(const fs::path& p) {
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

SegmentationSample load_pair(const std::string& id, const fs::path& image_path,
                             const fs::path& mask_path) {
    auto image = load_image_rgb(image_path);
    auto mask_raw = load_mask_gray(mask_path);
    if (image.size(1) != mask_raw.size(1) || image.size(2) != mask_raw.size(2)) {
        throw DataError("size mismatch between image and mask: " + id);
    }
    if (image.size(1) < kMinSideLen || image.size(2) < kMinSideLen) {
        throw DataError("image smaller than " + std::to_string(kMinSideLen) + "px: " + id);
    }
    return {id, image, binarize_mask(mask_raw, 0.5)};
}

}  // namespace

std::vector<SegmentationSample> load_dataset(const fs::path& root_dir,
                                             const std::optional<fs::path>& manifest) {
    std::vector<std::tuple<std::string, fs::path, fs::path>> entries;

    if (manifest) {
        std::ifstream in(*manifest);
        if (!in) throw DataError("cannot read manifest: " + manifest->string());
        json j = json::parse(in);
        for (const auto& e : j) {
            entries.emplace_back(e.at("id").get<std::string>(),
                                 root_dir / e.at("image_path").get<std::string>(),
                                 root_dir / e.at("mask_path").get<std::string>());
        }
    } else {
        fs::path images_dir = root_dir / "images";
        fs::path masks_dir = root_dir / "masks";
        if (!fs::is_directory(images_dir) || !fs::is_directory(masks_dir)) {
            throw DataError("dataset root must contain images/ and masks/: " +
                            root_dir.string());
        }
        for (const auto& e : fs::directory_iterator(images_dir)) {
            if (!e.is_regular_file() || !has_image_ext(e.path())) continue;
            std::string stem = e.path().stem().string();
            fs::path mask;
            for (const char* ext : {".png", ".jpg", ".jpeg"}) {
                fs::path cand = masks_dir / (stem + ext);
                if (fs::exists(cand)) { mask = cand; break; }
            }
            if (mask.empty()) throw DataError("missing mask: " + stem);
            entries.emplace_back(stem, e.path(), mask);
        }
    }

    std::sort(entries.begin(), entries.end(),
              [](const auto& a, const auto& b) { return std::get<0>(a) < std::get<0>(b); });

    std::vector<SegmentationSample> samples;
    samples.reserve(entries.size());
    for (const auto& [id, img, msk] : entries) samples.push_back(load_pair(id, img, msk));
    return samples;
}

torch::Tensor stack_four_channel(const torch::Tensor& image, const torch::Tensor& mask) {
    if (image.dim() != 3 || image.size(0) != 3 || mask.dim() != 3 || mask.size(0) != 1 ||
        image.size(1) != mask.size(1) || image.size(2) != mask.size(2)) {
        throw DataError("stack_four_channel: shape mismatch");
    }
    return torch::cat({image, mask}, 0).mul(2.0).sub(1.0);
}

std::pair<torch::Tensor, torch::Tensor> split_four_channel(const torch::Tensor& fc) {
    TORCH_CHECK(fc.dim() == 3 && fc.size(0) == 4, "expected 4xHxW tensor");
    auto storage = fc.add(1.0).div(2.0).clamp(0.0, 1.0);
    return {storage.slice(0, 0, 3).contiguous(), storage.slice(0, 3, 4).contiguous()};
}

torch::Tensor binarize_mask(const torch::Tensor& raw_mask, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw ConfigError("mask threshold must be in (0,1), got " + std::to_string(threshold));
    }
    return raw_mask.ge(threshold).to(torch::kFloat32);
}

double true_pixel_percentage(const torch::Tensor& mask) {
    return 100.0 * mask.sum().item<double>() / static_cast<double>(mask.numel());
}

std::vector<HistogramBin> mask_histogram(const std::vector<torch::Tensor>& masks,
                                         double bin_size) {
    if (bin_size <= 0.0 || bin_size > 100.0) {
        throw ConfigError("bin_size must be in (0,100]");
    }
    double ratio = 100.0 / bin_size;
    if (std::abs(ratio - std::round(ratio)) > 1e-9) {
        throw ConfigError("bin_size must divide 100");
    }
    auto num_bins = static_cast<std::size_t>(std::llround(ratio));
    std::vector<HistogramBin> bins(num_bins);
    for (std::size_t i = 0; i < num_bins; ++i) bins[i].lo = bin_size * static_cast<double>(i);
    for (const auto& m : masks) {
        double pct = true_pixel_percentage(m);
        auto idx = static_cast<std::size_t>(pct / bin_size);
        if (idx >= num_bins) idx = num_bins - 1;  // 100% closes the last bin
        bins[idx].count++;
    }
    return bins;
}

std::string source_id(const std::string& sample_id) {
    auto pos = sample_id.rfind("_s");
    if (pos == std::string::npos) return sample_id;
    // only strip a "_s<digits>" suffix
    for (std::size_t i = pos + 2; i < sample_id.size(); ++i) {
        if (!std::isdigit(static_cast<unsigned char>(sample_id[i]))) return sample_id;
    }
    if (pos + 2 == sample_id.size()) return sample_id;
    return sample_id.substr(0, pos);
}

FoldSplit make_folds(const std::vector<SegmentationSample>& samples, int k,
                     std::int64_t seed) {
    if (k < 2) throw ConfigError("make_folds: k must be >= 2");

    // fold the distinct source ids, then let every sample inherit
    std::set<std::string> source_set;
    for (const auto& s : samples) source_set.insert(source_id(s.id));
    std::vector<std::string> sources(source_set.begin(), source_set.end());
    if (static_cast<int>(sources.size()) < k) {
        throw ConfigError("make_folds: k exceeds number of source samples");
    }

    std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
    std::shuffle(sources.begin(), sources.end(), rng);

    FoldSplit split;
    split.k = k;
    split.seed = seed;
    std::map<std::string, int> source_fold;
    for (std::size_t i = 0; i < sources.size(); ++i) {
        source_fold[sources[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
    }
    for (const auto& s : samples) split.assignments[s.id] = source_fold.at(source_id(s.id));
    return split;
}

void FoldSplit::save_json(const fs::path& p) const {
    json j{{"seed", seed}, {"k", k}, {"assignments", assignments}};
    std::ofstream out(p);
    if (!out) throw DataError("cannot write fold split: " + p.string());
    out << j.dump(2) << '\n';
}

FoldSplit FoldSplit::load_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw DataError("cannot read fold split: " + p.string());
    json j = json::parse(in);
    FoldSplit split;
    split.seed = j.at("seed").get<std::int64_t>();
    split.k = j.at("k").get<int>();
    split.assignments = j.at("assignments").get<std::map<std::string, int>>();
    return split;
}

}  // namespace singanseg
