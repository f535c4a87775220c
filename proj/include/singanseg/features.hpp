#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace singanseg {

/// Directory used for generated extractor weight files. Controlled by the
/// SINGANSEG_CACHE environment variable; defaults to ".singanseg_cache".
std::filesystem::path cache_dir();

/// Frozen VGG-class feature extractor used by the style-transfer step.
/// Weights are generated once from a pinned seed, stored in the cache dir,
/// and reloaded afterwards; `weights_hash()` pins the file identity.
///
/// Named activations: relu1_1, relu1_2, relu2_1, relu2_2, relu3_1, relu4_1,
/// relu5_1 (depth increases, spatial size halves at each pool).
class StyleFeatureExtractor {
public:
    explicit StyleFeatureExtractor(const std::filesystem::path& weights_file = {});

    /// input: 3xHxW RGB in [0,1]; returns the requested activations.
    std::map<std::string, torch::Tensor> extract(const torch::Tensor& image,
                                                 const std::vector<std::string>& layers) const;

    const std::string& weights_hash() const { return hash_; }
    static const std::vector<std::string>& layer_names();

private:
    // mutable: module holders expose a non-const forward() even though
    // extraction leaves the frozen weights untouched
    mutable torch::nn::Sequential net_{nullptr};
    std::string hash_;
};

/// Frozen inception-class extractor for FID/SIFID. Preprocessing is pinned:
/// bicubic resize to 299x299, fixed channel normalization.
class InceptionFeatureExtractor {
public:
    explicit InceptionFeatureExtractor(int pool_dim = 2048,
                                       const std::filesystem::path& weights_file = {});

    /// d-dim pooled feature vector (FID).
    torch::Tensor pool_features(const torch::Tensor& image) const;

    /// Early-block spatial feature map, C x h' x w' (SIFID).
    torch::Tensor early_features(const torch::Tensor& image) const;

    int pool_dim() const { return pool_dim_; }
    const std::string& weights_hash() const { return hash_; }

private:
    torch::Tensor preprocess(const torch::Tensor& image) const;

    mutable torch::nn::Sequential early_{nullptr};
    mutable torch::nn::Sequential tail_{nullptr};
    int pool_dim_ = 2048;
    std::string hash_;
};

}  // namespace singanseg
