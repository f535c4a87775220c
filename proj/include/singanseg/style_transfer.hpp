#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

#include "singanseg/features.hpp"

namespace singanseg {

struct StyleConfig {
    double content_weight = 1.0;
    double style_weight = 1000.0;
    int epochs = 1000;
    std::vector<std::string> content_layers{"relu3_1"};
    std::vector<std::string> style_layers{"relu1_1", "relu2_1", "relu3_1", "relu4_1",
                                          "relu5_1"};
    double step_size = 0.005;
    std::int64_t seed = 0;

    void validate() const;
    /// "1:1000" -> content_weight 1, style_weight 1000.
    static std::pair<double, double> parse_ratio(const std::string& ratio);
};

/// Gram normalization G = F F^T / (C*H*W) on a CxHxW feature block.
torch::Tensor gram_matrix(const torch::Tensor& features);

/// Gatys-style iterative optimization: starts from the content image and
/// minimizes content-feature distance plus style Gram distance. RGB only;
/// masks are handled by stylize_dataset. Optionally records the per-epoch
/// objective.
torch::Tensor transfer_style(const torch::Tensor& content, const torch::Tensor& style,
                             const StyleConfig& cfg, const StyleFeatureExtractor& extractor,
                             std::vector<double>* loss_curve = nullptr);

struct StylizeStats {
    int stylized = 0;
};

/// Stylizes every synthetic image against its own source real image (id
/// prefix rule); masks are copied through byte-identical.
StylizeStats stylize_dataset(const std::filesystem::path& gen_dataset,
                             const std::filesystem::path& real_dataset,
                             const StyleConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace singanseg
