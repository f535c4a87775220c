#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

#include "singanseg/features.hpp"

namespace singanseg {

/// Gaussian fit of a feature set.
struct FeatureStats {
    torch::Tensor mean;        // d (float64)
    torch::Tensor covariance;  // d x d (float64, symmetric)
    std::int64_t count = 0;
};

/// Fits mean and (unbiased) covariance to rows of an N x d matrix.
FeatureStats fit_feature_stats(const torch::Tensor& rows);

/// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}). The matrix square
/// root is taken through symmetric eigendecompositions (eigenvalues floored
/// at 1e-10), which keeps the computation real by construction.
double frechet_distance(const FeatureStats& a, const FeatureStats& b);

/// Sorted RGB image files of a dataset dir (uses dir/images when the
/// standard layout is present, so mask files never enter the extractor).
std::vector<std::filesystem::path> list_rgb_images(const std::filesystem::path& dir);

double fid(const std::filesystem::path& real_dir, const std::filesystem::path& fake_dir,
           const InceptionFeatureExtractor& extractor);

struct SifidResult {
    double mean = 0.0;
    std::vector<std::pair<std::string, double>> per_pair;  // (fake id, value)
};

/// FID over the within-image spatial feature distribution, one value per
/// fake image paired with its source real image (id prefix rule).
SifidResult sifid(const std::filesystem::path& real_dir,
                  const std::filesystem::path& fake_dir,
                  const InceptionFeatureExtractor& extractor);

struct MetricRecord {
    std::string dataset_a;
    std::string dataset_b;
    std::string metric;
    int set_id = 1;
    double value = 0.0;
};

double mean_of(const std::vector<double>& values);
double population_sd(const std::vector<double>& values);

/// CSV (dataset_a, dataset_b, metric, set_id, value) plus a Markdown table
/// with Set columns, Mean and SD per metric row.
void write_report(const std::vector<MetricRecord>& records,
                  const std::filesystem::path& csv_path,
                  const std::filesystem::path& md_path);

}  // namespace singanseg
