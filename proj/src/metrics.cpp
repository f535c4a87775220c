#include "singanseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "singanseg/dataset.hpp"
#include "singanseg/errors.hpp"
#include "singanseg/image_io.hpp"
#include "singanseg/util.hpp"

namespace singanseg {

namespace fs = std::filesystem;

FeatureStats fit_feature_stats(const torch::Tensor& rows) {
    TORCH_CHECK(rows.dim() == 2, "expected N x d feature matrix");
    auto x = rows.to(torch::kFloat64);
    auto n = x.size(0);
    if (n < 2) throw DataError("need at least 2 feature vectors for covariance");
    FeatureStats stats;
    stats.count = n;
    stats.mean = x.mean(0);
    auto centered = x - stats.mean.unsqueeze(0);
    stats.covariance = centered.t().matmul(centered) / static_cast<double>(n - 1);
    return stats;
}

namespace {

constexpr double kEigFloor = 1e-10;

/// Symmetrize + floor eigenvalues; returns (floored matrix, its sqrt).
std::pair<torch::Tensor, torch::Tensor> psd_project(const torch::Tensor& m) {
    auto sym = (m + m.t()) / 2.0;
    auto [evals, evecs] = torch::linalg_eigh(sym);
    evals = evals.clamp_min(kEigFloor);
    auto floored = evecs.matmul(torch::diag(evals)).matmul(evecs.t());
    auto root = evecs.matmul(torch::diag(evals.sqrt())).matmul(evecs.t());
    return {floored, root};
}

}  // namespace

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
    if (a.mean.size(0) != b.mean.size(0)) throw DataError("feature dimension mismatch");
    if (!torch::isfinite(a.mean).all().item<bool>() ||
        !torch::isfinite(b.mean).all().item<bool>() ||
        !torch::isfinite(a.covariance).all().item<bool>() ||
        !torch::isfinite(b.covariance).all().item<bool>()) {
        throw NumericalError("non-finite feature statistics");
    }

    auto [sa, sa_root] = psd_project(a.covariance);
    auto [sb, sb_root] = psd_project(b.covariance);

    // eig(Sa Sb) == eig(Sa^{1/2} Sb Sa^{1/2}), symmetric PSD, so the square
    // root trace is a real quantity with no imaginary residue to check
    auto inner = sa_root.matmul(sb).matmul(sa_root);
    inner = (inner + inner.t()) / 2.0;
    auto evals = std::get<0>(torch::linalg_eigh(inner)).clamp_min(0.0);
    double tr_sqrt = evals.sqrt().sum().item<double>();

    double mean_term = (a.mean - b.mean).pow(2).sum().item<double>();
    double value = mean_term + sa.trace().item<double>() + sb.trace().item<double>() -
                   2.0 * tr_sqrt;
    return value;
}

std::vector<fs::path> list_rgb_images(const fs::path& dir) {
    fs::path scan = fs::is_directory(dir / "images") ? dir / "images" : dir;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(scan)) {
        if (!e.is_regular_file()) continue;
        auto ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("no images found in " + dir.string());
    return files;
}

double fid(const fs::path& real_dir, const fs::path& fake_dir,
           const InceptionFeatureExtractor& extractor) {
    auto collect = [&](const fs::path& dir) {
        auto files = list_rgb_images(dir);
        if (files.size() < 2) throw DataError("FID needs >= 2 images in " + dir.string());
        if (static_cast<int>(files.size()) < extractor.pool_dim()) {
            util::log_kv({{"warn", "fid_low_sample_count"},
                          {"dir", dir.string()},
                          {"count", std::to_string(files.size())},
                          {"feature_dim", std::to_string(extractor.pool_dim())}});
        }
        std::vector<torch::Tensor> feats;
        for (const auto& f : files) feats.push_back(extractor.pool_features(load_image_rgb(f)));
        return fit_feature_stats(torch::stack(feats, 0));
    };
    return frechet_distance(collect(real_dir), collect(fake_dir));
}

SifidResult sifid(const fs::path& real_dir, const fs::path& fake_dir,
                  const InceptionFeatureExtractor& extractor) {
    auto real_files = list_rgb_images(real_dir);
    std::map<std::string, fs::path> real_by_id;
    for (const auto& f : real_files) real_by_id[f.stem().string()] = f;

    auto spatial_stats = [&](const fs::path& f) {
        auto fm = extractor.early_features(load_image_rgb(f));  // C x h x w
        auto rows = fm.flatten(1).t();                          // (h*w) x C
        return fit_feature_stats(rows);
    };

    SifidResult result;
    double sum = 0.0;
    for (const auto& f : list_rgb_images(fake_dir)) {
        auto id = f.stem().string();
        auto it = real_by_id.find(source_id(id));
        if (it == real_by_id.end()) {
            throw DataError("unpaired fake image (no source real): " + id);
        }
        double v = frechet_distance(spatial_stats(it->second), spatial_stats(f));
        result.per_pair.emplace_back(id, v);
        sum += v;
    }
    result.mean = sum / static_cast<double>(result.per_pair.size());
    return result;
}

double mean_of(const std::vector<double>& values) {
    if (values.empty()) throw DataError("mean of empty value set");
    double s = 0.0;
    for (double v : values) s += v;
    return s / static_cast<double>(values.size());
}

double population_sd(const std::vector<double>& values) {
    double m = mean_of(values);
    double s = 0.0;
    for (double v : values) s += (v - m) * (v - m);
    return std::sqrt(s / static_cast<double>(values.size()));
}

void write_report(const std::vector<MetricRecord>& records, const fs::path& csv_path,
                  const fs::path& md_path) {
    if (records.empty()) throw DataError("cannot write empty metrics report");

    {
        std::ofstream csv(csv_path);
        csv << "dataset_a,dataset_b,metric,set_id,value\n";
        for (const auto& r : records) {
            csv << r.dataset_a << ',' << r.dataset_b << ',' << r.metric << ',' << r.set_id
                << ',' << util::format_float(r.value) << '\n';
        }
    }

    // group rows by (a, b, metric), columns Set 1..N + Mean + SD
    std::map<std::string, std::vector<double>> groups;
    std::vector<std::string> order;
    std::size_t max_sets = 1;
    for (const auto& r : records) {
        auto key = r.dataset_a + " vs " + r.dataset_b + " | " + r.metric;
        if (!groups.count(key)) order.push_back(key);
        groups[key].push_back(r.value);
        max_sets = std::max(max_sets, groups[key].size());
    }

    std::ofstream md(md_path);
    md << "| Comparison |";
    for (std::size_t i = 1; i <= max_sets; ++i) md << " Set " << i << " |";
    md << " Mean | SD |\n|---|";
    for (std::size_t i = 0; i < max_sets + 2; ++i) md << "---|";
    md << '\n';
    for (const auto& key : order) {
        const auto& vals = groups[key];
        md << "| " << key << " |";
        for (std::size_t i = 0; i < max_sets; ++i) {
            md << ' ' << (i < vals.size() ? util::format_float(vals[i]) : "-") << " |";
        }
        md << ' ' << util::format_float(mean_of(vals)) << " | "
           << util::format_float(population_sd(vals)) << " |\n";
    }
}

}  // namespace singanseg
