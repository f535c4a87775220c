#include "singanseg/style_transfer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>

#include "singanseg/dataset.hpp"
#include "singanseg/errors.hpp"
#include "singanseg/image_io.hpp"
#include "singanseg/util.hpp"

namespace singanseg {

namespace fs = std::filesystem;
using nlohmann::json;

void StyleConfig::validate() const {
    if (content_weight <= 0 || style_weight <= 0) {
        throw ConfigError("style weights must be positive");
    }
    if (epochs < 1) throw ConfigError("style epochs must be >= 1");
    if (step_size <= 0) throw ConfigError("style step size must be positive");
}

std::pair<double, double> StyleConfig::parse_ratio(const std::string& ratio) {
    auto pos = ratio.find(':');
    if (pos == std::string::npos || pos == 0 || pos + 1 == ratio.size()) {
        throw ConfigError("ratio must look like \"1:1000\", got \"" + ratio + "\"");
    }
    double a = 0.0, b = 0.0;
    try {
        std::string lhs = ratio.substr(0, pos);
        std::string rhs = ratio.substr(pos + 1);
        rhs.erase(std::remove(rhs.begin(), rhs.end(), ','), rhs.end());
        a = std::stod(lhs);
        b = std::stod(rhs);
    } catch (const std::exception&) {
        throw ConfigError("cannot parse ratio \"" + ratio + "\"");
    }
    if (a <= 0.0 || b <= 0.0) {
        throw ConfigError("ratio parts must be positive, got \"" + ratio + "\"");
    }
    return {a, b};
}

torch::Tensor gram_matrix(const torch::Tensor& features) {
    TORCH_CHECK(features.dim() == 3, "expected CxHxW features");
    auto c = features.size(0);
    auto hw = features.size(1) * features.size(2);
    auto flat = features.reshape({c, hw});
    return flat.matmul(flat.t()) / static_cast<double>(c * hw);
}

torch::Tensor transfer_style(const torch::Tensor& content, const torch::Tensor& style,
                             const StyleConfig& cfg, const StyleFeatureExtractor& extractor,
                             std::vector<double>* loss_curve) {
    cfg.validate();
    TORCH_CHECK(content.dim() == 3 && content.size(0) == 3, "content must be 3xHxW");
    TORCH_CHECK(style.dim() == 3 && style.size(0) == 3, "style must be 3xHxW");

    if (style.std().item<double>() < 1e-6) {
        util::log_kv({{"warn", "degenerate_style_image"}, {"action", "returning_content"}});
        return content.clone();
    }

    std::vector<std::string> all_layers = cfg.content_layers;
    for (const auto& l : cfg.style_layers) {
        if (std::find(all_layers.begin(), all_layers.end(), l) == all_layers.end()) {
            all_layers.push_back(l);
        }
    }

    auto content_targets = extractor.extract(content, cfg.content_layers);
    for (auto& [k, v] : content_targets) v = v.detach();
    auto style_feats = extractor.extract(style, cfg.style_layers);
    std::map<std::string, torch::Tensor> gram_targets;
    for (const auto& [k, v] : style_feats) gram_targets[k] = gram_matrix(v).detach();

    auto x = content.clone().set_requires_grad(true);
    torch::optim::Adam opt({x}, torch::optim::AdamOptions(cfg.step_size));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        opt.zero_grad();
        auto feats = extractor.extract(x, all_layers);
        auto loss = torch::zeros({});
        for (const auto& l : cfg.content_layers) {
            loss = loss + cfg.content_weight *
                              torch::mse_loss(feats.at(l), content_targets.at(l));
        }
        for (const auto& l : cfg.style_layers) {
            loss = loss + cfg.style_weight *
                              torch::mse_loss(gram_matrix(feats.at(l)), gram_targets.at(l));
        }
        if (loss_curve) loss_curve->push_back(loss.item<double>());
        loss.backward();
        opt.step();
        {
            torch::NoGradGuard no_grad;
            x.clamp_(0.0, 1.0);
        }
    }
    return x.detach().clamp(0.0, 1.0);
}

StylizeStats stylize_dataset(const fs::path& gen_dataset, const fs::path& real_dataset,
                             const StyleConfig& cfg, const fs::path& out_dir) {
    cfg.validate();
    StyleFeatureExtractor extractor;

    fs::path gen_images = gen_dataset / "images";
    fs::path gen_masks = gen_dataset / "masks";
    std::vector<fs::path> inputs;
    if (fs::is_directory(gen_images)) {
        for (const auto& e : fs::directory_iterator(gen_images)) {
            if (e.is_regular_file()) inputs.push_back(e.path());
        }
    }
    std::sort(inputs.begin(), inputs.end());

    fs::create_directories(out_dir / "images");
    fs::create_directories(out_dir / "masks");

    if (inputs.empty()) {
        util::log_kv({{"warn", "empty_synthetic_dataset"}, {"dir", gen_dataset.string()}});
    }

    // resolve all source images first so the error lists every offender
    std::vector<std::string> unresolved;
    std::vector<std::pair<fs::path, fs::path>> resolved;  // (synthetic, real source)
    for (const auto& p : inputs) {
        auto src = source_id(p.stem().string());
        fs::path real;
        for (const char* ext : {".png", ".jpg", ".jpeg"}) {
            fs::path cand = real_dataset / "images" / (src + ext);
            if (fs::exists(cand)) { real = cand; break; }
        }
        if (real.empty()) unresolved.push_back(p.filename().string());
        else resolved.emplace_back(p, real);
    }
    if (!unresolved.empty()) {
        std::string list;
        for (const auto& f : unresolved) list += (list.empty() ? "" : ", ") + f;
        throw DataError("unresolvable source real image for: " + list);
    }

    StylizeStats stats;
    for (const auto& [syn_path, real_path] : resolved) {
        torch::manual_seed(static_cast<std::uint64_t>(cfg.seed));
        auto content = load_image_rgb(syn_path);
        auto style = load_image_rgb(real_path);
        auto stylized = transfer_style(content, style, cfg, extractor);
        save_image_rgb(out_dir / "images" / syn_path.filename(), stylized);

        fs::path mask_src = gen_masks / syn_path.filename();
        if (!fs::exists(mask_src)) {
            throw DataError("missing mask for synthetic image: " + syn_path.string());
        }
        fs::copy_file(mask_src, out_dir / "masks" / syn_path.filename(),
                      fs::copy_options::overwrite_existing);
        stats.stylized++;
        util::log_kv({{"stage", "style_transfer"},
                      {"image", syn_path.stem().string()},
                      {"done", std::to_string(stats.stylized)},
                      {"of", std::to_string(resolved.size())}});
    }

    json manifest{{"content_weight", cfg.content_weight},
                  {"style_weight", cfg.style_weight},
                  {"epochs", cfg.epochs},
                  {"content_layers", cfg.content_layers},
                  {"style_layers", cfg.style_layers},
                  {"step_size", cfg.step_size},
                  {"seed", cfg.seed},
                  {"extractor_weights_hash", extractor.weights_hash()}};
    std::ofstream out(out_dir / "style_manifest.json");
    out << manifest.dump(2) << '\n';
    return stats;
}

}  // namespace singanseg
