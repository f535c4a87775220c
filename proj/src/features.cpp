#include "singanseg/features.hpp"

#include <cstdlib>

#include "singanseg/errors.hpp"
#include "singanseg/util.hpp"

namespace singanseg {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;

fs::path cache_dir() {
    if (const char* env = std::getenv("SINGANSEG_CACHE")) return fs::path(env);
    return fs::path(".singanseg_cache");
}

namespace {

constexpr std::uint64_t kStyleWeightSeed = 0x5347u;      // pinned
constexpr std::uint64_t kInceptionWeightSeed = 0x4649u;  // pinned

void kaiming_init(torch::nn::Sequential& net) {
    torch::NoGradGuard no_grad;
    for (auto& mod : net->modules(false)) {
        if (auto* conv = mod->as<torch::nn::Conv2d>()) {
            torch::nn::init::kaiming_normal_(conv->weight, 0.0, torch::kFanIn,
                                             torch::kReLU);
            if (conv->bias.defined()) conv->bias.zero_();
        }
    }
}

void freeze(torch::nn::Sequential& net) {
    for (auto& p : net->parameters()) p.set_requires_grad(false);
    net->eval();
}

/// Generates weights from `seed` on first use, persists them, reloads on
/// later runs. Returns the weight file's sha256.
std::string pin_weights(torch::nn::Sequential& net, std::uint64_t seed,
                        const fs::path& file) {
    if (fs::exists(file)) {
        auto params = net->parameters();
        std::vector<torch::Tensor> loaded;
        try {
            torch::load(loaded, file.string());
        } catch (const std::exception& e) {
            throw DataError("corrupt extractor weight file " + file.string() + ": " +
                            e.what());
        }
        if (loaded.size() != params.size()) {
            throw DataError("extractor weight file does not match architecture: " +
                            file.string());
        }
        torch::NoGradGuard no_grad;
        for (std::size_t i = 0; i < params.size(); ++i) params[i].copy_(loaded[i]);
    } else {
        torch::manual_seed(seed);
        kaiming_init(net);
        fs::create_directories(file.parent_path());
        std::vector<torch::Tensor> params;
        for (auto& p : net->parameters()) params.push_back(p);
        torch::save(params, file.string());
    }
    return util::sha256_file(file);
}

torch::Tensor imagenet_normalize(const torch::Tensor& image) {
    TORCH_CHECK(image.dim() == 3 && image.size(0) == 3, "expected 3xHxW image");
    auto mean = torch::tensor({0.485f, 0.456f, 0.406f}).view({3, 1, 1});
    auto std = torch::tensor({0.229f, 0.224f, 0.225f}).view({3, 1, 1});
    return (image - mean) / std;
}

struct StyleLayerSpec {
    const char* name;
    int in_ch;
    int out_ch;
    bool pool_after;
};

constexpr StyleLayerSpec kStyleLayers[] = {
    {"relu1_1", 3, 16, false},  {"relu1_2", 16, 16, true},
    {"relu2_1", 16, 32, false}, {"relu2_2", 32, 32, true},
    {"relu3_1", 32, 64, true},  {"relu4_1", 64, 128, true},
    {"relu5_1", 128, 128, false},
};

}  // namespace

const std::vector<std::string>& StyleFeatureExtractor::layer_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> v;
        for (const auto& l : kStyleLayers) v.emplace_back(l.name);
        return v;
    }();
    return names;
}

StyleFeatureExtractor::StyleFeatureExtractor(const fs::path& weights_file) {
    net_ = torch::nn::Sequential();
    for (const auto& l : kStyleLayers) {
        net_->push_back(
            torch::nn::Conv2d(torch::nn::Conv2dOptions(l.in_ch, l.out_ch, 3).padding(1)));
    }
    auto file = weights_file.empty() ? cache_dir() / "style_extractor_v1.bin" : weights_file;
    hash_ = pin_weights(net_, kStyleWeightSeed, file);
    freeze(net_);
}

std::map<std::string, torch::Tensor> StyleFeatureExtractor::extract(
    const torch::Tensor& image, const std::vector<std::string>& layers) const {
    for (const auto& l : layers) {
        if (std::find(layer_names().begin(), layer_names().end(), l) == layer_names().end()) {
            throw ConfigError("unknown feature layer: " + l);
        }
    }
    std::map<std::string, torch::Tensor> out;
    auto x = imagenet_normalize(image).unsqueeze(0);
    std::size_t conv_idx = 0;
    for (const auto& spec : kStyleLayers) {
        auto conv = std::dynamic_pointer_cast<torch::nn::Conv2dImpl>(net_->ptr(conv_idx++));
        x = torch::relu(conv->forward(x));
        if (std::find(layers.begin(), layers.end(), spec.name) != layers.end()) {
            out[spec.name] = x.squeeze(0);
        }
        if (out.size() == layers.size()) break;
        if (spec.pool_after) {
            x = F::avg_pool2d(x, F::AvgPool2dFuncOptions(2).ceil_mode(true));
        }
    }
    return out;
}

InceptionFeatureExtractor::InceptionFeatureExtractor(int pool_dim,
                                                     const fs::path& weights_file)
    : pool_dim_(pool_dim) {
    if (pool_dim < 8) throw ConfigError("pool_dim must be >= 8");
    early_ = torch::nn::Sequential(
        torch::nn::Conv2d(torch::nn::Conv2dOptions(3, 32, 3).stride(2).padding(1)),
        torch::nn::ReLU(),
        torch::nn::Conv2d(torch::nn::Conv2dOptions(32, 64, 3).padding(1)),
        torch::nn::ReLU(),
        torch::nn::MaxPool2d(torch::nn::MaxPool2dOptions(2)));
    tail_ = torch::nn::Sequential(
        torch::nn::Conv2d(torch::nn::Conv2dOptions(64, 128, 3).stride(2).padding(1)),
        torch::nn::ReLU(),
        torch::nn::Conv2d(torch::nn::Conv2dOptions(128, 256, 3).stride(2).padding(1)),
        torch::nn::ReLU(),
        torch::nn::Conv2d(torch::nn::Conv2dOptions(256, 512, 3).stride(2).padding(1)),
        torch::nn::ReLU(),
        torch::nn::Conv2d(torch::nn::Conv2dOptions(512, 1024, 3).stride(2).padding(1)),
        torch::nn::ReLU(),
        torch::nn::Conv2d(torch::nn::Conv2dOptions(1024, pool_dim, 3).stride(2).padding(1)),
        torch::nn::ReLU(), torch::nn::AdaptiveAvgPool2d(1));

    auto stem = "inception_" + std::to_string(pool_dim) + "_v1";
    auto dir = weights_file.empty() ? cache_dir() : weights_file.parent_path();
    auto early_file = weights_file.empty() ? dir / (stem + "_early.bin")
                                           : weights_file;
    auto tail_file = dir / (stem + "_tail.bin");
    if (!weights_file.empty()) tail_file = weights_file.string() + ".tail";
    auto h1 = pin_weights(early_, kInceptionWeightSeed, early_file);
    auto h2 = pin_weights(tail_, kInceptionWeightSeed + 1, tail_file);
    hash_ = util::sha256_hex(h1 + h2);
    freeze(early_);
    freeze(tail_);
}

torch::Tensor InceptionFeatureExtractor::preprocess(const torch::Tensor& image) const {
    TORCH_CHECK(image.dim() == 3 && image.size(0) == 3, "expected 3xHxW image");
    // pinned: bicubic to 299, antialiased, then map [0,1] -> [-1,1]
    auto x = F::interpolate(image.unsqueeze(0), F::InterpolateFuncOptions()
                                                    .size(std::vector<std::int64_t>{299, 299})
                                                    .mode(torch::kBicubic)
                                                    .align_corners(false)
                                                    .antialias(true));
    return x.mul(2.0).sub(1.0);
}

torch::Tensor InceptionFeatureExtractor::pool_features(const torch::Tensor& image) const {
    torch::NoGradGuard no_grad;
    auto x = tail_->forward(early_->forward(preprocess(image)));
    return x.flatten();
}

torch::Tensor InceptionFeatureExtractor::early_features(const torch::Tensor& image) const {
    torch::NoGradGuard no_grad;
    return early_->forward(preprocess(image)).squeeze(0);
}

}  // namespace singanseg
