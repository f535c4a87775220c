#include "singanseg/networks.hpp"

#include "singanseg/errors.hpp"

namespace singanseg {

NormKind norm_kind_from_string(const std::string& s) {
    if (s == "batch") return NormKind::Batch;
    if (s == "instance") return NormKind::Instance;
    if (s == "none") return NormKind::None;
    throw ConfigError("unknown norm kind: " + s);
}

std::string to_string(NormKind k) {
    switch (k) {
        case NormKind::Batch: return "batch";
        case NormKind::Instance: return "instance";
        default: return "none";
    }
}

ConvBlockImpl::ConvBlockImpl(int in_ch, int out_ch, NormKind norm_kind) : norm(norm_kind) {
    conv = register_module(
        "conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_ch, out_ch, 3).padding(1)));
    if (norm == NormKind::Batch) {
        // batch stats always (no running buffers): keeps single-image training,
        // reconstruction and sampling on the same statistics path
        bn = register_module("norm",
                             torch::nn::BatchNorm2d(torch::nn::BatchNorm2dOptions(out_ch)
                                                        .track_running_stats(false)));
    } else if (norm == NormKind::Instance) {
        in_norm = register_module(
            "norm", torch::nn::InstanceNorm2d(
                        torch::nn::InstanceNorm2dOptions(out_ch).affine(true)));
    }
}

torch::Tensor ConvBlockImpl::forward(torch::Tensor x) {
    x = conv->forward(x);
    if (norm == NormKind::Batch) x = bn->forward(x);
    else if (norm == NormKind::Instance) x = in_norm->forward(x);
    return torch::leaky_relu(x, 0.2);
}

GeneratorScaleImpl::GeneratorScaleImpl(int w, NormKind norm) : width(w) {
    body = torch::nn::Sequential();
    body->push_back(ConvBlock(4, width, norm));
    body->push_back(ConvBlock(width, width, norm));
    body->push_back(ConvBlock(width, width, norm));
    body->push_back(ConvBlock(width, width, norm));
    body->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(width, 4, 3).padding(1)));
    body->push_back(torch::nn::Tanh());
    register_module("body", body);
}

torch::Tensor GeneratorScaleImpl::forward(torch::Tensor x) { return body->forward(x); }

DiscriminatorScaleImpl::DiscriminatorScaleImpl(int w, NormKind norm) : width(w) {
    body = torch::nn::Sequential();
    body->push_back(ConvBlock(4, width, norm));
    body->push_back(ConvBlock(width, width, norm));
    body->push_back(ConvBlock(width, width, norm));
    body->push_back(ConvBlock(width, width, norm));
    body->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(width, 1, 3).padding(1)));
    register_module("body", body);
}

torch::Tensor DiscriminatorScaleImpl::forward(torch::Tensor x) { return body->forward(x); }

int scale_width(int base_width, int index) {
    int w = base_width;
    for (int i = 0; i < index / 4; ++i) w *= 2;
    return std::min(w, 128);
}

namespace {

void init_weights(torch::nn::Module& m) {
    torch::NoGradGuard no_grad;
    for (auto& mod : m.modules(/*include_self=*/false)) {
        if (auto* conv = mod->as<torch::nn::Conv2d>()) {
            conv->weight.normal_(0.0, 0.02);
            if (conv->bias.defined()) conv->bias.zero_();
        } else if (auto* bn = mod->as<torch::nn::BatchNorm2d>()) {
            bn->weight.normal_(1.0, 0.02);
            bn->bias.zero_();
        } else if (auto* in = mod->as<torch::nn::InstanceNorm2d>()) {
            if (in->weight.defined()) in->weight.normal_(1.0, 0.02);
            if (in->bias.defined()) in->bias.zero_();
        }
    }
}

}  // namespace

std::int64_t ModelStack::parameter_count() const {
    std::int64_t count = 0;
    for (const auto& g : generators)
        for (const auto& p : g->parameters()) count += p.numel();
    for (const auto& d : discriminators)
        for (const auto& p : d->parameters()) count += p.numel();
    return count;
}

ModelStack init_stack(const ScaleSchedule& schedule, int width, std::int64_t seed,
                      NormKind norm) {
    if (width < 8) throw ConfigError("init_stack: width must be >= 8");
    torch::manual_seed(static_cast<std::uint64_t>(seed));

    ModelStack stack;
    stack.schedule = schedule;
    stack.base_width = width;
    stack.norm = norm;
    for (int i = 0; i < schedule.num_scales(); ++i) {
        int w = scale_width(width, i);
        GeneratorScale g(w, norm);
        DiscriminatorScale d(w, norm);
        init_weights(*g);
        init_weights(*d);
        stack.generators.push_back(g);
        stack.discriminators.push_back(d);
    }

    auto [h0, w0] = schedule.coarsest();
    stack.noise.seed = seed;
    stack.noise.zstar = torch::randn({4, h0, w0});
    stack.noise.sigmas.assign(static_cast<std::size_t>(schedule.num_scales()), 0.0);
    stack.noise.sigmas[0] = 1.0;
    return stack;
}

torch::Tensor generator_forward(GeneratorScale& gen, const torch::Tensor& noise,
                                const torch::Tensor& prev_upsampled, double sigma) {
    if (noise.sizes() != prev_upsampled.sizes() || noise.dim() != 3 || noise.size(0) != 4) {
        throw DataError("generator_forward: noise/prev shape mismatch");
    }
    auto x = (noise * sigma + prev_upsampled).unsqueeze(0);
    auto residual = gen->forward(x).squeeze(0);
    return torch::tanh(prev_upsampled + residual);
}

torch::Tensor discriminator_forward(DiscriminatorScale& disc, const torch::Tensor& fc) {
    TORCH_CHECK(fc.dim() == 3 && fc.size(0) == 4, "expected 4xHxW input");
    if (fc.size(1) < kReceptiveField || fc.size(2) < kReceptiveField) {
        throw DataError("discriminator input smaller than receptive field");
    }
    return disc->forward(fc.unsqueeze(0)).squeeze(0);
}

}  // namespace singanseg
