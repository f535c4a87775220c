#pragma once

#include <torch/torch.h>

#include <string>
#include <vector>

#include "singanseg/pyramid.hpp"

namespace singanseg {

enum class NormKind { Batch, Instance, None };

NormKind norm_kind_from_string(const std::string& s);
std::string to_string(NormKind k);

/// conv3x3 -> norm -> leaky-relu(0.2). The tail blocks of G/D replace this.
struct ConvBlockImpl : torch::nn::Module {
    ConvBlockImpl(int in_ch, int out_ch, NormKind norm);
    torch::Tensor forward(torch::Tensor x);

    torch::nn::Conv2d conv{nullptr};
    torch::nn::BatchNorm2d bn{nullptr};
    torch::nn::InstanceNorm2d in_norm{nullptr};
    NormKind norm = NormKind::Batch;
};
TORCH_MODULE(ConvBlock);

/// 5-block fully convolutional generator: 4 ConvBlocks + conv->tanh head.
/// Works at any spatial size; output shape equals input shape.
struct GeneratorScaleImpl : torch::nn::Module {
    GeneratorScaleImpl(int width, NormKind norm);
    /// Residual body on the summed input; does NOT add the skip itself.
    torch::Tensor forward(torch::Tensor x);

    torch::nn::Sequential body{nullptr};
    int width = 0;
};
TORCH_MODULE(GeneratorScale);

/// Same topology with a plain conv->1 head: Markovian patch critic.
struct DiscriminatorScaleImpl : torch::nn::Module {
    DiscriminatorScaleImpl(int width, NormKind norm);
    torch::Tensor forward(torch::Tensor x);

    torch::nn::Sequential body{nullptr};
    int width = 0;
};
TORCH_MODULE(DiscriminatorScale);

/// Minimum spatial side the patch critic needs (5 stacked 3x3 convs).
constexpr std::int64_t kReceptiveField = 11;

struct NoiseSpec {
    std::vector<double> sigmas;  // per scale, coarse -> fine; sigmas[0] == 1
    torch::Tensor zstar;         // fixed reconstruction noise, 4 x h0 x w0
    std::int64_t seed = 0;
};

struct ModelStack {
    ScaleSchedule schedule;
    std::vector<GeneratorScale> generators;      // coarse -> fine
    std::vector<DiscriminatorScale> discriminators;
    NoiseSpec noise;
    int base_width = 32;
    NormKind norm = NormKind::Batch;

    std::int64_t parameter_count() const;
};

/// Width of scale `index` (coarse -> fine): base doubled every 4 scales,
/// capped at 128.
int scale_width(int base_width, int index);

/// Deterministic init under `seed`: conv weights ~ N(0, 0.02), norm weights
/// ~ N(1, 0.02), biases zero; fresh z* at coarsest dims with sigma_0 = 1.
ModelStack init_stack(const ScaleSchedule& schedule, int width, std::int64_t seed,
                      NormKind norm = NormKind::Batch);

/// out = tanh(prev + body(noise * sigma + prev)); at the coarsest scale pass
/// prev = zeros and sigma = 1.
torch::Tensor generator_forward(GeneratorScale& gen, const torch::Tensor& noise,
                                const torch::Tensor& prev_upsampled, double sigma);

/// h'xw' score map; the mean over the map is the critic value.
torch::Tensor discriminator_forward(DiscriminatorScale& disc, const torch::Tensor& fc);

}  // namespace singanseg
