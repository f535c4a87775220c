#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "singanseg/dataset.hpp"
#include "singanseg/networks.hpp"
#include "singanseg/pyramid.hpp"

namespace singanseg {

struct TrainConfig {
    int epochs_per_scale = 2000;
    int g_steps = 3;
    int d_steps = 3;
    double learning_rate = 5e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double grad_penalty_weight = 0.1;  // lambda
    double recon_weight = 10.0;        // alpha
    double lr_decay_gamma = 0.1;       // applied at 80% of epochs
    std::int64_t seed = 0;

    // pyramid / architecture
    double scale_factor = 0.75;
    int min_dim = 25;
    int max_dim = 250;
    int width = 32;
    std::string norm = "batch";

    std::string to_json() const;
    static TrainConfig from_json(const std::string& s);
    std::string hash() const;
    void validate() const;
};

struct LossRecord {
    int scale = 0;
    int epoch = 0;
    double d_loss = 0.0;
    double g_adv = 0.0;
    double g_rec = 0.0;
};

/// Self-contained trained model: sampling needs no access to the training
/// image.
struct Checkpoint {
    ModelStack stack;
    std::string source_id;
    std::string config_hash;
    TrainConfig config;
    std::vector<LossRecord> losses;
};

/// Deterministic generation path (z* at the coarsest scale, zero noise
/// elsewhere) evaluated through scale `n` inclusive. Runs without grad.
torch::Tensor reconstruction_output(ModelStack& stack, int n);

/// Random generation path through scale `n` inclusive. Scales below
/// `start_scale` follow the reconstruction path; from `start_scale` on,
/// fresh noise with amplitude sigma_i is injected. Noise is drawn from the
/// global torch RNG.
torch::Tensor random_output(ModelStack& stack, int n, int start_scale = 0);

/// WGAN-GP penalty mean((|grad_x D(x_hat)| - 1)^2) at a random interpolate.
/// The lambda weight is applied by the caller. When `epsilon` is given the
/// interpolation coefficient is fixed instead of drawn from the RNG.
torch::Tensor gradient_penalty(DiscriminatorScale& disc, const torch::Tensor& real,
                               const torch::Tensor& fake,
                               std::optional<double> epsilon = std::nullopt);

/// Same penalty for an arbitrary critic (a scalar-valued differentiable
/// function of a CxHxW input).
torch::Tensor gradient_penalty(const std::function<torch::Tensor(const torch::Tensor&)>& critic,
                               const torch::Tensor& real, const torch::Tensor& fake,
                               std::optional<double> epsilon = std::nullopt);

/// Squared error between pyramid level n and the reconstruction path.
double reconstruction_loss(ModelStack& stack, const ImagePyramid& pyramid, int n);

/// Trains scale n (all coarser scales frozen), setting sigma_n from the
/// upsampled reconstruction error first. Appends per-epoch loss records.
void train_scale(ModelStack& stack, const ImagePyramid& pyramid, int n,
                 const TrainConfig& cfg, std::vector<LossRecord>& losses);

/// Full coarse-to-fine training of one sample; finer scales warm-start from
/// the previous scale's weights when widths match.
Checkpoint train_all(const SegmentationSample& sample, const TrainConfig& cfg);

/// Checkpoint directory layout: manifest.json + scaleN_G.bin / scaleN_D.bin
/// + zstar.bin + losses.csv. Loading verifies per-blob sha256 digests.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// True if the directory holds a complete, loadable manifest.
bool checkpoint_complete(const std::filesystem::path& dir);

}  // namespace singanseg
