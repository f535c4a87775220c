#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "singanseg/dataset.hpp"

namespace singanseg {

/// Nested-skip (UNet++ topology) encoder-decoder with a two-channel
/// spatial-softmax head. "small" is the desk-scale default; "reference"
/// documents the reference configuration (se_resnext50_32x4d encoder,
/// full-size UNet++) and maps onto the widest preset this harness builds.
struct SegModelConfig {
    std::string preset = "small";  // small | reference
    int input_size = 128;
    int base_width = 16;
    int depth = 3;
    std::string reference_encoder = "se_resnext50_32x4d";

    static SegModelConfig small_preset(int input_size = 128);
    static SegModelConfig reference_preset();
    void validate() const;
};

struct SegTrainSchedule {
    int epochs = 300;  // 100 for the small-data protocol
    double initial_lr = 1e-4;
    double late_lr = 1e-5;
    int lr_switch_epoch = 50;
    int batch_size = 8;
    bool augment = false;
    std::int64_t seed = 0;
};

struct SegMetrics {
    double dice_loss = 0.0;
    double iou = 0.0;
    double f_score = 0.0;
    double accuracy = 0.0;
    double recall = 0.0;
    double precision = 0.0;
};

struct ConfusionCounts {
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

ConfusionCounts confusion_counts(const torch::Tensor& pred, const torch::Tensor& gt);

/// IoU = TP/(TP+FP+FN), F = 2TP/(2TP+FP+FN), dice_loss = 1-F,
/// acc = (TP+TN)/total, recall = TP/(TP+FN), precision = TP/(TP+FP).
/// Zero-denominator convention: 1 when the involved sets are both empty,
/// else 0.
SegMetrics seg_metrics(const ConfusionCounts& counts);

/// Differentiable soft Dice loss on foreground probabilities:
/// 1 - (2*sum(p*g)+eps)/(sum(p)+sum(g)+eps), eps = 1e-7.
torch::Tensor dice_loss_soft(const torch::Tensor& pred_probs, const torch::Tensor& gt);

/// Two-channel softmax segmentation network (background, polyp).
struct SegModelImpl : torch::nn::Module {
    explicit SegModelImpl(const SegModelConfig& cfg);
    /// input Bx3xHxW -> Bx2xHxW softmax over channels.
    torch::Tensor forward(torch::Tensor x);

    struct Node;
    std::vector<std::shared_ptr<Node>> nodes_;
    torch::nn::Conv2d head_{nullptr};
    int depth_ = 3;
};
TORCH_MODULE(SegModel);

struct SegRunResult {
    SegMetrics best;     // at the best-validation-IoU epoch
    int best_epoch = 0;
    SegMetrics train_at_best;
};

/// Trains with soft Dice loss, checkpoints on best validation IoU. Hard
/// error if any validation sample shares a source-id prefix with training
/// data (leakage guard).
std::pair<SegModel, SegRunResult> train_segmenter(
    const std::vector<SegmentationSample>& train,
    const std::vector<SegmentationSample>& val, const SegModelConfig& model_cfg,
    const SegTrainSchedule& sched);

enum class CrossValMode { Real, FakeN };

struct CrossValRow {
    std::string experiment;
    std::string mode;  // REAL or FAKE-N (+ style tag)
    int fold = -1;     // -1 for the mean row
    int best_epoch = 0;
    SegMetrics metrics;
};

/// k-fold protocol: REAL trains on k-1 real folds; FAKE-N trains on N
/// synthetic children per train-fold real image. Validation is always the
/// held-out real fold. Returns per-fold rows plus a mean row.
std::vector<CrossValRow> cross_validate(const std::vector<SegmentationSample>& real,
                                        const std::vector<SegmentationSample>& synthetic,
                                        int k, CrossValMode mode, int n_per_image,
                                        const SegModelConfig& model_cfg,
                                        const SegTrainSchedule& sched, std::int64_t fold_seed,
                                        const std::string& experiment_label);

/// R real images vs 10R synthetic children (paired rows per R value).
/// Training picks from fold 0; the other folds are the validation set.
std::vector<CrossValRow> small_data_experiment(
    const std::vector<SegmentationSample>& real,
    const std::vector<SegmentationSample>& synthetic, const std::vector<int>& r_values,
    int ratio, const SegModelConfig& model_cfg, const SegTrainSchedule& sched,
    std::int64_t fold_seed);

void write_seg_results_csv(const std::vector<CrossValRow>& rows,
                           const std::filesystem::path& path);
void write_seg_results_markdown(const std::vector<CrossValRow>& rows,
                                const std::filesystem::path& path);

}  // namespace singanseg
