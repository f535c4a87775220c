// Acceptance suite: one pass/fail line per criterion, exit 0 only when all
// pass. argv[1] must be the path to the CLI binary (used by criterion 8).

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "singanseg/dataset.hpp"
#include "singanseg/errors.hpp"
#include "singanseg/metrics.hpp"
#include "singanseg/sampler.hpp"
#include "singanseg/seg_eval.hpp"
#include "singanseg/style_transfer.hpp"
#include "singanseg/trainer.hpp"
#include "singanseg/util.hpp"

#include "fixtures.hpp"

namespace fs = std::filesystem;
using namespace singanseg;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& label,
            const std::string& detail = "") {
    std::cout << "criterion " << criterion << " [" << label
              << "]: " << (pass ? "PASS" : "FAIL");
    if (!detail.empty()) std::cout << " (" << detail << ")";
    std::cout << std::endl;
    if (!pass) g_failures++;
}

bool approx(double a, double b, double tol) { return std::abs(a - b) <= tol; }

// --- criterion 1: metric exactness ------------------------------------------

void criterion_1() {
    auto m = seg_metrics({2, 1, 2, 95});
    bool pass = approx(m.iou, 0.4, 1e-6) && approx(m.f_score, 4.0 / 7.0, 1e-6);

    std::mt19937 rng(2024);
    std::uniform_int_distribution<int> d(0, 1000);
    for (int i = 0; i < 1000 && pass; ++i) {
        auto mm = seg_metrics({d(rng), d(rng), d(rng), d(rng)});
        pass = approx(mm.f_score, 2 * mm.iou / (1 + mm.iou), 1e-9);
    }
    report(1, pass, "metric exactness");
}

// --- criterion 2: Frechet identities + SIFID self-pairing -------------------

void criterion_2() {
    int d = 8;
    auto eye = torch::eye(d, torch::kFloat64);
    auto mu = torch::zeros({d}, torch::kFloat64);
    FeatureStats a{mu, eye, 50};
    bool pass = approx(frechet_distance(a, a), 0.0, 1e-6);

    auto mu2 = mu.clone();
    mu2[0] = 3;
    mu2[1] = 4;
    pass = pass && approx(frechet_distance(a, {mu2, eye, 50}), 25.0, 1e-6);

    auto m2 = torch::zeros({2}, torch::kFloat64);
    FeatureStats s4{m2, 4 * torch::eye(2, torch::kFloat64), 50};
    FeatureStats s1{m2, torch::eye(2, torch::kFloat64), 50};
    pass = pass && approx(frechet_distance(s4, s1), 2.0, 1e-6);

    // SIFID self pairing on real images posing as their own fakes
    auto real = fixtures::temp_dir("acc2_real");
    auto fake = fixtures::temp_dir("acc2_fake");
    auto samples = fixtures::make_polyp_dataset(3, 64, 64, 42);
    fixtures::write_dataset(real, samples);
    fs::create_directories(fake / "images");
    fs::create_directories(fake / "masks");
    for (const auto& s : samples) {
        fs::copy_file(real / "images" / (s.id + ".png"),
                      fake / "images" / (s.id + "_s00.png"));
        fs::copy_file(real / "masks" / (s.id + ".png"),
                      fake / "masks" / (s.id + "_s00.png"));
    }
    InceptionFeatureExtractor ex(256);
    auto self = sifid(real, fake, ex);
    pass = pass && std::abs(self.mean) < 1e-6;
    report(2, pass, "frechet identities + sifid self",
           "sifid_self=" + util::format_float(self.mean, 10));
}

// --- criteria 3-5 share one desk-scale checkpoint ----------------------------

Checkpoint g_desk_ckpt;
SegmentationSample g_desk_sample;

void criterion_3() {
    g_desk_sample = fixtures::make_polyp_sample("img00", 64, 64, 7);
    TrainConfig cfg;
    cfg.epochs_per_scale = 500;
    cfg.min_dim = 25;
    cfg.max_dim = 64;
    cfg.width = 32;
    cfg.seed = 7;
    // At desk scale the patch critic saturates quickly and keeps fighting the
    // anchor; a heavier reconstruction weight restores the intended balance.
    cfg.recon_weight = 50.0;
    auto schedule = compute_scale_schedule(64, 64, cfg.scale_factor, cfg.min_dim, cfg.max_dim);
    bool pass = schedule.num_scales() >= 3;

    g_desk_ckpt = train_all(g_desk_sample, cfg);
    auto recon = reconstruct(g_desk_ckpt);
    // RMSE over all four channels in storage range
    auto recon4 = torch::cat({recon.image, recon.raw_mask}, 0);
    auto target4 = torch::cat({g_desk_sample.image, g_desk_sample.mask}, 0);
    double rmse = std::sqrt((recon4 - target4).pow(2).mean().item<double>());
    bool mask_ok = binarize_mask(recon.raw_mask, 0.5).sum().item<double>() > 0;
    pass = pass && rmse < 0.1 && mask_ok;
    report(3, pass, "reconstruction anchor",
           "rmse=" + util::format_float(rmse, 4) + " levels=" +
               std::to_string(schedule.num_scales()));
}

void criterion_4() {
    auto samples = generate_samples(g_desk_ckpt, 0, 10, 99);
    std::vector<torch::Tensor> masks;
    for (const auto& s : samples) masks.push_back(binarize_mask(s.raw_mask, 0.5));
    auto [mean, sd] = mask_diversity(masks);
    bool std_ok = sd.max().item<double>() > 0.05;

    bool rgb_ok = true;
    for (std::size_t i = 0; i < samples.size() && rgb_ok; ++i) {
        for (std::size_t j = i + 1; j < samples.size() && rgb_ok; ++j) {
            rgb_ok = (samples[i].image - samples[j].image).pow(2).mean().item<double>() > 0;
        }
    }
    report(4, std_ok && rgb_ok, "sample diversity",
           "max_mask_std=" + util::format_float(sd.max().item<double>(), 4));
}

void criterion_5() {
    auto real = fixtures::temp_dir("acc5_real");
    fixtures::write_dataset(real, {g_desk_sample});

    auto gen = fixtures::temp_dir("acc5_gen");
    auto samples = generate_samples(g_desk_ckpt, 0, 3, 123);
    export_samples(g_desk_ckpt, samples, gen, 0, 123, 0.3);

    StyleConfig cfg;
    std::tie(cfg.content_weight, cfg.style_weight) = StyleConfig::parse_ratio("1:1000");
    cfg.epochs = 300;
    cfg.seed = 5;
    auto styled = fixtures::temp_dir("acc5_styled");
    stylize_dataset(gen, real, cfg, styled);

    InceptionFeatureExtractor ex(256);
    auto raw = sifid(real, gen, ex);
    auto st = sifid(real, styled, ex);
    int improved = 0;
    for (std::size_t i = 0; i < raw.per_pair.size(); ++i) {
        if (st.per_pair[i].second < raw.per_pair[i].second) improved++;
    }
    bool pass = raw.per_pair.size() >= 3 &&
                improved * 2 > static_cast<int>(raw.per_pair.size());
    report(5, pass, "style-transfer sifid direction",
           "improved=" + std::to_string(improved) + "/" +
               std::to_string(raw.per_pair.size()) + " raw_mean=" +
               util::format_float(raw.mean, 4) + " styled_mean=" +
               util::format_float(st.mean, 4));
}

// --- criterion 6: gradient correctness ---------------------------------------

void criterion_6() {
    torch::manual_seed(6);
    auto schedule = compute_scale_schedule(64, 64);
    auto stack = init_stack(schedule, 16, 6);
    auto& disc = stack.discriminators[0];
    disc->to(torch::kFloat64);

    auto x = (torch::rand({4, 8, 8}, torch::kFloat64) * 2 - 1).requires_grad_(true);
    // pad below the receptive field is fine for gradients; use forward directly
    auto score = disc->forward(x.unsqueeze(0)).mean();
    auto analytic = torch::autograd::grad({score}, {x})[0];

    const double h = 1e-5;
    double max_rel = 0.0;
    torch::NoGradGuard no_grad;
    for (int idx = 0; idx < 4 * 8 * 8; ++idx) {
        auto flat = x.detach().clone().flatten();
        flat[idx] += h;
        auto up = disc->forward(flat.view({4, 8, 8}).unsqueeze(0)).mean().item<double>();
        flat[idx] -= 2 * h;
        auto dn = disc->forward(flat.view({4, 8, 8}).unsqueeze(0)).mean().item<double>();
        double fd = (up - dn) / (2 * h);
        double an = analytic.flatten()[idx].item<double>();
        double rel = std::abs(fd - an) / std::max({std::abs(an), std::abs(fd), 1e-8});
        max_rel = std::max(max_rel, rel);
    }
    report(6, max_rel < 1e-3, "gradient correctness",
           "max_rel_err=" + util::format_float(max_rel, 8));
}

// --- criterion 7: segmentation harness sanity --------------------------------

void criterion_7() {
    auto data = fixtures::make_polyp_dataset(20, 64, 64, 700);
    auto cfg = SegModelConfig::small_preset(64);
    cfg.base_width = 8;
    SegTrainSchedule sched;
    sched.epochs = 200;
    sched.batch_size = 4;
    sched.seed = 3;
    sched.initial_lr = 1e-3;
    sched.late_lr = 1e-4;

    auto [model, result] = train_segmenter(data, data, cfg, sched);
    bool overfit_ok = result.train_at_best.iou > 0.9;

    bool guard_ok = false;
    auto val = fixtures::make_polyp_dataset(2, 64, 64, 900);
    for (auto& s : val) s.id = "val_" + s.id;
    auto child = data[0];
    child.id = data[0].id + "_s00";
    val.push_back(child);
    try {
        SegTrainSchedule one;
        one.epochs = 1;
        train_segmenter(data, val, cfg, one);
    } catch (const DataError&) {
        guard_ok = true;
    }
    report(7, overfit_ok && guard_ok, "segmentation harness",
           "overfit_iou=" + util::format_float(result.train_at_best.iou, 4) +
               " leakage_guard=" + (guard_ok ? "raised" : "missing"));
}

// --- criterion 8: pipeline determinism ----------------------------------------

int run_cmd(const std::string& cmd) {
    int status = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void criterion_8(const std::string& cli) {
    auto data = fixtures::temp_dir("acc8_data");
    fixtures::write_dataset(data, fixtures::make_polyp_dataset(2, 32, 32, 800));

    auto run_chain = [&](const fs::path& work) -> bool {
        fs::create_directories(work);
        auto cfgp = work / "train.toml";
        std::ofstream(cfgp) << "[train]\ndata = " << data << "\nout = " << (work / "ckpts")
                            << "\nepochs_per_scale = 2\nmin_dim = 18\nmax_dim = 32\n"
                            << "width = 16\nseed = 5\n";
        if (run_cmd(cli + " train-gan --config " + cfgp.string()) != 0) return false;
        if (run_cmd(cli + " generate --checkpoints " + (work / "ckpts").string() +
                    " --out " + (work / "gen").string() +
                    " --n 5 --seed 9 --threshold 0.3") != 0)
            return false;
        if (run_cmd(cli + " style-transfer --generated " + (work / "gen").string() +
                    " --real " + data.string() + " --out " + (work / "styled").string() +
                    " --ratio 1:1000 --epochs 3 --seed 2") != 0)
            return false;
        if (run_cmd(cli + " metrics -a " + data.string() + " -b " +
                    (work / "styled").string() + " --metric fid --pool-dim 32 --out " +
                    (work / "metrics").string()) != 0)
            return false;
        return true;
    };

    auto w1 = fixtures::temp_dir("acc8_run1");
    auto w2 = fixtures::temp_dir("acc8_run2");
    bool ok1 = run_chain(w1);
    bool ok2 = run_chain(w2);
    bool pass = ok1 && ok2;
    for (const char* sub : {"ckpts", "gen", "styled", "metrics"}) {
        if (!pass) break;
        pass = util::sha256_tree(w1 / sub) == util::sha256_tree(w2 / sub);
    }
    report(8, pass, "pipeline determinism",
           ok1 && ok2 ? "trees compared" : "chain failed");
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: acceptance <cli-binary>\n";
        return 2;
    }
    torch::set_num_threads(1);

    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();
    criterion_6();
    criterion_7();
    criterion_8(argv[1]);

    std::cout << (g_failures == 0 ? "all criteria passed" : "failures: ")
              << (g_failures == 0 ? "" : std::to_string(g_failures)) << std::endl;
    return g_failures == 0 ? 0 : 1;
}
