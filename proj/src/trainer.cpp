#include "singanseg/trainer.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

#include "singanseg/errors.hpp"
#include "singanseg/util.hpp"

namespace singanseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json config_to_json_obj(const TrainConfig& c) {
    return json{{"epochs_per_scale", c.epochs_per_scale},
                {"g_steps", c.g_steps},
                {"d_steps", c.d_steps},
                {"learning_rate", c.learning_rate},
                {"beta1", c.beta1},
                {"beta2", c.beta2},
                {"grad_penalty_weight", c.grad_penalty_weight},
                {"recon_weight", c.recon_weight},
                {"lr_decay_gamma", c.lr_decay_gamma},
                {"seed", c.seed},
                {"scale_factor", c.scale_factor},
                {"min_dim", c.min_dim},
                {"max_dim", c.max_dim},
                {"width", c.width},
                {"norm", c.norm}};
}

TrainConfig config_from_json_obj(const json& j) {
    TrainConfig c;
    for (const auto& [key, value] : j.items()) {
        if (key == "epochs_per_scale") c.epochs_per_scale = value.get<int>();
        else if (key == "g_steps") c.g_steps = value.get<int>();
        else if (key == "d_steps") c.d_steps = value.get<int>();
        else if (key == "learning_rate") c.learning_rate = value.get<double>();
        else if (key == "beta1") c.beta1 = value.get<double>();
        else if (key == "beta2") c.beta2 = value.get<double>();
        else if (key == "grad_penalty_weight") c.grad_penalty_weight = value.get<double>();
        else if (key == "recon_weight") c.recon_weight = value.get<double>();
        else if (key == "lr_decay_gamma") c.lr_decay_gamma = value.get<double>();
        else if (key == "seed") c.seed = value.get<std::int64_t>();
        else if (key == "scale_factor") c.scale_factor = value.get<double>();
        else if (key == "min_dim") c.min_dim = value.get<int>();
        else if (key == "max_dim") c.max_dim = value.get<int>();
        else if (key == "width") c.width = value.get<int>();
        else if (key == "norm") c.norm = value.get<std::string>();
        else throw ConfigError("unknown config key \"" + key + "\"");
    }
    return c;
}

double rmse(const torch::Tensor& a, const torch::Tensor& b) {
    return std::sqrt((a - b).pow(2).mean().item<double>());
}

void check_finite(double v, const char* name, int scale, int epoch) {
    if (!std::isfinite(v)) {
        throw NumericalError("non-finite " + std::string(name) + " at scale " +
                             std::to_string(scale) + " epoch " + std::to_string(epoch) +
                             " value " + std::to_string(v));
    }
}

void copy_parameters(const torch::nn::Module& src, torch::nn::Module& dst) {
    torch::NoGradGuard no_grad;
    auto sp = src.parameters();
    auto dp = dst.parameters();
    TORCH_CHECK(sp.size() == dp.size(), "warm start parameter count mismatch");
    for (std::size_t i = 0; i < sp.size(); ++i) dp[i].copy_(sp[i]);
}

void save_module(const torch::nn::Module& m, const fs::path& p) {
    torch::serialize::OutputArchive archive;
    const_cast<torch::nn::Module&>(m).save(archive);
    archive.save_to(p.string());
}

void load_module(torch::nn::Module& m, const fs::path& p) {
    torch::serialize::InputArchive archive;
    try {
        archive.load_from(p.string());
        m.load(archive);
    } catch (const std::exception& e) {
        throw DataError("corrupt checkpoint blob " + p.string() + ": " + e.what());
    }
}

}  // namespace

std::string TrainConfig::to_json() const { return config_to_json_obj(*this).dump(2); }

TrainConfig TrainConfig::from_json(const std::string& s) {
    return config_from_json_obj(json::parse(s));
}

std::string TrainConfig::hash() const { return util::sha256_hex(config_to_json_obj(*this).dump()); }

void TrainConfig::validate() const {
    if (epochs_per_scale < 1) throw ConfigError("epochs_per_scale must be >= 1");
    if (g_steps < 0 || d_steps < 0) throw ConfigError("g_steps/d_steps must be >= 0");
    if (learning_rate <= 0) throw ConfigError("learning_rate must be positive");
    if (scale_factor <= 0.0 || scale_factor >= 1.0) {
        throw ConfigError("scale_factor must be in (0, 1)");
    }
    if (min_dim < kReceptiveField || max_dim < min_dim) {
        throw ConfigError("invalid min_dim/max_dim");
    }
    if (grad_penalty_weight < 0 || recon_weight < 0) {
        throw ConfigError("loss weights must be nonnegative");
    }
    norm_kind_from_string(norm);
}

torch::Tensor reconstruction_output(ModelStack& stack, int n) {
    torch::NoGradGuard no_grad;
    TORCH_CHECK(n >= 0 && n < stack.schedule.num_scales(), "scale index out of range");
    torch::Tensor x;
    for (int i = 0; i <= n; ++i) {
        auto [h, w] = stack.schedule.dims[static_cast<std::size_t>(i)];
        if (i == 0) {
            x = generator_forward(stack.generators[0], stack.noise.zstar,
                                  torch::zeros({4, h, w}), 1.0);
        } else {
            auto prev = resample(x, h, w);
            x = generator_forward(stack.generators[static_cast<std::size_t>(i)],
                                  torch::zeros({4, h, w}), prev,
                                  stack.noise.sigmas[static_cast<std::size_t>(i)]);
        }
    }
    return x;
}

torch::Tensor random_output(ModelStack& stack, int n, int start_scale) {
    torch::NoGradGuard no_grad;
    TORCH_CHECK(n >= 0 && n < stack.schedule.num_scales(), "scale index out of range");
    if (start_scale < 0 || start_scale > stack.schedule.num_scales()) {
        throw ConfigError("invalid start_scale " + std::to_string(start_scale));
    }
    torch::Tensor x;
    for (int i = 0; i <= n; ++i) {
        auto [h, w] = stack.schedule.dims[static_cast<std::size_t>(i)];
        bool stochastic = i >= start_scale;
        torch::Tensor noise;
        double sigma;
        if (i == 0) {
            noise = stochastic ? torch::randn({4, h, w}) : stack.noise.zstar;
            sigma = 1.0;
        } else {
            noise = stochastic ? torch::randn({4, h, w}) : torch::zeros({4, h, w});
            sigma = stack.noise.sigmas[static_cast<std::size_t>(i)];
        }
        auto prev = (i == 0) ? torch::zeros({4, h, w}) : resample(x, h, w);
        x = generator_forward(stack.generators[static_cast<std::size_t>(i)], noise, prev,
                              sigma);
    }
    return x;
}

torch::Tensor gradient_penalty(const std::function<torch::Tensor(const torch::Tensor&)>& critic,
                               const torch::Tensor& real, const torch::Tensor& fake,
                               std::optional<double> epsilon) {
    if (real.sizes() != fake.sizes()) throw DataError("gradient_penalty: shape mismatch");
    double eps = epsilon ? *epsilon : torch::rand({1}).item<double>();
    auto interp = (eps * real + (1.0 - eps) * fake).detach().requires_grad_(true);
    auto score = critic(interp);
    auto grads = torch::autograd::grad({score}, {interp}, /*grad_outputs=*/{},
                                       /*retain_graph=*/true, /*create_graph=*/true)[0];
    return (grads.norm(2) - 1.0).pow(2);
}

torch::Tensor gradient_penalty(DiscriminatorScale& disc, const torch::Tensor& real,
                               const torch::Tensor& fake, std::optional<double> epsilon) {
    return gradient_penalty(
        [&disc](const torch::Tensor& x) { return disc->forward(x.unsqueeze(0)).mean(); },
        real, fake, epsilon);
}

double reconstruction_loss(ModelStack& stack, const ImagePyramid& pyramid, int n) {
    auto out = reconstruction_output(stack, n);
    return (out - pyramid.levels[static_cast<std::size_t>(n)]).pow(2).mean().item<double>();
}

void train_scale(ModelStack& stack, const ImagePyramid& pyramid, int n,
                 const TrainConfig& cfg, std::vector<LossRecord>& losses) {
    cfg.validate();
    const auto scale = static_cast<std::size_t>(n);
    auto& gen = stack.generators[scale];
    auto& disc = stack.discriminators[scale];
    const auto real = pyramid.levels[scale];
    auto [h, w] = stack.schedule.dims[scale];

    // sigma_n from the reconstruction error of the coarser stack
    if (n == 0) {
        stack.noise.sigmas[0] = 1.0;
    } else {
        auto recon_up = resample(reconstruction_output(stack, n - 1), h, w);
        stack.noise.sigmas[scale] = rmse(recon_up, real);
    }
    const double sigma = stack.noise.sigmas[scale];

    torch::optim::Adam g_opt(gen->parameters(),
                             torch::optim::AdamOptions(cfg.learning_rate)
                                 .betas({cfg.beta1, cfg.beta2}));
    torch::optim::Adam d_opt(disc->parameters(),
                             torch::optim::AdamOptions(cfg.learning_rate)
                                 .betas({cfg.beta1, cfg.beta2}));
    const int decay_epoch = static_cast<int>(0.8 * cfg.epochs_per_scale);

    auto coarser_prev = [&]() -> torch::Tensor {
        if (n == 0) return torch::zeros({4, h, w});
        return resample(random_output(stack, n - 1, 0), h, w);
    };
    auto recon_prev = [&]() -> torch::Tensor {
        if (n == 0) return torch::zeros({4, h, w});
        return resample(reconstruction_output(stack, n - 1), h, w);
    };

    for (int epoch = 0; epoch < cfg.epochs_per_scale; ++epoch) {
        double d_loss_v = 0.0, g_adv_v = 0.0, g_rec_v = 0.0;

        for (int t = 0; t < cfg.d_steps; ++t) {
            torch::Tensor fake;
            {
                torch::NoGradGuard no_grad;
                fake = generator_forward(gen, torch::randn({4, h, w}), coarser_prev(), sigma);
            }
            auto d_real = disc->forward(real.unsqueeze(0)).mean();
            auto d_fake = disc->forward(fake.unsqueeze(0)).mean();
            auto gp = gradient_penalty(disc, real, fake);
            auto d_loss = d_fake - d_real + cfg.grad_penalty_weight * gp;
            d_loss_v = d_loss.item<double>();
            check_finite(d_loss_v, "d_loss", n, epoch);
            d_opt.zero_grad();
            d_loss.backward();
            d_opt.step();
        }

        for (int t = 0; t < cfg.g_steps; ++t) {
            auto noise = torch::randn({4, h, w});
            auto fake = generator_forward(gen, noise, coarser_prev(), sigma);
            auto adv = -disc->forward(fake.unsqueeze(0)).mean();

            auto rec_noise = (n == 0) ? stack.noise.zstar : torch::zeros({4, h, w});
            auto rec_out = generator_forward(gen, rec_noise, recon_prev(), sigma);
            auto rec = (rec_out - real).pow(2).mean();

            auto g_loss = adv + cfg.recon_weight * rec;
            g_adv_v = adv.item<double>();
            g_rec_v = cfg.recon_weight * rec.item<double>();
            check_finite(g_adv_v + g_rec_v, "g_loss", n, epoch);
            g_opt.zero_grad();
            g_loss.backward();
            g_opt.step();
        }

        if (epoch + 1 == decay_epoch) {
            for (auto& group : g_opt.param_groups()) {
                static_cast<torch::optim::AdamOptions&>(group.options())
                    .lr(cfg.learning_rate * cfg.lr_decay_gamma);
            }
            for (auto& group : d_opt.param_groups()) {
                static_cast<torch::optim::AdamOptions&>(group.options())
                    .lr(cfg.learning_rate * cfg.lr_decay_gamma);
            }
        }

        losses.push_back({n, epoch, d_loss_v, g_adv_v, g_rec_v});
    }
}

Checkpoint train_all(const SegmentationSample& sample, const TrainConfig& cfg) {
    cfg.validate();
    torch::manual_seed(static_cast<std::uint64_t>(cfg.seed));

    auto schedule = compute_scale_schedule(sample.image.size(1), sample.image.size(2),
                                           cfg.scale_factor, cfg.min_dim, cfg.max_dim);
    auto fc = stack_four_channel(sample.image, sample.mask);
    auto [fh, fw] = schedule.finest();
    auto pyramid = build_pyramid(resample(fc, fh, fw), schedule);

    Checkpoint ckpt;
    ckpt.stack = init_stack(schedule, cfg.width, cfg.seed, norm_kind_from_string(cfg.norm));
    ckpt.source_id = sample.id;
    ckpt.config = cfg;
    ckpt.config_hash = cfg.hash();

    for (int n = 0; n < schedule.num_scales(); ++n) {
        bool same_width = n > 0 && ckpt.stack.generators[static_cast<std::size_t>(n)]->width ==
                                       ckpt.stack.generators[static_cast<std::size_t>(n - 1)]->width;
        if (same_width) {
            copy_parameters(*ckpt.stack.generators[static_cast<std::size_t>(n - 1)],
                            *ckpt.stack.generators[static_cast<std::size_t>(n)]);
            copy_parameters(*ckpt.stack.discriminators[static_cast<std::size_t>(n - 1)],
                            *ckpt.stack.discriminators[static_cast<std::size_t>(n)]);
        }
        util::log_kv({{"stage", "train_scale"},
                      {"sample", sample.id},
                      {"scale", std::to_string(n)},
                      {"of", std::to_string(schedule.num_scales())}});
        train_scale(ckpt.stack, pyramid, n, cfg, ckpt.losses);
    }
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& dir) {
    fs::create_directories(dir);
    const auto& stack = ckpt.stack;

    torch::save(stack.noise.zstar, (dir / "zstar.bin").string());
    json blobs;
    blobs["zstar.bin"] = util::sha256_file(dir / "zstar.bin");
    for (int i = 0; i < stack.schedule.num_scales(); ++i) {
        auto gname = "scale" + std::to_string(i) + "_G.bin";
        auto dname = "scale" + std::to_string(i) + "_D.bin";
        save_module(*stack.generators[static_cast<std::size_t>(i)], dir / gname);
        save_module(*stack.discriminators[static_cast<std::size_t>(i)], dir / dname);
        blobs[gname] = util::sha256_file(dir / gname);
        blobs[dname] = util::sha256_file(dir / dname);
    }

    {
        std::ofstream csv(dir / "losses.csv");
        csv << "epoch,scale,d_loss,g_adv,g_rec\n";
        for (const auto& r : ckpt.losses) {
            csv << r.epoch << ',' << r.scale << ',' << r.d_loss << ',' << r.g_adv << ','
                << r.g_rec << '\n';
        }
    }

    json dims = json::array();
    for (const auto& [h, w] : stack.schedule.dims) dims.push_back({h, w});
    json manifest{{"format", "singan-seg-checkpoint-v1"},
                  {"source_id", ckpt.source_id},
                  {"config", json::parse(ckpt.config.to_json())},
                  {"config_hash", ckpt.config_hash},
                  {"schedule",
                   {{"scale_factor", stack.schedule.scale_factor},
                    {"min_dim", stack.schedule.stop_scale_min_dim},
                    {"max_dim", stack.schedule.max_dim_cap},
                    {"dims", dims}}},
                  {"base_width", stack.base_width},
                  {"norm", to_string(stack.norm)},
                  {"seed", stack.noise.seed},
                  {"sigmas", stack.noise.sigmas},
                  {"blobs", blobs}};
    std::ofstream out(dir / "manifest.json");
    out << manifest.dump(2) << '\n';
}

Checkpoint load_checkpoint(const fs::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw DataError("missing checkpoint manifest: " + (dir / "manifest.json").string());
    json manifest = json::parse(in);

    auto require = [&](const char* field) -> const json& {
        if (!manifest.contains(field)) {
            throw DataError("checkpoint manifest missing field: " + std::string(field));
        }
        return manifest.at(field);
    };

    Checkpoint ckpt;
    ckpt.source_id = require("source_id").get<std::string>();
    ckpt.config_hash = require("config_hash").get<std::string>();
    ckpt.config = TrainConfig::from_json(require("config").dump());
    if (ckpt.config.hash() != ckpt.config_hash) {
        throw DataError("checkpoint manifest hash mismatch");
    }

    const auto& sj = require("schedule");
    ScaleSchedule schedule;
    schedule.scale_factor = sj.at("scale_factor").get<double>();
    schedule.stop_scale_min_dim = sj.at("min_dim").get<int>();
    schedule.max_dim_cap = sj.at("max_dim").get<int>();
    for (const auto& d : sj.at("dims")) {
        schedule.dims.emplace_back(d.at(0).get<std::int64_t>(), d.at(1).get<std::int64_t>());
    }

    int base_width = require("base_width").get<int>();
    auto norm = norm_kind_from_string(require("norm").get<std::string>());
    auto seed = require("seed").get<std::int64_t>();
    ckpt.stack = init_stack(schedule, base_width, seed, norm);
    ckpt.stack.noise.sigmas = require("sigmas").get<std::vector<double>>();
    if (ckpt.stack.noise.sigmas.size() !=
        static_cast<std::size_t>(schedule.num_scales())) {
        throw DataError("checkpoint sigma count does not match scale count");
    }

    const auto& blobs = require("blobs");
    auto verify = [&](const std::string& name) {
        if (!blobs.contains(name)) {
            throw DataError("checkpoint manifest missing field: blobs." + name);
        }
        if (util::sha256_file(dir / name) != blobs.at(name).get<std::string>()) {
            throw DataError("corrupt checkpoint blob (hash mismatch): " + name);
        }
    };

    verify("zstar.bin");
    torch::load(ckpt.stack.noise.zstar, (dir / "zstar.bin").string());
    for (int i = 0; i < schedule.num_scales(); ++i) {
        auto gname = "scale" + std::to_string(i) + "_G.bin";
        auto dname = "scale" + std::to_string(i) + "_D.bin";
        verify(gname);
        verify(dname);
        load_module(*ckpt.stack.generators[static_cast<std::size_t>(i)], dir / gname);
        load_module(*ckpt.stack.discriminators[static_cast<std::size_t>(i)], dir / dname);
    }
    return ckpt;
}

bool checkpoint_complete(const fs::path& dir) {
    if (!fs::exists(dir / "manifest.json")) return false;
    try {
        load_checkpoint(dir);
        return true;
    } catch (const std::exception&) {
        return false;
    }
}

}  // namespace singanseg
