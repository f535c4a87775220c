#include <sys/fcntl.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <torch/torch.h>

#include "singanseg/config.hpp"
#include "singanseg/dataset.hpp"
#include "singanseg/errors.hpp"
#include "singanseg/features.hpp"
#include "singanseg/metrics.hpp"
#include "singanseg/sampler.hpp"
#include "singanseg/seg_eval.hpp"
#include "singanseg/style_transfer.hpp"
#include "singanseg/trainer.hpp"
#include "singanseg/util.hpp"

namespace fs = std::filesystem;
using namespace singanseg;

namespace {

// exit codes: 0 ok, 2 config, 3 data, 4 numerical
int run_guarded(const std::function<void()>& fn) {
    try {
        fn();
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 4;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    }
}

/// Exclusive ownership of a checkpoint directory for the duration of a
/// training job.
class DirLock {
public:
    explicit DirLock(const fs::path& dir) : path_(dir / "lock") {
        fs::create_directories(dir);
        fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd_ < 0) {
            throw DataError("checkpoint dir locked by another trainer: " + dir.string());
        }
    }
    ~DirLock() {
        if (fd_ >= 0) {
            ::close(fd_);
            std::error_code ec;
            fs::remove(path_, ec);
        }
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    fs::path path_;
    int fd_ = -1;
};

TrainConfig train_config_from(const ConfigFile& cfg) {
    ConfigFile only_model = cfg;
    auto it = only_model.sections.find("train");
    if (it != only_model.sections.end()) {
        for (const char* key : {"data", "out", "images", "workers", "force"}) {
            it->second.erase(key);
        }
    }
    auto tc = TrainConfig::from_json(only_model.section_json("train"));
    tc.validate();
    return tc;
}

std::vector<std::string> split_csv_list(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) {
        auto b = item.find_first_not_of(" \t");
        auto e = item.find_last_not_of(" \t");
        if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
    }
    return out;
}

void train_one(const SegmentationSample& sample, const TrainConfig& tc, const fs::path& dir) {
    DirLock lock(dir);
    auto ckpt = train_all(sample, tc);
    save_checkpoint(ckpt, dir);
}

int cmd_train_gan(const std::string& config_path, std::string data_dir, std::string out_dir,
                  std::string images, bool force, int workers) {
    ConfigFile cfg;
    if (!config_path.empty()) cfg = ConfigFile::parse_file(config_path);
    if (data_dir.empty()) data_dir = cfg.get("train", "data");
    if (out_dir.empty()) out_dir = cfg.get("train", "out");
    if (images.empty()) images = cfg.get("train", "images", "all");
    if (workers <= 0) workers = cfg.get_int("train", "workers", 1);
    if (data_dir.empty()) throw ConfigError("train-gan: no dataset directory given");
    if (out_dir.empty()) throw ConfigError("train-gan: no output directory given");

    auto tc = train_config_from(cfg);
    auto all = load_dataset(data_dir);
    std::vector<SegmentationSample> selected;
    if (images == "all") {
        selected = all;
    } else {
        std::set<std::string> wanted;
        for (const auto& id : split_csv_list(images)) wanted.insert(id);
        for (const auto& s : all) {
            if (wanted.erase(s.id)) selected.push_back(s);
        }
        if (!wanted.empty()) {
            throw DataError("unknown image id: " + *wanted.begin());
        }
    }

    fs::create_directories(out_dir);
    std::vector<const SegmentationSample*> todo;
    int skipped = 0;
    for (const auto& s : selected) {
        fs::path dir = fs::path(out_dir) / s.id;
        if (checkpoint_complete(dir)) {
            if (!force) {
                skipped++;
                continue;
            }
            fs::remove_all(dir);
        } else if (fs::exists(dir) && !fs::is_empty(dir)) {
            if (!force) {
                throw DataError("partial checkpoint at " + dir.string() +
                                "; rerun with --force");
            }
            fs::remove_all(dir);
        }
        todo.push_back(&s);
    }

    if (workers <= 1 || todo.size() <= 1) {
        for (const auto* s : todo) {
            train_one(*s, tc, fs::path(out_dir) / s->id);
        }
    } else {
        std::size_t next = 0;
        int running = 0, failed = 0;
        std::map<pid_t, std::string> jobs;
        while (next < todo.size() || running > 0) {
            while (running < workers && next < todo.size()) {
                const auto* s = todo[next++];
                pid_t pid = ::fork();
                if (pid < 0) throw DataError("fork failed");
                if (pid == 0) {
                    int rc = run_guarded(
                        [&] { train_one(*s, tc, fs::path(out_dir) / s->id); });
                    ::_exit(rc);
                }
                jobs[pid] = s->id;
                running++;
            }
            int status = 0;
            pid_t pid = ::wait(&status);
            if (pid > 0) {
                running--;
                if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
                    std::cerr << "worker failed for image " << jobs[pid] << "\n";
                    failed++;
                }
            }
        }
        if (failed > 0) throw DataError(std::to_string(failed) + " training jobs failed");
    }

    if (skipped > 0) std::cout << "skipped: " << skipped << " existing\n";
    util::log_kv({{"cmd", "train-gan"},
                  {"trained", std::to_string(todo.size())},
                  {"skipped", std::to_string(skipped)},
                  {"config_hash", tc.hash()}});
    return 0;
}

int cmd_generate(const std::string& config_path, std::string ckpt_dir, std::string out_dir,
                 int n, int start_scale, std::int64_t seed, double threshold) {
    ConfigFile cfg;
    if (!config_path.empty()) cfg = ConfigFile::parse_file(config_path);
    if (ckpt_dir.empty()) ckpt_dir = cfg.get("generate", "checkpoints");
    if (out_dir.empty()) out_dir = cfg.get("generate", "out");
    if (n < 0) n = cfg.get_int("generate", "n", 10);
    if (start_scale < 0) start_scale = cfg.get_int("generate", "start_scale", 0);
    if (seed < 0) seed = cfg.get_int64("generate", "seed", 0);
    if (threshold < 0) threshold = cfg.get_double("generate", "threshold", 0.5);
    if (ckpt_dir.empty()) throw ConfigError("generate: no checkpoint directory given");
    if (out_dir.empty()) throw ConfigError("generate: no output directory given");
    if (n < 1) throw ConfigError("generate: n must be >= 1");

    std::vector<fs::path> dirs;
    if (fs::exists(fs::path(ckpt_dir) / "manifest.json")) {
        dirs.push_back(ckpt_dir);
    } else if (fs::is_directory(ckpt_dir)) {
        for (const auto& entry : fs::directory_iterator(ckpt_dir)) {
            if (entry.is_directory() && fs::exists(entry.path() / "manifest.json")) {
                dirs.push_back(entry.path());
            }
        }
    }
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw DataError("no checkpoints found under " + ckpt_dir);

    int exported = 0, flagged = 0;
    for (const auto& dir : dirs) {
        auto ckpt = load_checkpoint(dir);
        auto samples = generate_samples(ckpt, start_scale, n, seed);
        auto stats = export_samples(ckpt, samples, out_dir, start_scale, seed, threshold);
        exported += stats.exported;
        flagged += stats.flagged_empty;
    }
    util::log_kv({{"cmd", "generate"},
                  {"checkpoints", std::to_string(dirs.size())},
                  {"exported", std::to_string(exported)},
                  {"flagged_empty", std::to_string(flagged)}});
    return 0;
}

int cmd_style_transfer(const std::string& config_path, std::string gen_dir,
                       std::string real_dir, std::string out_dir, std::string ratio,
                       int epochs, std::int64_t seed, double step_size) {
    ConfigFile cfg;
    if (!config_path.empty()) cfg = ConfigFile::parse_file(config_path);
    if (gen_dir.empty()) gen_dir = cfg.get("style", "generated");
    if (real_dir.empty()) real_dir = cfg.get("style", "real");
    if (out_dir.empty()) out_dir = cfg.get("style", "out");
    if (ratio.empty()) ratio = cfg.get("style", "ratio", "1:1000");
    if (epochs < 0) epochs = cfg.get_int("style", "epochs", 1000);
    if (seed < 0) seed = cfg.get_int64("style", "seed", 0);
    if (step_size <= 0) step_size = cfg.get_double("style", "step_size", StyleConfig{}.step_size);
    if (gen_dir.empty()) throw ConfigError("style-transfer: no generated dataset given");
    if (real_dir.empty()) throw ConfigError("style-transfer: no real dataset given");
    if (out_dir.empty()) throw ConfigError("style-transfer: no output directory given");

    StyleConfig sc;
    std::tie(sc.content_weight, sc.style_weight) = StyleConfig::parse_ratio(ratio);
    sc.epochs = epochs;
    sc.seed = seed;
    sc.step_size = step_size;
    sc.validate();
    auto stats = stylize_dataset(gen_dir, real_dir, sc, out_dir);
    util::log_kv({{"cmd", "style-transfer"},
                  {"stylized", std::to_string(stats.stylized)},
                  {"ratio", ratio}});
    return 0;
}

int cmd_metrics(const std::string& config_path, std::string a_dir, std::string b_dir,
                std::string metric, int sets, std::string out_dir, int pool_dim) {
    ConfigFile cfg;
    if (!config_path.empty()) cfg = ConfigFile::parse_file(config_path);
    if (a_dir.empty()) a_dir = cfg.get("metrics", "a");
    if (b_dir.empty()) b_dir = cfg.get("metrics", "b");
    if (metric.empty()) metric = cfg.get("metrics", "metric", "fid");
    if (sets <= 0) sets = cfg.get_int("metrics", "sets", 1);
    if (out_dir.empty()) out_dir = cfg.get("metrics", "out", ".");
    if (pool_dim <= 0) pool_dim = cfg.get_int("metrics", "pool_dim", 2048);
    if (a_dir.empty() || b_dir.empty()) throw ConfigError("metrics: both -a and -b required");
    if (metric != "fid" && metric != "sifid") {
        throw ConfigError("unknown metric: " + metric + " (expected fid or sifid)");
    }

    std::vector<fs::path> b_sets;
    if (sets == 1) {
        b_sets.push_back(b_dir);
    } else {
        for (const auto& entry : fs::directory_iterator(b_dir)) {
            if (entry.is_directory()) b_sets.push_back(entry.path());
        }
        std::sort(b_sets.begin(), b_sets.end());
        if (static_cast<int>(b_sets.size()) < sets) {
            throw DataError("metrics: " + b_dir + " holds " +
                            std::to_string(b_sets.size()) + " set subdirectories, need " +
                            std::to_string(sets));
        }
        b_sets.resize(static_cast<std::size_t>(sets));
    }

    InceptionFeatureExtractor extractor(pool_dim);
    std::vector<MetricRecord> records;
    auto a_name = fs::path(a_dir).filename().string();
    for (std::size_t i = 0; i < b_sets.size(); ++i) {
        double value = metric == "fid" ? fid(a_dir, b_sets[i], extractor)
                                       : sifid(a_dir, b_sets[i], extractor).mean;
        records.push_back({a_name, b_sets[i].filename().string(), metric,
                           static_cast<int>(i + 1), value});
        util::log_kv({{"cmd", "metrics"},
                      {"metric", metric},
                      {"set", std::to_string(i + 1)},
                      {"value", util::format_float(value)}});
    }
    fs::create_directories(out_dir);
    write_report(records, fs::path(out_dir) / "metrics.csv", fs::path(out_dir) / "metrics.md");
    return 0;
}

int cmd_seg(const std::string& config_path, std::string experiment) {
    if (config_path.empty()) throw ConfigError("seg: --config is required");
    auto cfg = ConfigFile::parse_file(config_path);
    if (experiment.empty()) experiment = cfg.get("seg", "experiment", "crossval");
    if (experiment != "crossval" && experiment != "smalldata") {
        throw ConfigError("unknown seg experiment: " + experiment);
    }
    auto real_dir = cfg.get("seg", "real");
    auto out_dir = cfg.get("seg", "out", ".");
    if (real_dir.empty()) throw ConfigError("seg: [seg] real dataset path is required");
    auto real = load_dataset(real_dir);
    std::vector<SegmentationSample> synthetic;
    auto synth_dir = cfg.get("seg", "synthetic");
    if (!synth_dir.empty()) synthetic = load_dataset(synth_dir);

    SegModelConfig mc = cfg.get("seg", "preset", "small") == "reference"
                            ? SegModelConfig::reference_preset()
                            : SegModelConfig::small_preset();
    mc.input_size = cfg.get_int("seg", "input_size", mc.input_size);
    mc.base_width = cfg.get_int("seg", "base_width", mc.base_width);
    mc.depth = cfg.get_int("seg", "depth", mc.depth);
    mc.validate();

    SegTrainSchedule sched;
    sched.epochs = cfg.get_int("seg", "epochs", sched.epochs);
    sched.initial_lr = cfg.get_double("seg", "initial_lr", sched.initial_lr);
    sched.late_lr = cfg.get_double("seg", "late_lr", sched.late_lr);
    sched.lr_switch_epoch = cfg.get_int("seg", "lr_switch_epoch", sched.lr_switch_epoch);
    sched.batch_size = cfg.get_int("seg", "batch_size", sched.batch_size);
    sched.augment = cfg.get_bool("seg", "augment", sched.augment);
    sched.seed = cfg.get_int64("seg", "seed", sched.seed);
    auto fold_seed = cfg.get_int64("seg", "fold_seed", 0);

    std::vector<CrossValRow> rows;
    if (experiment == "crossval") {
        int k = cfg.get_int("seg", "k", 3);
        auto mode_str = cfg.get("seg", "mode", "real");
        auto mode = mode_str == "real" ? CrossValMode::Real : CrossValMode::FakeN;
        int n_per_image = cfg.get_int("seg", "n_per_image", 1);
        auto label = cfg.get("seg", "label", "crossval");
        rows = cross_validate(real, synthetic, k, mode, n_per_image, mc, sched, fold_seed,
                              label);
    } else {
        std::vector<int> r_values;
        for (const auto& tok : split_csv_list(cfg.get("seg", "r_values", "5,10"))) {
            r_values.push_back(std::stoi(tok));
        }
        int ratio = cfg.get_int("seg", "ratio", 10);
        rows = small_data_experiment(real, synthetic, r_values, ratio, mc, sched, fold_seed);
    }

    fs::create_directories(out_dir);
    write_seg_results_csv(rows, fs::path(out_dir) / "results.csv");
    write_seg_results_markdown(rows, fs::path(out_dir) / "results.md");
    {
        std::ofstream plot(fs::path(out_dir) / "plot.csv");
        plot << "mode,fold,iou,f_score\n";
        for (const auto& r : rows) {
            plot << r.mode << ',' << (r.fold < 0 ? "mean" : std::to_string(r.fold)) << ','
                 << util::format_float(r.metrics.iou, 4) << ','
                 << util::format_float(r.metrics.f_score, 4) << '\n';
        }
    }
    util::log_kv({{"cmd", "seg"},
                  {"experiment", experiment},
                  {"rows", std::to_string(rows.size())}});
    return 0;
}

int cmd_report(const std::string& csv_in, const std::string& out_prefix) {
    std::ifstream in(csv_in);
    if (!in) throw DataError("cannot read metrics csv: " + csv_in);
    std::vector<MetricRecord> records;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        MetricRecord r;
        std::string set_id, value;
        if (!std::getline(ls, r.dataset_a, ',') || !std::getline(ls, r.dataset_b, ',') ||
            !std::getline(ls, r.metric, ',') || !std::getline(ls, set_id, ',') ||
            !std::getline(ls, value, ',')) {
            throw DataError("malformed metrics csv row: " + line);
        }
        r.set_id = std::stoi(set_id);
        r.value = std::stod(value);
        records.push_back(r);
    }
    if (records.empty()) throw DataError("metrics csv has no rows: " + csv_in);
    write_report(records, out_prefix + ".csv", out_prefix + ".md");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    torch::set_num_threads(1);
    CLI::App app{"SinGAN-Seg: single-image GAN synthesis and evaluation for polyp "
                 "segmentation data"};
    app.require_subcommand(1);

    std::string config_path, data_dir, out_dir, images = "", ckpt_dir, gen_dir, real_dir;
    std::string ratio, metric, a_dir, b_dir, experiment, csv_in, report_out = "report";
    bool force = false;
    int workers = 0, n = -1, start_scale = -1, epochs = -1, sets = 0, pool_dim = 0;
    std::int64_t seed = -1;
    double threshold = -1, step_size = 0;

    auto* train = app.add_subcommand("train-gan", "train one GAN pyramid per image");
    train->add_option("--config", config_path, "config file");
    train->add_option("--data", data_dir, "dataset root (images/ + masks/)");
    train->add_option("--out", out_dir, "checkpoint output root");
    train->add_option("--images", images, "comma-separated image ids, or 'all'");
    train->add_flag("--force", force, "retrain over existing checkpoints");
    train->add_option("--workers", workers, "worker process count");

    auto* gen = app.add_subcommand("generate", "sample synthetic image/mask pairs");
    gen->add_option("--config", config_path);
    gen->add_option("--checkpoints", ckpt_dir, "checkpoint root or single checkpoint dir");
    gen->add_option("--out", out_dir);
    gen->add_option("--n", n, "samples per checkpoint");
    gen->add_option("--start-scale", start_scale, "0 = fully random from the coarsest scale");
    gen->add_option("--seed", seed);
    gen->add_option("--threshold", threshold, "mask binarization threshold");

    auto* style = app.add_subcommand("style-transfer", "refine synthetic images");
    style->add_option("--config", config_path);
    style->add_option("--generated", gen_dir, "synthetic dataset dir");
    style->add_option("--real", real_dir, "real dataset dir");
    style->add_option("--out", out_dir);
    style->add_option("--ratio", ratio, "content:style weights, e.g. 1:1000");
    style->add_option("--epochs", epochs);
    style->add_option("--seed", seed);
    style->add_option("--step-size", step_size);

    auto* met = app.add_subcommand("metrics", "FID / SIFID between two datasets");
    met->add_option("--config", config_path);
    met->add_option("-a,--a", a_dir, "reference dataset");
    met->add_option("-b,--b", b_dir, "comparison dataset (or parent of set dirs)");
    met->add_option("--metric", metric, "fid | sifid");
    met->add_option("--sets", sets, "number of comparison sets");
    met->add_option("--out", out_dir);
    met->add_option("--pool-dim", pool_dim);

    auto* seg = app.add_subcommand("seg", "segmentation cross-validation experiments");
    seg->add_option("--config", config_path)->required();
    seg->add_option("--experiment", experiment, "crossval | smalldata");

    auto* rep = app.add_subcommand("report", "re-render a metrics CSV as Markdown");
    rep->add_option("--csv", csv_in)->required();
    rep->add_option("--out", report_out, "output prefix (.csv/.md appended)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    return run_guarded([&] {
        int rc = 0;
        if (train->parsed()) {
            rc = cmd_train_gan(config_path, data_dir, out_dir, images, force, workers);
        } else if (gen->parsed()) {
            rc = cmd_generate(config_path, ckpt_dir, out_dir, n, start_scale, seed, threshold);
        } else if (style->parsed()) {
            rc = cmd_style_transfer(config_path, gen_dir, real_dir, out_dir, ratio, epochs,
                                    seed, step_size);
        } else if (met->parsed()) {
            rc = cmd_metrics(config_path, a_dir, b_dir, metric, sets, out_dir, pool_dim);
        } else if (seg->parsed()) {
            rc = cmd_seg(config_path, experiment);
        } else if (rep->parsed()) {
            rc = cmd_report(csv_in, report_out);
        }
        if (rc != 0) throw DataError("command failed");
    });
}
