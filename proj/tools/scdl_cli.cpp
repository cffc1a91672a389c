// Command-line entry point: dataset generation, training, evaluation,
// gradient verification, and the ablation matrix.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "scdl/scdl.hpp"

namespace fs = std::filesystem;

namespace {

struct CliOptions {
    scdl::RunConfig cfg;
    std::string config_path;
    std::string data_dir;
    std::string out_dir = "runs";
    std::string checkpoint_path;
    std::vector<std::uint64_t> seeds;
    bool disable_cdba = false, disable_sac = false, disable_injection = false;
};

void add_common_flags(CLI::App* cmd, CliOptions& opt) {
    cmd->add_option("--config", opt.config_path, "key=value config file");
    cmd->add_option("--seed", opt.seeds, "run seed (repeatable)");
    cmd->add_option("--out", opt.out_dir, "output directory");
    cmd->add_option("--steps", opt.cfg.train.steps, "training steps");
    cmd->add_option("--labeled-frac", opt.cfg.dataset.labeled_fraction, "labeled fraction");
    cmd->add_option("--lambda-e2p", opt.cfg.train.lambda_e2p, "E2P loss weight");
    cmd->add_option("--lambda-p2e", opt.cfg.train.lambda_p2e, "P2E loss weight");
    cmd->add_option("--lambda-sac", opt.cfg.train.lambda_sac, "SAC loss weight");
    cmd->add_option("--samples-S", opt.cfg.train.proxy_samples, "proxy samples per class");
    cmd->add_option("--perturb-K", opt.cfg.train.perturb_samples, "token perturbation samples");
    cmd->add_option("--lr", opt.cfg.train.lr, "learning rate");
    cmd->add_option("--data", opt.data_dir, "dataset directory (train.scds/test.scds)");
    cmd->add_flag("--disable-cdba", opt.disable_cdba, "turn off CDBA losses and priors");
    cmd->add_flag("--disable-sac", opt.disable_sac, "turn off anchor alignment");
    cmd->add_flag("--disable-injection", opt.disable_injection, "turn off prior injection");
}

// Config file provides the base; explicitly passed flags win on top.
void finalize(CliOptions& opt, CLI::App* cmd) {
    if (!opt.config_path.empty()) {
        scdl::RunConfig flags = opt.cfg;
        opt.cfg = scdl::RunConfig{};
        scdl::apply_config_file(opt.cfg, opt.config_path);
        auto set = [cmd](const char* name) {
            auto* o = cmd->get_option_no_throw(name);
            return o != nullptr && o->count() > 0;
        };
        if (set("--steps")) opt.cfg.train.steps = flags.train.steps;
        if (set("--lr")) opt.cfg.train.lr = flags.train.lr;
        if (set("--lambda-e2p")) opt.cfg.train.lambda_e2p = flags.train.lambda_e2p;
        if (set("--lambda-p2e")) opt.cfg.train.lambda_p2e = flags.train.lambda_p2e;
        if (set("--lambda-sac")) opt.cfg.train.lambda_sac = flags.train.lambda_sac;
        if (set("--samples-S")) opt.cfg.train.proxy_samples = flags.train.proxy_samples;
        if (set("--perturb-K")) opt.cfg.train.perturb_samples = flags.train.perturb_samples;
        if (set("--labeled-frac"))
            opt.cfg.dataset.labeled_fraction = flags.dataset.labeled_fraction;
        if (set("--n")) opt.cfg.dataset.N = flags.dataset.N;
        if (set("--test-n")) opt.cfg.test_samples = flags.test_samples;
    }
    if (opt.disable_cdba) { opt.cfg.train.enable_cdba = false; opt.cfg.train.enable_sac = false; }
    if (opt.disable_sac) opt.cfg.train.enable_sac = false;
    if (opt.disable_injection) opt.cfg.train.enable_injection = false;
    if (!opt.seeds.empty()) opt.cfg.seeds = opt.seeds;
    opt.cfg.out_dir = opt.out_dir;
    opt.cfg.validate();
}

std::pair<scdl::Dataset, scdl::Dataset> load_or_generate(const CliOptions& opt) {
    if (!opt.data_dir.empty()) {
        return {scdl::load_dataset(opt.data_dir + "/train.scds"),
                scdl::load_dataset(opt.data_dir + "/test.scds")};
    }
    scdl::Dataset train = scdl::generate_dataset(opt.cfg.dataset);
    scdl::SyntheticDatasetSpec test_spec = opt.cfg.dataset;
    test_spec.N = opt.cfg.test_samples;
    test_spec.labeled_fraction = 1.0;
    test_spec.seed = opt.cfg.dataset.seed + 1000;
    return {train, scdl::generate_dataset(test_spec)};
}

void write_histogram(const scdl::Dataset& ds, const std::string& path) {
    nlohmann::json js;
    js["class_pixel_counts"] = ds.class_pixel_counts;
    std::int64_t total = 0;
    for (auto c : ds.class_pixel_counts) total += c;
    std::vector<double> ratios;
    for (auto c : ds.class_pixel_counts)
        ratios.push_back(static_cast<double>(c) / static_cast<double>(total));
    js["class_pixel_ratios"] = ratios;
    std::ofstream(path) << js.dump(2) << "\n";
}

int cmd_gen_data(CliOptions& opt, CLI::App* cmd) {
    finalize(opt, cmd);
    fs::create_directories(opt.out_dir);
    auto [train, test] = load_or_generate(opt);
    scdl::save_dataset(train, opt.out_dir + "/train.scds");
    scdl::save_dataset(test, opt.out_dir + "/test.scds");
    write_histogram(train, opt.out_dir + "/histogram.json");
    std::cout << "wrote " << opt.out_dir << "/train.scds (" << train.N << " samples, "
              << train.labeled_indices().size() << " labeled) and test.scds ("
              << test.N << " samples)\n";
    return 0;
}

int cmd_train(CliOptions& opt, CLI::App* cmd) {
    finalize(opt, cmd);
    fs::create_directories(opt.out_dir);
    auto [train, test] = load_or_generate(opt);
    opt.cfg.train.seed = opt.cfg.seeds.front();
    std::string hash = scdl::hash_hex(scdl::config_hash(opt.cfg));
    auto result = scdl::run_training(train, test, opt.cfg.train, hash,
                                     opt.out_dir + "/metrics.jsonl",
                                     opt.out_dir + "/final.ckpt");
    std::cout << "final mean Dice " << result.final_eval.mean_dice << ", mean ASD "
              << result.final_eval.mean_asd << "\nmetrics: " << result.metrics_path
              << "\ncheckpoint: " << result.checkpoint_path << "\n";
    return 0;
}

int cmd_eval(CliOptions& opt, CLI::App* cmd) {
    finalize(opt, cmd);
    if (opt.checkpoint_path.empty())
        throw std::runtime_error("eval: --checkpoint is required");
    auto [train, test] = load_or_generate(opt);
    auto tensors = scdl::load_checkpoint(opt.checkpoint_path);
    // network dimensions come from the stored tensor shapes
    opt.cfg.train.token_width = tensors.at("net.enc2.w").dim(0);
    opt.cfg.train.decoder_width = tensors.at("net.dec0.w").dim(0);
    opt.cfg.train.seed = opt.cfg.seeds.front();
    scdl::Trainer trainer(train, opt.cfg.train);
    scdl::load_into_trainer(trainer, opt.checkpoint_path);
    scdl::EvalResult ev = trainer.evaluate(test);
    std::cout << "per-class Dice:";
    for (double d : ev.dice) std::printf(" %.4f", d);
    std::cout << "\nper-class ASD: ";
    for (double a : ev.asd) std::printf(" %.3f", a);
    std::printf("\nmean foreground Dice %.4f, mean ASD %.3f\n", ev.mean_dice, ev.mean_asd);
    return 0;
}

int cmd_gradcheck(CliOptions& opt, CLI::App* cmd) {
    finalize(opt, cmd);
    scdl::VerifyReport report = scdl::run_gradient_suite(opt.cfg.seeds.front());
    for (const auto& e : report.entries)
        std::printf("%-24s max relative error %.3e  (tolerance %.0e)  %s\n", e.name.c_str(),
                    e.max_rel_error, e.tolerance, e.pass() ? "ok" : "FAIL");
    return report.all_pass() ? 0 : 1;
}

int cmd_ablate(CliOptions& opt, CLI::App* cmd) {
    finalize(opt, cmd);
    auto [train, test] = load_or_generate(opt);
    auto summary = scdl::run_ablation(train, test, opt.cfg, opt.out_dir);
    std::printf("%-10s | %-18s | %-18s\n", "row", "mean Dice", "mean ASD");
    for (const auto& row : summary.rows)
        std::printf("%-10s | %8.4f +- %6.4f | %8.3f +- %6.3f\n", row.name.c_str(),
                    row.mean_dice_mean, row.mean_dice_std, row.mean_asd_mean,
                    row.mean_asd_std);
    std::cout << "summary: " << opt.out_dir << "/summary.json\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"semantic class distribution learning harness"};
    app.require_subcommand(1);
    CliOptions opt;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic long-tailed dataset");
    add_common_flags(gen, opt);
    gen->add_option("--n", opt.cfg.dataset.N, "training sample count");
    gen->add_option("--test-n", opt.cfg.test_samples, "test sample count");

    auto* train = app.add_subcommand("train", "train one configuration");
    add_common_flags(train, opt);

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common_flags(eval, opt);
    eval->add_option("--checkpoint", opt.checkpoint_path, "checkpoint path");

    auto* grad = app.add_subcommand("gradcheck", "run the gradient verification suite");
    add_common_flags(grad, opt);

    auto* ablate = app.add_subcommand("ablate", "run the 3-row ablation matrix");
    add_common_flags(ablate, opt);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(opt, gen);
        if (train->parsed()) return cmd_train(opt, train);
        if (eval->parsed()) return cmd_eval(opt, eval);
        if (grad->parsed()) return cmd_gradcheck(opt, grad);
        if (ablate->parsed()) return cmd_ablate(opt, ablate);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
