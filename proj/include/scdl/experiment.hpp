#ifndef SCDL_EXPERIMENT_HPP
#define SCDL_EXPERIMENT_HPP

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "scdl/checkpoint.hpp"
#include "scdl/config.hpp"
#include "scdl/train.hpp"

namespace scdl {

inline std::string hash_hex(std::uint32_t h) {
    char buf[9];
    std::snprintf(buf, sizeof(buf), "%08x", h);
    return buf;
}

inline std::int64_t unix_time_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

struct RunResult {
    EvalResult final_eval;
    std::string metrics_path;
    std::string checkpoint_path;
};

inline nlohmann::json eval_record(std::int64_t step, std::uint64_t seed,
                                  const std::string& cfg_hash, const StepMetrics& losses,
                                  const EvalResult& ev) {
    nlohmann::json rec;
    rec["step"] = step;
    rec["seed"] = seed;
    rec["config_hash"] = cfg_hash;
    rec["timestamp_ms"] = unix_time_ms();
    rec["loss_total"] = losses.total;
    rec["loss_seg"] = losses.seg;
    rec["loss_e2p"] = losses.e2p;
    rec["loss_p2e"] = losses.p2e;
    rec["loss_sac"] = losses.sac;
    rec["dice"] = ev.dice;
    rec["asd"] = ev.asd;
    rec["mean_dice"] = ev.mean_dice;
    rec["mean_asd"] = ev.mean_asd;
    return rec;
}

// One training run: periodic eval records as JSON lines, final checkpoint.
inline RunResult run_training(const Dataset& train_set, const Dataset& test_set,
                              const TrainConfig& cfg, const std::string& cfg_hash,
                              const std::string& metrics_path,
                              const std::string& checkpoint_path) {
    Trainer trainer(train_set, cfg);
    std::ofstream metrics(metrics_path, std::ios::app);
    if (!metrics) throw std::runtime_error("run_training: cannot open " + metrics_path);

    StepMetrics last{};
    EvalResult ev = trainer.evaluate(test_set);
    metrics << eval_record(0, cfg.seed, cfg_hash, last, ev).dump() << "\n";
    metrics.flush();

    for (std::int64_t s = 1; s <= cfg.steps; ++s) {
        last = trainer.train_step();
        if (s % cfg.eval_interval == 0 || s == cfg.steps) {
            ev = trainer.evaluate(test_set);
            metrics << eval_record(s, cfg.seed, cfg_hash, last, ev).dump() << "\n";
            metrics.flush();
        }
    }
    if (!checkpoint_path.empty())
        save_checkpoint(trainer.named_params(), checkpoint_path);
    return {ev, metrics_path, checkpoint_path};
}

inline void load_into_trainer(Trainer& trainer, const std::string& checkpoint_path) {
    auto tensors = load_checkpoint(checkpoint_path);
    for (auto& [name, param] : trainer.named_params()) {
        auto it = tensors.find(name);
        if (it == tensors.end())
            throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
        if (it->second.shape() != param.shape())
            throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
        param.data() = it->second.data();
    }
}

// Three-row ablation matrix: baseline / +CDBA / +CDBA+SAC.
struct AblationRow {
    std::string name;
    bool cdba, sac, injection;
};

inline std::vector<AblationRow> ablation_rows() {
    return {{"baseline", false, false, false},
            {"cdba", true, false, true},
            {"cdba_sac", true, true, true}};
}

struct AblationSummary {
    struct Row {
        std::string name;
        double mean_dice_mean = 0.0, mean_dice_std = 0.0;
        double mean_asd_mean = 0.0, mean_asd_std = 0.0;
        std::vector<double> rare_dice; // per seed, rarest (last) class
        std::vector<double> mean_dice_per_seed;
    };
    std::vector<Row> rows;
};

inline int max_parallelism() {
    if (const char* env = std::getenv("SCDL_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1) return n;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

inline AblationSummary run_ablation(const Dataset& train_set, const Dataset& test_set,
                                    const RunConfig& base_cfg, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    auto rows = ablation_rows();
    AblationSummary summary;
    summary.rows.resize(rows.size());

    struct Job {
        std::size_t row;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (auto seed : base_cfg.seeds) jobs.push_back({r, seed});

    std::vector<EvalResult> results(jobs.size());
    std::mutex next_mutex;
    std::size_t next_job = 0;

    auto worker = [&] {
        while (true) {
            std::size_t j;
            {
                std::lock_guard<std::mutex> lk(next_mutex);
                if (next_job >= jobs.size()) return;
                j = next_job++;
            }
            const auto& row = rows[jobs[j].row];
            RunConfig cfg = base_cfg;
            cfg.train.enable_cdba = row.cdba;
            cfg.train.enable_sac = row.sac;
            cfg.train.enable_injection = row.injection;
            cfg.train.seed = jobs[j].seed;
            std::string tag = row.name + "_seed" + std::to_string(jobs[j].seed);
            results[j] = run_training(train_set, test_set, cfg.train,
                                      hash_hex(config_hash(cfg)),
                                      out_dir + "/" + tag + ".jsonl",
                                      out_dir + "/" + tag + ".ckpt")
                             .final_eval;
        }
    };

    int n_threads = std::min<int>(max_parallelism(), static_cast<int>(jobs.size()));
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    for (std::size_t r = 0; r < rows.size(); ++r) {
        auto& out = summary.rows[r];
        out.name = rows[r].name;
        std::vector<double> dices, asds;
        for (std::size_t j = 0; j < jobs.size(); ++j) {
            if (jobs[j].row != r) continue;
            dices.push_back(results[j].mean_dice);
            asds.push_back(results[j].mean_asd);
            out.mean_dice_per_seed.push_back(results[j].mean_dice);
            out.rare_dice.push_back(results[j].dice.back());
        }
        auto mean_std = [](const std::vector<double>& v, double& m, double& s) {
            m = 0.0;
            for (double x : v) m += x;
            m /= static_cast<double>(v.size());
            s = 0.0;
            for (double x : v) s += (x - m) * (x - m);
            s = v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0;
        };
        mean_std(dices, out.mean_dice_mean, out.mean_dice_std);
        mean_std(asds, out.mean_asd_mean, out.mean_asd_std);
    }

    nlohmann::json js;
    for (const auto& row : summary.rows) {
        nlohmann::json r;
        r["name"] = row.name;
        r["mean_dice"] = row.mean_dice_mean;
        r["mean_dice_std"] = row.mean_dice_std;
        r["mean_asd"] = row.mean_asd_mean;
        r["mean_asd_std"] = row.mean_asd_std;
        r["mean_dice_per_seed"] = row.mean_dice_per_seed;
        r["rare_class_dice_per_seed"] = row.rare_dice;
        js["rows"].push_back(r);
    }
    std::ofstream(out_dir + "/summary.json") << js.dump(2) << "\n";
    return summary;
}

} // namespace scdl

#endif
