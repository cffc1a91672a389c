#ifndef SCDL_CONFIG_HPP
#define SCDL_CONFIG_HPP

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "scdl/checkpoint.hpp"
#include "scdl/data.hpp"
#include "scdl/train.hpp"

namespace scdl {

// Plain key=value config file; '#' starts a comment, blank lines ignored.
// Unknown keys are rejected so typos surface immediately.
struct RunConfig {
    SyntheticDatasetSpec dataset;
    std::string dataset_path; // when set, load instead of generating
    TrainConfig train;
    std::vector<std::uint64_t> seeds = {1};
    std::string out_dir = "runs";
    std::int64_t test_samples = 50;

    void validate() const {
        train.validate();
        if (seeds.empty())
            throw std::invalid_argument("config invariant violated: need at least one seed");
    }
};

namespace detail_cfg {

inline std::vector<double> parse_double_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        out.push_back(std::stod(item));
    return out;
}

inline bool parse_bool(const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw std::invalid_argument("config: expected boolean, got '" + s + "'");
}

} // namespace detail_cfg

inline void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
    using detail_cfg::parse_bool;
    using detail_cfg::parse_double_list;
    if (key == "steps") cfg.train.steps = std::stoll(value);
    else if (key == "lr") cfg.train.lr = std::stod(value);
    else if (key == "momentum") cfg.train.momentum = std::stod(value);
    else if (key == "weight_decay_scdl") cfg.train.weight_decay_scdl = std::stod(value);
    else if (key == "batch_size") cfg.train.batch_size = std::stoll(value);
    else if (key == "lambda_e2p") cfg.train.lambda_e2p = std::stod(value);
    else if (key == "lambda_p2e") cfg.train.lambda_p2e = std::stod(value);
    else if (key == "lambda_sac") cfg.train.lambda_sac = std::stod(value);
    else if (key == "samples_s") cfg.train.proxy_samples = std::stoll(value);
    else if (key == "perturb_k") cfg.train.perturb_samples = std::stoll(value);
    else if (key == "enable_cdba") cfg.train.enable_cdba = parse_bool(value);
    else if (key == "enable_sac") cfg.train.enable_sac = parse_bool(value);
    else if (key == "enable_injection") cfg.train.enable_injection = parse_bool(value);
    else if (key == "use_ema_anchors") cfg.train.use_ema_anchors = parse_bool(value);
    else if (key == "token_width") cfg.train.token_width = std::stoll(value);
    else if (key == "decoder_width") cfg.train.decoder_width = std::stoll(value);
    else if (key == "eval_interval") cfg.train.eval_interval = std::stoll(value);
    else if (key == "dataset_path") cfg.dataset_path = value;
    else if (key == "n_samples") cfg.dataset.N = std::stoll(value);
    else if (key == "test_samples") cfg.test_samples = std::stoll(value);
    else if (key == "image_size") { cfg.dataset.H = std::stoll(value); cfg.dataset.W = cfg.dataset.H; }
    else if (key == "classes") cfg.dataset.C = std::stoll(value);
    else if (key == "area_ratios") cfg.dataset.area_ratios = parse_double_list(value);
    else if (key == "intensity_means") cfg.dataset.intensity_means = parse_double_list(value);
    else if (key == "noise_std") cfg.dataset.noise_std = std::stod(value);
    else if (key == "labeled_frac") cfg.dataset.labeled_fraction = std::stod(value);
    else if (key == "data_seed") cfg.dataset.seed = std::stoull(value);
    else if (key == "out_dir") cfg.out_dir = value;
    else if (key == "seeds") {
        cfg.seeds.clear();
        for (double v : parse_double_list(value))
            cfg.seeds.push_back(static_cast<std::uint64_t>(v));
    } else {
        throw std::invalid_argument("config: unknown key '" + key + "'");
    }
}

inline std::map<std::string, std::string> parse_config_text(const std::string& text) {
    std::map<std::string, std::string> entries;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: malformed line '" + line + "'");
        auto trim = [](std::string s) {
            auto b = s.find_first_not_of(" \t\r");
            auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        entries[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return entries;
}

inline void apply_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path);
    std::stringstream buf;
    buf << is.rdbuf();
    for (const auto& [k, v] : parse_config_text(buf.str()))
        apply_config_entry(cfg, k, v);
}

// Canonical text: sorted key=value lines covering every effective setting.
inline std::string canonical_config_text(const RunConfig& cfg) {
    std::map<std::string, std::string> kv;
    auto num = [](double v) {
        std::ostringstream os;
        os.precision(17);
        os << v;
        return os.str();
    };
    auto list = [&num](const std::vector<double>& v) {
        std::string out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i) out += ",";
            out += num(v[i]);
        }
        return out;
    };
    kv["steps"] = std::to_string(cfg.train.steps);
    kv["lr"] = num(cfg.train.lr);
    kv["momentum"] = num(cfg.train.momentum);
    kv["weight_decay_scdl"] = num(cfg.train.weight_decay_scdl);
    kv["batch_size"] = std::to_string(cfg.train.batch_size);
    kv["lambda_e2p"] = num(cfg.train.lambda_e2p);
    kv["lambda_p2e"] = num(cfg.train.lambda_p2e);
    kv["lambda_sac"] = num(cfg.train.lambda_sac);
    kv["samples_s"] = std::to_string(cfg.train.proxy_samples);
    kv["perturb_k"] = std::to_string(cfg.train.perturb_samples);
    kv["enable_cdba"] = cfg.train.enable_cdba ? "true" : "false";
    kv["enable_sac"] = cfg.train.enable_sac ? "true" : "false";
    kv["enable_injection"] = cfg.train.enable_injection ? "true" : "false";
    kv["use_ema_anchors"] = cfg.train.use_ema_anchors ? "true" : "false";
    kv["token_width"] = std::to_string(cfg.train.token_width);
    kv["decoder_width"] = std::to_string(cfg.train.decoder_width);
    kv["eval_interval"] = std::to_string(cfg.train.eval_interval);
    kv["dataset_path"] = cfg.dataset_path;
    kv["n_samples"] = std::to_string(cfg.dataset.N);
    kv["test_samples"] = std::to_string(cfg.test_samples);
    kv["image_h"] = std::to_string(cfg.dataset.H);
    kv["image_w"] = std::to_string(cfg.dataset.W);
    kv["classes"] = std::to_string(cfg.dataset.C);
    kv["area_ratios"] = list(cfg.dataset.area_ratios);
    kv["intensity_means"] = list(cfg.dataset.intensity_means);
    kv["noise_std"] = num(cfg.dataset.noise_std);
    kv["labeled_frac"] = num(cfg.dataset.labeled_fraction);
    kv["data_seed"] = std::to_string(cfg.dataset.seed);
    std::string out;
    for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
}

inline std::uint32_t config_hash(const RunConfig& cfg) {
    return crc32(canonical_config_text(cfg));
}

} // namespace scdl

#endif
