#pragma once

// Experiment configuration: INI-style "[section]" blocks of "key = value".
// Every key has a default; unknown sections or keys are rejected.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bridgefov/bridge.hpp"
#include "bridgefov/denoiser.hpp"
#include "bridgefov/phantom.hpp"
#include "bridgefov/projector.hpp"
#include "bridgefov/recon.hpp"
#include "bridgefov/train.hpp"

namespace bridgefov {

inline constexpr int kConfigVersion = 1;

struct ScheduleConfig {
    int K = 1000;
    double beta_max = 0.3;
    double beta_min = 1e-4;
};

struct TrainingSection {
    int iterations = 6000;
    int batch_size = 4;
    int micro_batch = 4;
    double learning_rate = 5e-4;
    double ema_decay = 0.0;
    int log_every = 100;
    int checkpoint_every = 1000;
};

struct SamplingSection {
    int nfe = 1;
    std::vector<int> nfe_grid{1, 5, 10, 25};
    int uncertainty_seeds = 8;
    int uncertainty_nfe = 10;
    int bench_repetitions = 20;
};

struct BaselineSection {
    int steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    int iterations = 200;
    double learning_rate = 5e-4;
};

struct DatasetSection {
    int n_train = 500;
    int n_val = 20;
    int n_test = 50;
};

struct PathsSection {
    std::string data_dir = "data";
    std::string run_dir = "run";
};

struct ExperimentConfig {
    int version = kConfigVersion;
    std::uint64_t seed = 0;
    PhantomConfig phantom;
    ScanGeometry geometry;
    NoiseModel noise;
    WceParams wce;
    ScheduleConfig schedule;
    ArchDescriptor model;
    TrainingSection training;
    SamplingSection sampling;
    BaselineSection baseline;
    DatasetSection dataset;
    PathsSection paths;

    /// Throws ConfigError on inconsistent or out-of-range settings.
    void validate() const;

    [[nodiscard]] Schedule make_bridge_schedule() const { return make_schedule(schedule.K, schedule.beta_max, schedule.beta_min); }
    [[nodiscard]] DdpmSchedule make_baseline_schedule() const {
        return cddpm_schedule(baseline.steps, baseline.beta_start, baseline.beta_end);
    }
    [[nodiscard]] ArchDescriptor baseline_arch() const {
        ArchDescriptor a = model;
        a.in_channels = 2;
        return a;
    }
    [[nodiscard]] TrainConfig train_config(Objective objective) const {
        TrainConfig t;
        t.iterations = objective == Objective::bridge ? training.iterations : baseline.iterations;
        t.batch_size = training.batch_size;
        t.micro_batch = training.micro_batch;
        t.learning_rate = objective == Objective::bridge ? training.learning_rate : baseline.learning_rate;
        t.seed = derive_seed(seed, objective == Objective::bridge ? 0x7472ull : 0x6464ull);
        t.ema_decay = training.ema_decay;
        t.log_every = training.log_every;
        t.objective = objective;
        return t;
    }
};

namespace config_detail {

inline std::string format_value(int v) { return std::to_string(v); }
inline std::string format_value(std::uint64_t v) { return std::to_string(v); }
inline std::string format_value(bool v) { return v ? "true" : "false"; }
inline std::string format_value(const std::string& v) { return v; }
/// Shortest text that parses back to the same double.
inline std::string format_value(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}
inline std::string format_value(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
    std::istringstream in(text);
    T v{};
    if (!(in >> v) || !(in >> std::ws).eof()) throw ConfigError("config: " + key + ": cannot parse '" + text + "'");
    return v;
}

inline void parse_value(const std::string& key, const std::string& text, int& out) {
    out = parse_number<int>(key, text);
}
inline void parse_value(const std::string& key, const std::string& text, double& out) {
    out = parse_number<double>(key, text);
}
inline void parse_value(const std::string& key, const std::string& text, std::uint64_t& out) {
    if (!text.empty() && text[0] == '-') throw ConfigError("config: " + key + ": must be non-negative");
    out = parse_number<std::uint64_t>(key, text);
}
inline void parse_value(const std::string& key, const std::string& text, bool& out) {
    if (text == "true" || text == "1" || text == "yes") out = true;
    else if (text == "false" || text == "0" || text == "no") out = false;
    else throw ConfigError("config: " + key + ": expected true or false, got '" + text + "'");
}
inline void parse_value(const std::string&, const std::string& text, std::string& out) { out = text; }
inline void parse_value(const std::string& key, const std::string& text, std::vector<int>& out) {
    out.clear();
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_number<int>(key, trim(item)));
    if (out.empty()) throw ConfigError("config: " + key + ": empty list");
}

/// Visits every (section, key, field) binding in a fixed order.
template <class Visitor>
void visit_fields(ExperimentConfig& c, Visitor&& v) {
    v("experiment", "version", c.version);
    v("experiment", "seed", c.seed);

    auto& p = c.phantom;
    v("phantom", "width", p.width);
    v("phantom", "height", p.height);
    v("phantom", "spacing", p.spacing);
    v("phantom", "mu_water", p.mu_water);
    v("phantom", "fov_radius", p.fov_radius);
    v("phantom", "body_a_min", p.body_a_min);
    v("phantom", "body_a_max", p.body_a_max);
    v("phantom", "body_b_min", p.body_b_min);
    v("phantom", "body_b_max", p.body_b_max);
    v("phantom", "body_center_jitter", p.body_center_jitter);
    v("phantom", "body_rotation_max", p.body_rotation_max);
    v("phantom", "body_delta_hu", p.body_delta_hu);
    v("phantom", "body_delta_jitter", p.body_delta_jitter);
    v("phantom", "interior_min", p.interior_min);
    v("phantom", "interior_max", p.interior_max);
    v("phantom", "interior_axis_min", p.interior_axis_min);
    v("phantom", "interior_axis_max", p.interior_axis_max);
    v("phantom", "interior_delta_min", p.interior_delta_min);
    v("phantom", "interior_delta_max", p.interior_delta_max);
    v("phantom", "bed_enabled", p.bed_enabled);
    v("phantom", "bed_gap", p.bed_gap);
    v("phantom", "bed_thickness", p.bed_thickness);
    v("phantom", "bed_half_width", p.bed_half_width);
    v("phantom", "bed_delta_hu", p.bed_delta_hu);

    auto& g = c.geometry;
    v("geometry", "n_angles", g.n_angles);
    v("geometry", "angular_range", g.angular_range);
    v("geometry", "n_channels", g.n_channels);
    v("geometry", "channel_spacing", g.channel_spacing);
    v("geometry", "fov_radius", g.fov_radius);
    v("geometry", "grid_width", g.grid.width);
    v("geometry", "grid_height", g.grid.height);
    v("geometry", "grid_spacing", g.grid.spacing);

    v("noise", "enabled", c.noise.enabled);
    v("noise", "i0", c.noise.i0);

    v("wce", "mu_water", c.wce.mu_water);
    v("wce", "slope_window", c.wce.slope_window);
    v("wce", "transition_blend", c.wce.transition_blend);

    v("schedule", "K", c.schedule.K);
    v("schedule", "beta_max", c.schedule.beta_max);
    v("schedule", "beta_min", c.schedule.beta_min);

    auto& m = c.model;
    v("model", "levels", m.levels);
    v("model", "base_channels", m.base_channels);
    v("model", "kernel", m.kernel);
    v("model", "in_channels", m.in_channels);
    v("model", "out_channels", m.out_channels);
    v("model", "time_dim", m.time_dim);
    v("model", "time_base", m.time_base);
    v("model", "groups", m.groups);
    v("model", "blocks_per_level", m.blocks_per_level);
    v("model", "group_norm", m.group_norm);

    auto& t = c.training;
    v("training", "iterations", t.iterations);
    v("training", "batch_size", t.batch_size);
    v("training", "micro_batch", t.micro_batch);
    v("training", "learning_rate", t.learning_rate);
    v("training", "ema_decay", t.ema_decay);
    v("training", "log_every", t.log_every);
    v("training", "checkpoint_every", t.checkpoint_every);

    auto& s = c.sampling;
    v("sampling", "nfe", s.nfe);
    v("sampling", "nfe_grid", s.nfe_grid);
    v("sampling", "uncertainty_seeds", s.uncertainty_seeds);
    v("sampling", "uncertainty_nfe", s.uncertainty_nfe);
    v("sampling", "bench_repetitions", s.bench_repetitions);

    auto& b = c.baseline;
    v("baseline", "steps", b.steps);
    v("baseline", "beta_start", b.beta_start);
    v("baseline", "beta_end", b.beta_end);
    v("baseline", "iterations", b.iterations);
    v("baseline", "learning_rate", b.learning_rate);

    v("dataset", "n_train", c.dataset.n_train);
    v("dataset", "n_val", c.dataset.n_val);
    v("dataset", "n_test", c.dataset.n_test);

    v("paths", "data_dir", c.paths.data_dir);
    v("paths", "run_dir", c.paths.run_dir);
}

}  // namespace config_detail

inline void ExperimentConfig::validate() const {
    if (version != kConfigVersion)
        throw ConfigError("config: unsupported version " + std::to_string(version) + " (expected " +
                          std::to_string(kConfigVersion) + ")");
    auto wrap = [](auto&& fn) {
        try {
            fn();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("config: ") + e.what());
        }
    };
    phantom.validate();
    wrap([&] { geometry.validate(); });
    wrap([&] { wce.validate(); });
    wrap([&] { model.validate(); });
    wrap([&] { (void)make_bridge_schedule(); });
    wrap([&] { (void)make_baseline_schedule(); });
    if (!(Grid{phantom.width, phantom.height, phantom.spacing} == geometry.grid))
        throw ConfigError("config: phantom grid and geometry grid disagree");
    if (phantom.fov_radius != geometry.fov_radius) throw ConfigError("config: phantom and geometry fov_radius disagree");
    if (phantom.mu_water != wce.mu_water) throw ConfigError("config: phantom and wce mu_water disagree");
    if (model.in_channels != 1 || model.out_channels != 1)
        throw ConfigError("config: the bridge denoiser uses one input and one output channel");
    if (!(noise.i0 > 0.0)) throw ConfigError("config: noise.i0 must be positive");
    wrap([&] { train_config(Objective::bridge).validate(); });
    wrap([&] { train_config(Objective::cddpm).validate(); });
    if (training.checkpoint_every < 1) throw ConfigError("config: training.checkpoint_every must be positive");
    for (int nfe : sampling.nfe_grid)
        if (nfe < 1 || nfe > schedule.K) throw ConfigError("config: nfe_grid entries must lie in [1, K]");
    if (sampling.nfe < 1 || sampling.nfe > schedule.K || sampling.uncertainty_nfe < 1 || sampling.uncertainty_nfe > schedule.K)
        throw ConfigError("config: nfe must lie in [1, K]");
    if (sampling.uncertainty_seeds < 2) throw ConfigError("config: uncertainty_seeds must be >= 2");
    if (sampling.bench_repetitions < 1) throw ConfigError("config: bench_repetitions must be positive");
    if (dataset.n_train < 1 || dataset.n_val < 0 || dataset.n_test < 1)
        throw ConfigError("config: dataset needs n_train >= 1, n_val >= 0, n_test >= 1");
}

/// Parses INI text on top of the defaults and validates the result.
inline ExperimentConfig parse_config(const std::string& text, const std::string& origin = "<config>") {
    boost::property_tree::ptree tree;
    try {
        std::istringstream in(text);
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(origin + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
    }
    ExperimentConfig cfg;
    std::set<std::string> known, sections;
    config_detail::visit_fields(cfg, [&](const char* section, const char* key, auto& field) {
        const std::string path = std::string(section) + "." + key;
        known.insert(path);
        sections.insert(section);
        if (auto v = tree.get_optional<std::string>(boost::property_tree::ptree::path_type(path, '.')))
            config_detail::parse_value(path, config_detail::trim(*v), field);
    });
    for (const auto& [section, body] : tree) {
        if (!sections.count(section)) {
            if (body.empty() && !body.data().empty())
                throw ConfigError(origin + ": key '" + section + "' outside of any section");
            throw ConfigError(origin + ": unknown section [" + section + "]");
        }
        for (const auto& [key, _] : body)
            if (!known.count(section + "." + key)) throw ConfigError(origin + ": unknown key " + section + "." + key);
    }
    cfg.validate();
    return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path.string() + ": cannot open config");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.string());
}

/// Renders every setting; parse_config(dump_config(c)) reproduces c.
inline std::string dump_config(const ExperimentConfig& cfg) {
    ExperimentConfig copy = cfg;
    std::string out;
    std::string current;
    config_detail::visit_fields(copy, [&](const char* section, const char* key, auto& field) {
        if (current != section) {
            out += (current.empty() ? "[" : "\n[") + std::string(section) + "]\n";
            current = section;
        }
        out += std::string(key) + " = " + config_detail::format_value(field) + "\n";
    });
    return out;
}

}  // namespace bridgefov
