#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bridgefov/bridge.hpp"
#include "bridgefov/config.hpp"
#include "bridgefov/denoiser.hpp"
#include "bridgefov/io.hpp"
#include "bridgefov/metrics.hpp"
#include "bridgefov/parallel.hpp"
#include "bridgefov/phantom.hpp"
#include "bridgefov/projector.hpp"
#include "bridgefov/recon.hpp"
#include "bridgefov/train.hpp"

namespace bridgefov::harness {

namespace fs = std::filesystem;

inline constexpr const char* kManifestHeader = "# bridgefov-manifest v1";
inline constexpr const char* kMetricsHeader = "# bridgefov-metrics v1";
inline constexpr const char* kMetricsColumns = "method,region,rmse_hu,psnr_db,ssim,n_pixels,seed";

// ---------------------------------------------------------------- dataset

enum class Split { train, val, test };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

inline Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw ConfigError("unknown split '" + s + "' (expected train, val or test)");
}

struct PairEntry {
    std::string id;
    Split split = Split::train;
    std::uint64_t seed = 0;
    // Paths relative to the manifest directory.
    std::string x0, x1, sinogram, sinogram_mask;
};

struct DatasetManifest {
    fs::path root;  // directory holding manifest.csv
    std::vector<PairEntry> entries;

    [[nodiscard]] std::vector<const PairEntry*> split(Split s) const {
        std::vector<const PairEntry*> out;
        for (const auto& e : entries)
            if (e.split == s) out.push_back(&e);
        return out;
    }
    [[nodiscard]] fs::path resolve(const std::string& rel) const { return root / rel; }
};

/// Per-item seed; independent of how many items the other splits hold.
inline std::uint64_t item_seed(std::uint64_t master, Split s, int index) {
    return derive_seed(master, 0x6974656dull, static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(index));
}

/// Everything the simulation produces for one phantom.
struct SimulatedPair {
    Image x0_hu;         // rasterized ground truth
    Image x1_hu;         // WCE reconstruction of the truncated, noisy scan
    Sinogram measured;   // truncated (and noisy) sinogram
};

inline SimulatedPair simulate_pair(const ExperimentConfig& cfg, std::uint64_t seed) {
    SimulatedPair out;
    const Phantom ph = sample_phantom(seed, cfg.phantom);
    out.x0_hu = rasterize(ph, cfg.phantom.width, cfg.phantom.height, cfg.phantom.spacing);
    const Sinogram full = forward_project(hu_to_mu(out.x0_hu, cfg.phantom.mu_water), cfg.geometry);
    out.measured = add_noise(truncate(full, cfg.geometry.fov_radius), cfg.noise, derive_seed(seed, 0x6e6f6973ull));
    out.x1_hu = reconstruct_wce(out.measured, cfg.geometry, cfg.wce);
    return out;
}

inline std::string csv_escape_check(const std::string& field) {
    if (field.find_first_of(",\n\"") != std::string::npos)
        throw IoError("manifest field contains a reserved character: " + field);
    return field;
}

inline void write_manifest(const DatasetManifest& m) {
    std::ostringstream out;
    out << kManifestHeader << "\n"
        << "id,split,seed,x0,x1,sinogram,sinogram_mask\n";
    for (const auto& e : m.entries)
        out << csv_escape_check(e.id) << ',' << split_name(e.split) << ',' << e.seed << ',' << csv_escape_check(e.x0) << ','
            << csv_escape_check(e.x1) << ',' << csv_escape_check(e.sinogram) << ',' << csv_escape_check(e.sinogram_mask)
            << '\n';
    io::write_file(m.root / "manifest.csv", out.str());
}

/// Reads a manifest; checks ids are unique and every referenced file exists.
inline DatasetManifest load_manifest(const fs::path& path_or_dir) {
    const fs::path path = fs::is_directory(path_or_dir) ? path_or_dir / "manifest.csv" : path_or_dir;
    std::istringstream in(io::read_file(path));
    DatasetManifest m;
    m.root = path.parent_path();
    std::string line;
    if (!std::getline(in, line) || line != kManifestHeader) throw IoError(path.string() + ": missing manifest header");
    if (!std::getline(in, line) || line != "id,split,seed,x0,x1,sinogram,sinogram_mask")
        throw IoError(path.string() + ": unexpected manifest columns");
    std::set<std::string> ids;
    int lineno = 2;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string item;
        while (std::getline(ss, item, ',')) f.push_back(item);
        if (f.size() != 7) throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 7 fields");
        PairEntry e;
        e.id = f[0];
        try {
            e.split = parse_split(f[1]);
            e.seed = std::stoull(f[2]);
        } catch (const std::exception&) {
            throw IoError(path.string() + ":" + std::to_string(lineno) + ": bad split or seed");
        }
        e.x0 = f[3];
        e.x1 = f[4];
        e.sinogram = f[5];
        e.sinogram_mask = f[6];
        if (!ids.insert(e.id).second) throw IoError(path.string() + ": duplicate id " + e.id);
        for (const auto* rel : {&e.x0, &e.x1, &e.sinogram, &e.sinogram_mask})
            if (!fs::exists(m.root / *rel)) throw IoError((m.root / *rel).string() + ": listed in manifest but missing");
        m.entries.push_back(std::move(e));
    }
    return m;
}

/// Simulates every pair of every split and writes images, sinograms and the manifest under out_dir.
inline DatasetManifest cmd_generate(const ExperimentConfig& cfg, const fs::path& out_dir) {
    DatasetManifest m;
    m.root = out_dir;
    for (auto [split, n] : {std::pair{Split::train, cfg.dataset.n_train}, std::pair{Split::val, cfg.dataset.n_val},
                            std::pair{Split::test, cfg.dataset.n_test}}) {
        for (int i = 0; i < n; ++i) {
            PairEntry e;
            char id[32];
            std::snprintf(id, sizeof id, "%s_%05d", split_name(split), i);
            e.id = id;
            e.split = split;
            e.seed = item_seed(cfg.seed, split, i);
            const std::string base = std::string(split_name(split)) + "/" + e.id;
            e.x0 = base + "_x0.bfov";
            e.x1 = base + "_x1.bfov";
            e.sinogram = base + "_sino.bfov";
            e.sinogram_mask = base + "_sinomask.bfov";
            m.entries.push_back(std::move(e));
        }
    }
    for (auto s : {Split::train, Split::val, Split::test}) fs::create_directories(out_dir / split_name(s));
    parallel_for(m.entries.size(), [&](std::size_t i) {
        const auto& e = m.entries[i];
        const SimulatedPair p = simulate_pair(cfg, e.seed);
        io::save_image(m.resolve(e.x0), p.x0_hu);
        io::save_image(m.resolve(e.x1), p.x1_hu);
        io::save_sinogram(m.resolve(e.sinogram), m.resolve(e.sinogram_mask), p.measured);
    });
    write_manifest(m);
    return m;
}

/// Loads a split as bridge pairs in model units.
inline std::vector<BridgePair> load_pairs(const DatasetManifest& m, Split s) {
    const auto entries = m.split(s);
    std::vector<BridgePair> out(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i)
        out[i] = {hu_to_model(io::load_image(m.resolve(entries[i]->x0))), hu_to_model(io::load_image(m.resolve(entries[i]->x1)))};
    return out;
}

// ---------------------------------------------------------------- metrics CSV

struct MetricRow {
    std::string id;  // empty for aggregate rows
    std::string method;
    MetricReport report;
    std::uint64_t seed = 0;
};

inline std::string metric_line(const MetricRow& r) {
    return r.method + "," + region_name(r.report.region) + "," + format_metric(r.report.rmse_hu) + "," +
           format_metric(r.report.psnr_db) + "," + format_metric(r.report.ssim) + "," + std::to_string(r.report.n_pixels) +
           "," + std::to_string(r.seed);
}

/// Aggregate file: versioned comment, then the fixed column order.
inline void write_metrics(const fs::path& path, const std::vector<MetricRow>& rows) {
    std::string out = std::string(kMetricsHeader) + "\n" + kMetricsColumns + "\n";
    for (const auto& r : rows) out += metric_line(r) + "\n";
    io::write_file(path, out);
}

/// Per-image file: an id column ahead of the fixed columns.
inline void write_metrics_per_image(const fs::path& path, const std::vector<MetricRow>& rows) {
    std::string out = std::string(kMetricsHeader) + "\nid," + kMetricsColumns + "\n";
    for (const auto& r : rows) out += r.id + "," + metric_line(r) + "\n";
    io::write_file(path, out);
}

inline constexpr Region kRegions[] = {Region::full, Region::inside_fov, Region::outside_fov};

/// Mean of per-image metrics per region; n_pixels is the total over images.
inline std::vector<MetricRow> aggregate(const std::vector<MetricRow>& per_image, const std::string& method, std::uint64_t seed) {
    std::vector<MetricRow> out;
    for (Region region : kRegions) {
        MetricRow agg{"", method, {}, seed};
        agg.report.region = region;
        int n = 0;
        for (const auto& r : per_image) {
            if (r.report.region != region || r.method != method) continue;
            agg.report.rmse_hu += r.report.rmse_hu;
            agg.report.psnr_db += r.report.psnr_db;
            agg.report.ssim += r.report.ssim;
            agg.report.n_pixels += r.report.n_pixels;
            ++n;
        }
        if (n == 0) continue;
        agg.report.rmse_hu /= n;
        agg.report.psnr_db /= n;
        agg.report.ssim /= n;
        out.push_back(agg);
    }
    return out;
}

inline const MetricReport& find_region(const std::vector<MetricRow>& rows, const std::string& method, Region region) {
    for (const auto& r : rows)
        if (r.method == method && r.report.region == region) return r.report;
    throw std::invalid_argument("no metrics for " + method + "/" + region_name(region));
}

// ---------------------------------------------------------------- training

struct TrainOutputs {
    fs::path checkpoint;
    std::int64_t iterations_done = 0;
    std::vector<LossPoint> log;
};

inline const char* objective_name(Objective o) { return o == Objective::bridge ? "i2sb" : "cddpm"; }

/// Reads "iteration,loss" rows written by a previous run.
inline std::vector<LossPoint> read_loss_csv(const fs::path& path) {
    std::vector<LossPoint> out;
    if (!fs::exists(path)) return out;
    std::istringstream in(io::read_file(path));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("iteration", 0) == 0) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw IoError(path.string() + ": malformed loss row");
        out.push_back({std::stoll(line.substr(0, comma)), std::stod(line.substr(comma + 1))});
    }
    return out;
}

inline void write_loss_csv(const fs::path& path, const std::vector<LossPoint>& log) {
    std::ostringstream out;
    out << "# bridgefov-loss v1\niteration,loss\n";
    out.precision(9);
    for (const auto& p : log) out << p.iteration << ',' << p.loss << '\n';
    io::write_file(path, out.str());
}

/// Trains on the train split. Writes loss.csv, model.bfck (+ optimizer.bfop)
/// every checkpoint_every iterations, and picks up from an existing
/// checkpoint in out_dir when one is present.
inline TrainOutputs cmd_train(const ExperimentConfig& cfg, const DatasetManifest& manifest, const fs::path& out_dir,
                              Objective objective = Objective::bridge,
                              const std::function<void(const LossPoint&)>& progress = {}) {
    const auto dataset = load_pairs(manifest, Split::train);
    if (dataset.empty()) throw ConfigError("train: manifest has no train pairs");
    const TrainConfig tc = cfg.train_config(objective);
    const Schedule sched = cfg.make_bridge_schedule();
    const DdpmSchedule ddpm = cfg.make_baseline_schedule();
    const ArchDescriptor arch = objective == Objective::bridge ? cfg.model : cfg.baseline_arch();
    const int steps = objective == Objective::bridge ? sched.K : ddpm.T;

    fs::create_directories(out_dir);
    const fs::path ckpt = out_dir / "model.bfck", opt = out_dir / "optimizer.bfop", loss_path = out_dir / "loss.csv";
    TrainState<float> state{init_params<float>(arch, derive_seed(cfg.seed, 0x696e6974ull, static_cast<int>(objective))), {}, {}, 0};
    std::vector<LossPoint> log;
    if (fs::exists(ckpt) && fs::exists(opt)) {
        io::CheckpointMeta meta;
        auto params = io::load_checkpoint(ckpt, &meta);
        if (!(params.arch == arch) || meta.steps != steps || meta.objective != objective)
            throw ConfigError(ckpt.string() + ": existing checkpoint does not match the configuration");
        state.params = std::move(params);
        io::load_optimizer(opt, state.adam, state.ema);
        state.iteration = meta.iteration;
        for (const auto& p : read_loss_csv(loss_path))
            if (p.iteration <= state.iteration) log.push_back(p);
    }

    // `done` is passed explicitly: the hook fires before train() advances state.iteration
    auto save = [&](std::int64_t done) {
        io::CheckpointMeta meta{steps, objective, done};
        io::save_checkpoint(ckpt, state.params, meta);
        io::save_optimizer(opt, state.adam, state.ema);
        if (!state.ema.empty()) {
            DenoiserParams<float> ema{state.params.arch, state.ema};
            io::save_checkpoint(out_dir / "model_ema.bfck", ema, meta);
        }
        write_loss_csv(loss_path, log);
    };
    TrainHooks hooks;
    hooks.on_log = [&](const LossPoint& p) {
        log.push_back(p);
        if (progress) progress(p);
    };
    hooks.on_iteration = [&](std::int64_t done) {
        if (done % cfg.training.checkpoint_every == 0 || done == tc.iterations) save(done);
    };
    if (state.iteration < tc.iterations) train(state, std::span<const BridgePair>(dataset), sched, &ddpm, tc, hooks);
    else save(state.iteration);
    return {ckpt, state.iteration, log};
}

// ---------------------------------------------------------------- sampling

struct SampleOutputs {
    std::vector<MetricRow> per_image;
    std::vector<MetricRow> aggregate;
    double seconds_per_image = 0.0;
};

inline std::string sample_method(int nfe) { return "i2sb_nfe" + std::to_string(nfe); }

/// Generic sampling evaluation over a split. `estimator(x1_model, item_index)`
/// returns an estimate in model units. When image_dir is set, each estimate is
/// saved as <id>_recon.bfov there.
template <class Estimator>
SampleOutputs evaluate_split(const ExperimentConfig& cfg, const DatasetManifest& manifest, Split split,
                             const std::string& method, std::uint64_t seed, Estimator&& estimator,
                             const std::optional<fs::path>& image_dir = std::nullopt, int workers = worker_count()) {
    const auto entries = manifest.split(split);
    if (entries.empty()) throw ConfigError(std::string("no pairs in split ") + split_name(split));
    const PixelMask fov = fov_mask(cfg.geometry);
    std::vector<std::vector<MetricRow>> rows(entries.size());
    std::vector<double> seconds(entries.size());
    if (image_dir) fs::create_directories(*image_dir);
    parallel_for(
        entries.size(),
        [&](std::size_t i) {
            const Image x0 = io::load_image(manifest.resolve(entries[i]->x0));
            const Image x1 = io::load_image(manifest.resolve(entries[i]->x1));
            const auto t0 = std::chrono::steady_clock::now();
            const Image est = model_to_hu(estimator(hu_to_model(x1), i));
            seconds[i] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            if (image_dir) io::save_image(*image_dir / (entries[i]->id + "_recon.bfov"), est);
            for (Region r : kRegions) rows[i].push_back({entries[i]->id, method, evaluate(est, x0, r, fov), seed});
        },
        workers);
    SampleOutputs out;
    for (auto& r : rows) out.per_image.insert(out.per_image.end(), r.begin(), r.end());
    out.aggregate = aggregate(out.per_image, method, seed);
    double total = 0.0;
    for (double s : seconds) total += s;
    out.seconds_per_image = total / static_cast<double>(entries.size());
    return out;
}

inline SampleOutputs run_bridge_sampling(const ExperimentConfig& cfg, const DenoiserParams<float>& params,
                                         const DatasetManifest& manifest, Split split, int nfe, std::uint64_t seed,
                                         const std::optional<fs::path>& image_dir = std::nullopt,
                                         int workers = worker_count()) {
    const Schedule sched = cfg.make_bridge_schedule();
    auto eps = bridge_eps(params);
    return evaluate_split(
        cfg, manifest, split, sample_method(nfe), seed,
        [&](const Image& x1, std::size_t i) { return sample(eps, x1, sched, SamplerConfig{nfe, derive_seed(seed, i)}); },
        image_dir, workers);
}

inline void require_bridge_checkpoint(const ExperimentConfig& cfg, const DenoiserParams<float>& p, const io::CheckpointMeta& m,
                                      const fs::path& path) {
    if (m.objective != Objective::bridge || !(p.arch == cfg.model) || m.steps != cfg.schedule.K)
        throw ConfigError(path.string() + ": checkpoint does not match the bridge configuration");
}

inline DenoiserParams<float> load_bridge_checkpoint(const ExperimentConfig& cfg, const fs::path& path) {
    io::CheckpointMeta meta;
    auto p = io::load_checkpoint(path, &meta);
    require_bridge_checkpoint(cfg, p, meta, path);
    return p;
}

/// Samples a split at one NFE; writes recon images, metrics.csv and metrics_per_image.csv under out_dir.
inline SampleOutputs cmd_sample(const ExperimentConfig& cfg, const fs::path& checkpoint, const DatasetManifest& manifest,
                                Split split, int nfe, std::uint64_t seed, const fs::path& out_dir) {
    const auto params = load_bridge_checkpoint(cfg, checkpoint);
    auto out = run_bridge_sampling(cfg, params, manifest, split, nfe, seed, out_dir / "images");
    write_metrics(out_dir / "metrics.csv", out.aggregate);
    write_metrics_per_image(out_dir / "metrics_per_image.csv", out.per_image);
    return out;
}

struct SweepRow {
    int nfe = 0;
    MetricReport full, outside;
    double seconds_per_image = 0.0;
};

/// One row per NFE: aggregate metrics and mean wall-clock per image.
/// Timing runs single-worker so the per-image numbers are comparable.
template <class EpsFn>
std::vector<SweepRow> nfe_sweep(const ExperimentConfig& cfg, EpsFn&& eps, const DatasetManifest& manifest, Split split,
                                const std::vector<int>& nfes, std::uint64_t seed) {
    const Schedule sched = cfg.make_bridge_schedule();
    std::vector<SweepRow> rows;
    for (int nfe : nfes) {
        auto out = evaluate_split(
            cfg, manifest, split, sample_method(nfe), seed,
            [&](const Image& x1, std::size_t i) { return sample(eps, x1, sched, SamplerConfig{nfe, derive_seed(seed, i)}); },
            std::nullopt, 1);
        rows.push_back({nfe, find_region(out.aggregate, sample_method(nfe), Region::full),
                        find_region(out.aggregate, sample_method(nfe), Region::outside_fov), out.seconds_per_image});
    }
    return rows;
}

inline void write_sweep_csv(const fs::path& path, const std::vector<SweepRow>& rows) {
    std::string out = "# bridgefov-nfe-sweep v1\nnfe,rmse_hu,psnr_db,ssim,rmse_outside_fov_hu,seconds_per_image\n";
    for (const auto& r : rows)
        out += std::to_string(r.nfe) + "," + format_metric(r.full.rmse_hu) + "," + format_metric(r.full.psnr_db) + "," +
               format_metric(r.full.ssim) + "," + format_metric(r.outside.rmse_hu) + "," + format_metric(r.seconds_per_image) + "\n";
    io::write_file(path, out);
}

inline std::vector<SweepRow> cmd_nfe_sweep(const ExperimentConfig& cfg, const fs::path& checkpoint,
                                           const DatasetManifest& manifest, const std::vector<int>& nfes,
                                           std::uint64_t seed, const fs::path& out_dir) {
    const auto params = load_bridge_checkpoint(cfg, checkpoint);
    auto rows = nfe_sweep(cfg, bridge_eps(params), manifest, Split::test, nfes, seed);
    write_sweep_csv(out_dir / "nfe_sweep.csv", rows);
    return rows;
}

// ---------------------------------------------------------------- benchmark

struct BenchRow {
    std::string method;
    int steps = 0;  // denoiser calls per image
    double median_seconds = 0.0;
    int repetitions = 0;
};

template <class Fn>
double median_seconds(Fn&& fn, int repetitions) {
    std::vector<double> t(repetitions);
    for (auto& s : t) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    std::sort(t.begin(), t.end());
    const int n = repetitions;
    return n % 2 ? t[n / 2] : 0.5 * (t[n / 2 - 1] + t[n / 2]);
}

/// Median per-image inference wall-clock on the first test input, single worker:
/// the bridge at NFE=1 and at the largest grid NFE, and the baseline at its full step count.
/// Without a baseline checkpoint the baseline runs on freshly initialized weights
/// (its cost does not depend on the weight values).
inline std::vector<BenchRow> cmd_bench(const ExperimentConfig& cfg, const fs::path& checkpoint,
                                       const std::optional<fs::path>& baseline_checkpoint, const DatasetManifest& manifest,
                                       const fs::path& out_dir) {
    const auto params = load_bridge_checkpoint(cfg, checkpoint);
    DenoiserParams<float> base;
    if (baseline_checkpoint) {
        io::CheckpointMeta meta;
        base = io::load_checkpoint(*baseline_checkpoint, &meta);
        if (meta.objective != Objective::cddpm || !(base.arch == cfg.baseline_arch()) || meta.steps != cfg.baseline.steps)
            throw ConfigError(baseline_checkpoint->string() + ": checkpoint does not match the baseline configuration");
    } else {
        base = init_params<float>(cfg.baseline_arch(), derive_seed(cfg.seed, 0x62656e63ull));
    }
    const auto test = manifest.split(Split::test);
    if (test.empty()) throw ConfigError("bench: manifest has no test pairs");
    const Image x1 = hu_to_model(io::load_image(manifest.resolve(test.front()->x1)));
    const Schedule sched = cfg.make_bridge_schedule();
    const DdpmSchedule ddpm = cfg.make_baseline_schedule();
    const int reps = cfg.sampling.bench_repetitions;
    const int nfe_max = *std::max_element(cfg.sampling.nfe_grid.begin(), cfg.sampling.nfe_grid.end());
    auto eps = bridge_eps(params);
    auto cond = conditional_eps(base);

    std::vector<BenchRow> rows;
    for (int nfe : {1, nfe_max})
        rows.push_back({sample_method(nfe), nfe,
                        median_seconds([&] { (void)sample(eps, x1, sched, SamplerConfig{nfe, cfg.seed}); }, reps), reps});
    rows.push_back({"cddpm", ddpm.T, median_seconds([&] { (void)cddpm_sample(cond, x1, ddpm, cfg.seed); }, reps), reps});

    std::string out = "# bridgefov-bench v1\nmethod,steps,median_seconds,repetitions,ratio_vs_i2sb_nfe1\n";
    for (const auto& r : rows)
        out += r.method + "," + std::to_string(r.steps) + "," + format_metric(r.median_seconds) + "," +
               std::to_string(r.repetitions) + "," + format_metric(r.median_seconds / rows.front().median_seconds) + "\n";
    io::write_file(out_dir / "bench.csv", out);
    return rows;
}

// ---------------------------------------------------------------- uncertainty

struct UncertaintySummary {
    Image mean_hu, std_hu;
    double mean_std_hu = 0.0, max_std_hu = 0.0;
};

/// Pixelwise mean and (population) standard deviation over n_seeds sampler runs on one input.
template <class EpsFn>
UncertaintySummary uncertainty(EpsFn&& eps, const Image& x1_model, const Schedule& sched, int nfe, int n_seeds,
                               std::uint64_t seed) {
    if (n_seeds < 2) throw std::invalid_argument("uncertainty: need at least two seeds");
    const std::size_t n = x1_model.size();
    std::vector<double> s1(n, 0.0), s2(n, 0.0);
    std::vector<Image> runs(n_seeds);
    for (int r = 0; r < n_seeds; ++r)
        runs[r] = model_to_hu(sample(eps, x1_model, sched, SamplerConfig{nfe, derive_seed(seed, r)}));
    // Moments of the offsets from the first run. Identical runs give offsets of
    // exactly zero, whereas summing equal values and dividing can miss by an ulp.
    const Image& ref = runs.front();
    for (int r = 1; r < n_seeds; ++r)
        for (std::size_t i = 0; i < n; ++i) s1[i] += runs[r].values[i] - ref.values[i];
    UncertaintySummary out{Image(x1_model.grid), Image(x1_model.grid)};
    std::vector<double> shift(n);
    for (std::size_t i = 0; i < n; ++i) {
        shift[i] = s1[i] / n_seeds;
        out.mean_hu.values[i] = ref.values[i] + shift[i];
    }
    for (int r = 0; r < n_seeds; ++r)
        for (std::size_t i = 0; i < n; ++i) {
            const double d = (runs[r].values[i] - ref.values[i]) - shift[i];
            s2[i] += d * d;
        }
    for (std::size_t i = 0; i < n; ++i) {
        const double sd = std::sqrt(s2[i] / n_seeds);
        out.std_hu.values[i] = sd;
        out.mean_std_hu += sd / static_cast<double>(n);
        out.max_std_hu = std::max(out.max_std_hu, sd);
    }
    return out;
}

inline UncertaintySummary cmd_uncertainty(const ExperimentConfig& cfg, const fs::path& checkpoint,
                                          const DatasetManifest& manifest, int index, int nfe, int n_seeds,
                                          std::uint64_t seed, const fs::path& out_dir) {
    const auto params = load_bridge_checkpoint(cfg, checkpoint);
    const auto test = manifest.split(Split::test);
    if (index < 0 || index >= static_cast<int>(test.size())) throw ConfigError("uncertainty: test index out of range");
    const Image x1 = hu_to_model(io::load_image(manifest.resolve(test[index]->x1)));
    auto out = uncertainty(bridge_eps(params), x1, cfg.make_bridge_schedule(), nfe, n_seeds, seed);
    io::save_image(out_dir / "uncertainty_mean.bfov", out.mean_hu);
    io::save_image(out_dir / "uncertainty_std.bfov", out.std_hu);
    io::write_file(out_dir / "uncertainty.csv", "# bridgefov-uncertainty v1\nid,nfe,n_seeds,seed,mean_std_hu,max_std_hu\n" +
                                                    test[index]->id + "," + std::to_string(nfe) + "," +
                                                    std::to_string(n_seeds) + "," + std::to_string(seed) + "," +
                                                    format_metric(out.mean_std_hu) + "," + format_metric(out.max_std_hu) + "\n");
    return out;
}

// ---------------------------------------------------------------- non-learned rows

/// Plain FBP and WCE reconstructions of the stored test sinograms against ground truth,
/// clamped to the model window like every other scored output.
inline std::vector<MetricRow> cmd_eval_baselines(const ExperimentConfig& cfg, const DatasetManifest& manifest,
                                                 const fs::path& out_dir) {
    const auto test = manifest.split(Split::test);
    if (test.empty()) throw ConfigError("eval-baselines: manifest has no test pairs");
    const PixelMask fov = fov_mask(cfg.geometry);
    std::vector<std::vector<MetricRow>> rows(test.size());
    parallel_for(test.size(), [&](std::size_t i) {
        const Image x0 = io::load_image(manifest.resolve(test[i]->x0));
        const Sinogram s = io::load_sinogram(manifest.resolve(test[i]->sinogram), manifest.resolve(test[i]->sinogram_mask),
                                             cfg.geometry);
        // scored through the same HU window as the learned outputs
        const Image f = model_to_hu(hu_to_model(fbp(s, cfg.geometry, cfg.wce.mu_water)));
        const Image w = model_to_hu(hu_to_model(reconstruct_wce(s, cfg.geometry, cfg.wce)));
        for (Region r : kRegions) {
            rows[i].push_back({test[i]->id, "fbp", evaluate(f, x0, r, fov), test[i]->seed});
            rows[i].push_back({test[i]->id, "wce", evaluate(w, x0, r, fov), test[i]->seed});
        }
    });
    std::vector<MetricRow> per_image;
    for (auto& r : rows) per_image.insert(per_image.end(), r.begin(), r.end());
    std::vector<MetricRow> agg = aggregate(per_image, "fbp", cfg.seed);
    const auto wce = aggregate(per_image, "wce", cfg.seed);
    agg.insert(agg.end(), wce.begin(), wce.end());
    write_metrics(out_dir / "baselines.csv", agg);
    write_metrics_per_image(out_dir / "baselines_per_image.csv", per_image);
    return agg;
}

}  // namespace bridgefov::harness
