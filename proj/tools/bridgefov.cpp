#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "bridgefov/harness.hpp"

namespace fs = std::filesystem;
using namespace bridgefov;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "Experiment config file (INI); defaults apply when omitted");
    cmd->add_option("--seed", c.seed, "Master seed, overrides [experiment] seed");
    cmd->add_option("--out", c.out, "Output directory");
}

ExperimentConfig resolve_config(const Common& c) {
    ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    cfg.validate();
    return cfg;
}

fs::path out_dir(const Common& c, const std::string& fallback) { return c.out.empty() ? fs::path(fallback) : fs::path(c.out); }

void print_metrics(const std::vector<harness::MetricRow>& rows) {
    std::cout << harness::kMetricsColumns << "\n";
    for (const auto& r : rows) std::cout << harness::metric_line(r) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"bridgefov: limited-FOV CT extension with a Gaussian image-to-image bridge"};
    app.require_subcommand(1);

    Common common;
    std::string data, checkpoint, baseline_checkpoint, split = "test";
    std::optional<int> nfe, n_train, n_val, n_test, iterations;
    std::vector<int> nfe_list;
    int index = 0;
    std::optional<int> n_seeds;
    bool baseline = false;

    auto* gen = app.add_subcommand("generate", "Simulate phantom pairs and write a dataset manifest");
    add_common(gen, common);
    gen->add_option("--n-train", n_train, "Override [dataset] n_train");
    gen->add_option("--n-val", n_val, "Override [dataset] n_val");
    gen->add_option("--n-test", n_test, "Override [dataset] n_test");

    auto* trn = app.add_subcommand("train", "Train the denoiser on the train split (resumes from --out)");
    add_common(trn, common);
    trn->add_option("--data", data, "Dataset directory or manifest.csv")->required();
    trn->add_option("--iterations", iterations, "Override the iteration count");
    trn->add_flag("--baseline", baseline, "Train the conditional DDPM baseline instead of the bridge");

    auto* smp = app.add_subcommand("sample", "Run the bridge sampler over a split and score it");
    add_common(smp, common);
    smp->add_option("--checkpoint", checkpoint, "Bridge checkpoint")->required();
    smp->add_option("--data", data, "Dataset directory or manifest.csv")->required();
    smp->add_option("--split", split, "train, val or test");
    smp->add_option("--nfe", nfe, "Denoiser evaluations (default [sampling] nfe)");

    auto* swp = app.add_subcommand("nfe-sweep", "Aggregate metrics and timing per NFE on the test split");
    add_common(swp, common);
    swp->add_option("--checkpoint", checkpoint, "Bridge checkpoint")->required();
    swp->add_option("--data", data, "Dataset directory or manifest.csv")->required();
    swp->add_option("--nfe", nfe_list, "NFE values (default [sampling] nfe_grid)")->delimiter(',');

    auto* bch = app.add_subcommand("bench", "Median per-image inference time of the bridge and the baseline");
    add_common(bch, common);
    bch->add_option("--checkpoint", checkpoint, "Bridge checkpoint")->required();
    bch->add_option("--baseline-checkpoint", baseline_checkpoint, "Baseline checkpoint (optional)");
    bch->add_option("--data", data, "Dataset directory or manifest.csv")->required();

    auto* unc = app.add_subcommand("uncertainty", "Pixelwise spread over sampler seeds for one test input");
    add_common(unc, common);
    unc->add_option("--checkpoint", checkpoint, "Bridge checkpoint")->required();
    unc->add_option("--data", data, "Dataset directory or manifest.csv")->required();
    unc->add_option("--index", index, "Test pair index");
    unc->add_option("--nfe", nfe, "Denoiser evaluations (default [sampling] uncertainty_nfe)");
    unc->add_option("--seeds", n_seeds, "Number of seeds (default [sampling] uncertainty_seeds)");

    auto* evb = app.add_subcommand("eval-baselines", "Score plain FBP and WCE on the test split");
    add_common(evb, common);
    evb->add_option("--data", data, "Dataset directory or manifest.csv")->required();

    auto* dump = app.add_subcommand("config-dump", "Print the effective configuration");
    add_common(dump, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        ExperimentConfig cfg = resolve_config(common);
        if (*dump) {
            const std::string text = dump_config(cfg);
            if (common.out.empty()) std::cout << text;
            else io::write_file(fs::path(common.out) / "config.ini", text);
            return 0;
        }
        if (*gen) {
            if (n_train) cfg.dataset.n_train = *n_train;
            if (n_val) cfg.dataset.n_val = *n_val;
            if (n_test) cfg.dataset.n_test = *n_test;
            cfg.validate();
            const auto dir = out_dir(common, cfg.paths.data_dir);
            const auto m = harness::cmd_generate(cfg, dir);
            io::write_file(dir / "config.ini", dump_config(cfg));
            std::cout << "wrote " << m.entries.size() << " pairs to " << (dir / "manifest.csv").string() << "\n";
            return 0;
        }
        const auto manifest = harness::load_manifest(data);
        if (*trn) {
            const Objective obj = baseline ? Objective::cddpm : Objective::bridge;
            if (iterations) (baseline ? cfg.baseline.iterations : cfg.training.iterations) = *iterations;
            cfg.validate();
            const auto dir = out_dir(common, (fs::path(cfg.paths.run_dir) / harness::objective_name(obj)).string());
            io::write_file(dir / "config.ini", dump_config(cfg));
            const auto result = harness::cmd_train(cfg, manifest, dir, obj, [](const LossPoint& p) {
                std::printf("iteration %lld loss %.6g\n", static_cast<long long>(p.iteration), p.loss);
                std::fflush(stdout);
            });
            std::cout << "checkpoint " << result.checkpoint.string() << " at iteration " << result.iterations_done << "\n";
            return 0;
        }
        if (*smp) {
            const int n = nfe.value_or(cfg.sampling.nfe);
            const auto dir = out_dir(common, (fs::path(cfg.paths.run_dir) / ("sample_nfe" + std::to_string(n))).string());
            const auto out = harness::cmd_sample(cfg, checkpoint, manifest, harness::parse_split(split), n, cfg.seed, dir);
            print_metrics(out.aggregate);
            return 0;
        }
        if (*swp) {
            const auto list = nfe_list.empty() ? cfg.sampling.nfe_grid : nfe_list;
            const auto dir = out_dir(common, cfg.paths.run_dir);
            harness::cmd_nfe_sweep(cfg, checkpoint, manifest, list, cfg.seed, dir);
            std::cout << io::read_file(dir / "nfe_sweep.csv");
            return 0;
        }
        if (*bch) {
            const auto dir = out_dir(common, cfg.paths.run_dir);
            std::optional<fs::path> base;
            if (!baseline_checkpoint.empty()) base = baseline_checkpoint;
            harness::cmd_bench(cfg, checkpoint, base, manifest, dir);
            std::cout << io::read_file(dir / "bench.csv");
            return 0;
        }
        if (*unc) {
            const auto dir = out_dir(common, cfg.paths.run_dir);
            harness::cmd_uncertainty(cfg, checkpoint, manifest, index, nfe.value_or(cfg.sampling.uncertainty_nfe),
                                     n_seeds.value_or(cfg.sampling.uncertainty_seeds), cfg.seed, dir);
            std::cout << io::read_file(dir / "uncertainty.csv");
            return 0;
        }
        if (*evb) {
            print_metrics(harness::cmd_eval_baselines(cfg, manifest, out_dir(common, cfg.paths.run_dir)));
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kExitIo;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
