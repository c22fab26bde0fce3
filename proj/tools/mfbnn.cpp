// mfbnn command-line driver.

#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "mfbnn/harness.hpp"

namespace h = mfbnn::harness;
using mfbnn::Matrix;
using mfbnn::Vector;

namespace {

enum Exit { kOk = 0, kAssert = 1, kConfig = 2 };

struct Common {
    std::string config;
    std::string out;
    long long seed = -1;
    bool desk = false;
    int threads = 0;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config, "experiment config (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--out", c.out, "output directory");
    sub->add_option("--seed", c.seed, "base seed override")->check(CLI::NonNegativeNumber);
    sub->add_flag("--desk", c.desk, "desk preset: 5000 steps, widths up to 4096");
    sub->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
}

h::ExperimentConfig resolve(const Common& c, h::ExperimentKind fallback) {
    h::ExperimentConfig cfg;
    if (!c.config.empty()) cfg = h::load_config(c.config);
    else cfg.experiment = fallback;
    if (c.seed >= 0) cfg.base_seed = static_cast<std::uint64_t>(c.seed);
    if (c.desk) cfg.apply_desk();
    if (c.threads > 0) cfg.threads = c.threads;
    if (!c.out.empty()) cfg.output_dir = c.out;
    return cfg;
}

int report(const h::RunRecord& rec, const std::string& out_dir) {
    for (const auto& a : rec.assertions)
        std::cout << (a.pass ? "PASS " : "FAIL ") << a.name << (a.detail.empty() ? "" : "  " + a.detail) << '\n';
    std::cout << "config " << rec.config_hash << "  wall " << std::fixed << std::setprecision(1)
              << rec.wall_clock_seconds << "s  -> " << out_dir << '\n';
    return rec.all_pass() ? kOk : kAssert;
}

int cmd_train(const Common& c, int width) {
    auto cfg = resolve(c, h::ExperimentKind::posterior_plot);
    if (width > 0) cfg.widths = {width};
    if (cfg.widths.empty()) throw mfbnn::ConfigError("train: no width given");
    h::ensure_dir(cfg.output_dir);
    mfbnn::Rng drng(mfbnn::derive_seed(cfg.base_seed, {0x64617461ULL}));
    const auto ds = h::make_raw_dataset(cfg.datasets.front(), drng, cfg.counterexample_C);
    auto arch = cfg.arch.with_width(cfg.widths.front());
    arch.d_in = static_cast<int>(ds.dim());
    auto tc = cfg.train;
    tc.seed = h::cell_seed(cfg.base_seed, {static_cast<std::uint64_t>(arch.width), 0});
    const auto lik = mfbnn::LikelihoodSpec::gaussian(ds.noise_sigma2);
    const auto res = mfbnn::train(arch, ds, lik, tc);
    h::write_with(cfg.output_dir + "/history.csv", [&](std::ostream& o) { res.history.write_csv(o); });
    h::json post = {{"width", arch.width},
                    {"depth", arch.depth},
                    {"d_in", arch.d_in},
                    {"activation", std::string(mfbnn::to_string(arch.activation.kind))},
                    {"include_final_bias", arch.include_final_bias},
                    {"mu", std::vector<double>(res.q.mu.data(), res.q.mu.data() + res.q.size())},
                    {"log_sigma", std::vector<double>(res.q.log_sigma.data(), res.q.log_sigma.data() + res.q.size())}};
    h::write_text(cfg.output_dir + "/posterior.json", post.dump() + "\n");
    if (ds.dim() == 1) {
        const Matrix G = cfg.grid.points();
        mfbnn::Rng rng(mfbnn::derive_seed(tc.seed, {1}));
        const auto pm = mfbnn::predictive_moments(res.q, arch, G, cfg.predictive_samples, rng);
        h::write_with(cfg.output_dir + "/predictive.csv", [&](std::ostream& o) {
            o << "x,mean,variance\n";
            o.precision(10);
            for (Eigen::Index i = 0; i < G.rows(); ++i) o << G(i, 0) << ',' << pm.mean[i] << ',' << pm.variance[i] << '\n';
        });
    }
    h::write_text(cfg.output_dir + "/metadata.json", h::metadata_block(cfg, 0.0).dump(2) + "\n");
    const auto& last = res.history.records.back();
    std::cout << "trained width " << arch.width << ": elbo " << last.elbo << "  kl " << last.kl << "  -> "
              << cfg.output_dir << '\n';
    return kOk;
}

int cmd_bounds(const Common& c, const std::vector<int>& widths, const std::vector<double>& kls, int depth,
               double x_norm) {
    auto cfg = resolve(c, h::ExperimentKind::bounds_table);
    if (!widths.empty()) cfg.widths = widths;
    if (!kls.empty()) cfg.kl_values = kls;
    if (depth > 0) cfg.arch.depth = depth;
    if (x_norm >= 0.0) cfg.bound_x_norm = x_norm;
    const auto rows = h::bounds_rows(cfg);
    std::cout << std::left << std::setw(16) << "formula" << std::right << std::setw(10) << "M" << std::setw(4) << "L"
              << std::setw(9) << "KL" << std::setw(9) << "|x|" << std::setw(14) << "value" << "  constants\n";
    for (const auto& r : rows) {
        std::cout << std::left << std::setw(16) << mfbnn::to_string(r.formula) << std::right << std::setw(10)
                  << r.inputs.M << std::setw(4) << r.inputs.L << std::setw(9) << r.inputs.kl << std::setw(9)
                  << r.inputs.x_norm << std::setw(14) << std::setprecision(6) << r.value << " ";
        for (const auto& [k, v] : r.constants) std::cout << ' ' << k << '=' << v;
        std::cout << '\n';
    }
    const auto rec = h::run_bounds_table(cfg, cfg.output_dir);
    std::cout << "-> " << cfg.output_dir << "/bounds.csv\n";
    return rec.all_pass() ? kOk : kAssert;
}

int cmd_nngp(const Common& c, const std::vector<double>& xs) {
    auto cfg = resolve(c, h::ExperimentKind::posterior_plot);
    h::ensure_dir(cfg.output_dir);
    Matrix X;
    if (!xs.empty()) {
        X.resize(static_cast<Eigen::Index>(xs.size()), 1);
        for (std::size_t i = 0; i < xs.size(); ++i) X(static_cast<Eigen::Index>(i), 0) = xs[i];
    } else {
        mfbnn::Rng drng(mfbnn::derive_seed(cfg.base_seed, {0x64617461ULL}));
        X = h::make_raw_dataset(cfg.datasets.front(), drng, cfg.counterexample_C).X;
    }
    auto arch = cfg.arch;
    arch.d_in = static_cast<int>(X.cols());
    const auto K = mfbnn::nngp_kernel(arch, X);
    h::write_with(cfg.output_dir + "/kernel.csv", [&](std::ostream& o) { mfbnn::write_kernel_csv(o, K); });
    std::cout << "NNGP kernel " << K.entries.rows() << "x" << K.entries.cols() << " (" << mfbnn::to_string(arch.activation.kind)
              << ", L=" << arch.depth << ") -> " << cfg.output_dir << "/kernel.csv\n";
    if (K.entries.rows() <= 8) std::cout << K.entries << '\n';
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mean-field variational BNNs, NNGP references and width bounds"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(h::kVersion));

    Common common;
    int width = 0;
    auto* train = app.add_subcommand("train", "train one mean-field posterior");
    add_common(train, common);
    train->add_option("--width", width, "hidden width (default: first width in config)");

    auto* sweep = app.add_subcommand("sweep", "run the experiment named in the config");
    add_common(sweep, common);

    std::vector<int> b_widths;
    std::vector<double> b_kls;
    int b_depth = 0;
    double b_xnorm = -1.0;
    auto* bounds = app.add_subcommand("bounds", "tabulate the width bounds");
    add_common(bounds, common);
    bounds->add_option("--M", b_widths, "widths");
    bounds->add_option("--kl", b_kls, "KL values");
    bounds->add_option("--L", b_depth, "hidden layers");
    bounds->add_option("--x-norm", b_xnorm, "input norm");

    std::vector<double> n_xs;
    auto* nngp = app.add_subcommand("nngp", "NNGP kernel matrix for the dataset inputs");
    add_common(nngp, common);
    nngp->add_option("--x", n_xs, "1-d inputs instead of the dataset");

    auto* cx = app.add_subcommand("counterexample", "relu counterexample sweep");
    add_common(cx, common);

    bool inject = false;
    auto* verify = app.add_subcommand("verify", "self-check suite");
    add_common(verify, common);
    verify->add_flag("--inject-fault", inject, "perturb sigma by +10 before the parameter-bound checks");

    auto* plot = app.add_subcommand("plot", "posterior predictive plot against the NNGP");
    add_common(plot, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kConfig;
    }

    try {
        if (train->parsed()) return cmd_train(common, width);
        if (bounds->parsed()) return cmd_bounds(common, b_widths, b_kls, b_depth, b_xnorm);
        if (nngp->parsed()) return cmd_nngp(common, n_xs);
        h::ExperimentConfig cfg;
        if (sweep->parsed()) {
            if (common.config.empty()) throw mfbnn::ConfigError("sweep needs --config");
            cfg = resolve(common, h::ExperimentKind::convergence);
        } else if (cx->parsed()) {
            cfg = resolve(common, h::ExperimentKind::counterexample);
            cfg.experiment = h::ExperimentKind::counterexample;
        } else if (verify->parsed()) {
            cfg = resolve(common, h::ExperimentKind::verify);
            cfg.experiment = h::ExperimentKind::verify;
            cfg.inject_sigma_fault = cfg.inject_sigma_fault || inject;
        } else if (plot->parsed()) {
            cfg = resolve(common, h::ExperimentKind::posterior_plot);
            cfg.experiment = h::ExperimentKind::posterior_plot;
        }
        const auto rec = h::run_experiment(cfg, cfg.output_dir);
        return report(rec, cfg.output_dir);
    } catch (const mfbnn::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const mfbnn::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kAssert;
    }
}
