#pragma once

// Experiment orchestration: JSON configs, sweeps over (dataset, width, seed)
// cells on a worker pool, CSV/SVG/JSON emission and trend assertions.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "mfbnn/mfbnn.hpp"
#include "mfbnn/checks.hpp"
#include "mfbnn/svg.hpp"

#ifndef MFBNN_VERSION
#define MFBNN_VERSION "0.0.0"
#endif

namespace mfbnn::harness {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr const char* kVersion = MFBNN_VERSION;

enum class ExperimentKind { posterior_plot, convergence, rmse_sweep, counterexample, bounds_table, verify };

inline std::string to_string(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::posterior_plot: return "posterior_plot";
        case ExperimentKind::convergence: return "convergence";
        case ExperimentKind::rmse_sweep: return "rmse_sweep";
        case ExperimentKind::counterexample: return "counterexample";
        case ExperimentKind::bounds_table: return "bounds_table";
        case ExperimentKind::verify: return "verify";
    }
    return "?";
}

inline ExperimentKind parse_experiment(const std::string& s) {
    for (auto k : {ExperimentKind::posterior_plot, ExperimentKind::convergence, ExperimentKind::rmse_sweep,
                   ExperimentKind::counterexample, ExperimentKind::bounds_table, ExperimentKind::verify})
        if (to_string(k) == s) return k;
    throw ConfigError("unknown experiment '" + s + "'");
}

struct DatasetSpec {
    std::string kind = "two_points";  // two_points | sine | toy | csv | counterexample
    long n = 100;
    std::string path;
    std::string target;
    std::vector<std::string> drop;
    double noise_sigma2 = 0.025;
    double test_fraction = 0.1;

    std::string label() const {
        if (kind == "csv") {
            auto stem = fs::path(path).stem().string();
            return stem.empty() ? "csv" : stem;
        }
        return kind;
    }
};

struct GridSpec {
    int n = 25;
    double lo = -1.0;
    double hi = 1.0;

    Matrix points() const {
        Matrix G(n, 1);
        for (int i = 0; i < n; ++i) G(i, 0) = n == 1 ? lo : lo + (hi - lo) * i / (n - 1.0);
        return G;
    }
};

struct ExperimentConfig {
    ExperimentKind experiment = ExperimentKind::convergence;
    std::vector<DatasetSpec> datasets{DatasetSpec{}};
    Architecture arch;  // width replaced per cell
    std::vector<int> widths{64, 256, 1024, 4096};
    TrainConfig train = TrainConfig::desk();
    std::vector<int> seeds{0, 1, 2, 3, 4};
    std::uint64_t base_seed = 20240601;
    GridSpec grid;
    int predictive_samples = 1000;
    int elbo_samples = 64;
    int kl_bound_samples = 1000;
    int splits = 5;
    int restarts = 2;
    int eval_points = 100;
    int bootstrap_replicates = 1000;
    int sample_functions = 5;
    int threads = 1;
    bool control = false;
    bool assert_trends = true;
    double dist_tolerance = 5e-2;
    int dist_tolerance_min_width = 1024;
    double plot_tolerance = 0.1;
    std::vector<std::string> activations{"relu", "erf"};  // counterexample fits
    double counterexample_C = 1.0 / 2.34e-3;
    std::vector<double> kl_values{0.5, 1.0, 2.0, 4.0};  // bounds table
    double bound_x_norm = 1.0;
    bool inject_sigma_fault = false;
    std::string output_dir = "out";

    /// steps = 5000 and widths capped at 4096.
    void apply_desk() {
        train.steps = std::min<long>(train.steps, 5000);
        std::vector<int> w;
        for (int m : widths)
            if (m <= 4096) w.push_back(m);
        widths = w;
    }

    void validate() const {
        if (widths.empty() && experiment != ExperimentKind::verify && experiment != ExperimentKind::bounds_table)
            throw ConfigError("width list is empty");
        if (seeds.empty()) throw ConfigError("seed list is empty");
        if (datasets.empty()) throw ConfigError("dataset list is empty");
        for (int m : widths)
            if (m < 1) throw ConfigError("widths must be >= 1");
        if (threads < 1) throw ConfigError("threads must be >= 1");
        if (predictive_samples < 2 || elbo_samples < 2 || kl_bound_samples < 2)
            throw ConfigError("sample counts must be >= 2");
        if (splits < 1 || restarts < 1) throw ConfigError("splits and restarts must be >= 1");
        train.validate();
    }

    json to_json() const;
    static ExperimentConfig from_json(const json& j);

    /// FNV-1a of the canonical JSON form.
    std::string hash() const {
        const std::string s = to_json().dump();
        std::uint64_t h = 1469598103934665603ULL;
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ULL;
        }
        std::ostringstream os;
        os << std::hex << std::setw(16) << std::setfill('0') << h;
        return os.str();
    }
};

namespace detail {

template <class T>
T get(const json& j, const char* key, const T& fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
}

inline void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : keys) ok = ok || it.key() == k;
        if (!ok) throw ConfigError("unknown key '" + it.key() + "' in " + where);
    }
}

inline DatasetSpec dataset_from_json(const json& j) {
    reject_unknown(j, {"kind", "n", "path", "target", "drop", "noise_sigma2", "test_fraction"}, "dataset");
    DatasetSpec d;
    d.kind = get<std::string>(j, "kind", d.kind);
    d.n = get<long>(j, "n", d.n);
    d.path = get<std::string>(j, "path", d.path);
    d.target = get<std::string>(j, "target", d.target);
    d.drop = get<std::vector<std::string>>(j, "drop", d.drop);
    d.noise_sigma2 = get<double>(j, "noise_sigma2", d.noise_sigma2);
    d.test_fraction = get<double>(j, "test_fraction", d.test_fraction);
    if (d.kind != "two_points" && d.kind != "sine" && d.kind != "toy" && d.kind != "csv" &&
        d.kind != "counterexample")
        throw ConfigError("unknown dataset kind '" + d.kind + "'");
    if (d.kind == "csv" && (d.path.empty() || d.target.empty()))
        throw ConfigError("csv datasets need 'path' and 'target'");
    if (!(d.noise_sigma2 > 0.0)) throw ConfigError("noise_sigma2 must be > 0");
    if (!(d.test_fraction >= 0.0 && d.test_fraction < 1.0)) throw ConfigError("test_fraction must lie in [0, 1)");
    return d;
}

inline json dataset_to_json(const DatasetSpec& d) {
    return {{"kind", d.kind}, {"n", d.n}, {"path", d.path}, {"target", d.target}, {"drop", d.drop},
            {"noise_sigma2", d.noise_sigma2}, {"test_fraction", d.test_fraction}};
}

}  // namespace detail

inline json ExperimentConfig::to_json() const {
    json ds = json::array();
    for (const auto& d : datasets) ds.push_back(detail::dataset_to_json(d));
    return {
        {"experiment", to_string(experiment)},
        {"datasets", ds},
        {"arch",
         {{"depth", arch.depth},
          {"activation", std::string(mfbnn::to_string(arch.activation.kind))},
          {"include_final_bias", arch.include_final_bias}}},
        {"widths", widths},
        {"train",
         {{"steps", train.steps},
          {"batch_size", train.batch_size},
          {"learning_rate", train.learning_rate},
          {"momentum", train.momentum},
          {"mc_samples", train.mc_samples},
          {"grad_clip_norm", train.grad_clip_norm},
          {"cosine_restart_period", train.cosine_restart_period},
          {"init_nu", train.init_nu}}},
        {"seeds", seeds},
        {"base_seed", base_seed},
        {"grid", {{"n", grid.n}, {"lo", grid.lo}, {"hi", grid.hi}}},
        {"predictive_samples", predictive_samples},
        {"elbo_samples", elbo_samples},
        {"kl_bound_samples", kl_bound_samples},
        {"splits", splits},
        {"restarts", restarts},
        {"eval_points", eval_points},
        {"bootstrap_replicates", bootstrap_replicates},
        {"sample_functions", sample_functions},
        {"control", control},
        {"assert_trends", assert_trends},
        {"dist_tolerance", dist_tolerance},
        {"dist_tolerance_min_width", dist_tolerance_min_width},
        {"plot_tolerance", plot_tolerance},
        {"activations", activations},
        {"counterexample_C", counterexample_C},
        {"kl_values", kl_values},
        {"bound_x_norm", bound_x_norm},
        {"inject_sigma_fault", inject_sigma_fault},
    };
}

inline ExperimentConfig ExperimentConfig::from_json(const json& j) {
    using detail::get;
    detail::reject_unknown(
        j,
        {"experiment", "dataset", "datasets", "arch", "widths", "train", "seeds", "n_seeds", "base_seed", "grid",
         "predictive_samples", "elbo_samples", "kl_bound_samples", "splits", "restarts", "eval_points",
         "bootstrap_replicates", "sample_functions", "threads", "control", "assert_trends", "dist_tolerance",
         "dist_tolerance_min_width", "plot_tolerance", "activations", "counterexample_C", "kl_values",
         "bound_x_norm", "inject_sigma_fault", "output_dir", "desk"},
        "config");
    ExperimentConfig c;
    c.experiment = parse_experiment(get<std::string>(j, "experiment", to_string(c.experiment)));
    if (j.contains("dataset") && j.contains("datasets")) throw ConfigError("give either 'dataset' or 'datasets'");
    if (j.contains("dataset")) c.datasets = {detail::dataset_from_json(j.at("dataset"))};
    if (j.contains("datasets")) {
        if (!j.at("datasets").is_array()) throw ConfigError("'datasets' must be an array");
        c.datasets.clear();
        for (const auto& d : j.at("datasets")) c.datasets.push_back(detail::dataset_from_json(d));
    }
    if (j.contains("arch")) {
        const auto& a = j.at("arch");
        detail::reject_unknown(a, {"depth", "activation", "include_final_bias"}, "arch");
        c.arch.depth = get<int>(a, "depth", c.arch.depth);
        c.arch.activation = ActivationSpec::make(get<std::string>(a, "activation", "tanh"));
        c.arch.include_final_bias = get<bool>(a, "include_final_bias", c.arch.include_final_bias);
        if (c.arch.depth < 1) throw ConfigError("arch.depth must be >= 1");
    }
    c.widths = get<std::vector<int>>(j, "widths", c.widths);
    if (j.contains("train")) {
        const auto& t = j.at("train");
        detail::reject_unknown(t,
                               {"steps", "batch_size", "learning_rate", "momentum", "mc_samples", "grad_clip_norm",
                                "cosine_restart_period", "init_nu"},
                               "train");
        c.train.steps = get<long>(t, "steps", c.train.steps);
        c.train.batch_size = get<int>(t, "batch_size", c.train.batch_size);
        c.train.learning_rate = get<double>(t, "learning_rate", c.train.learning_rate);
        c.train.momentum = get<double>(t, "momentum", c.train.momentum);
        c.train.mc_samples = get<int>(t, "mc_samples", c.train.mc_samples);
        c.train.grad_clip_norm = get<double>(t, "grad_clip_norm", c.train.grad_clip_norm);
        c.train.cosine_restart_period = get<long>(t, "cosine_restart_period", c.train.cosine_restart_period);
        c.train.init_nu = get<double>(t, "init_nu", c.train.init_nu);
    }
    if (j.contains("seeds") && j.contains("n_seeds")) throw ConfigError("give either 'seeds' or 'n_seeds'");
    c.seeds = get<std::vector<int>>(j, "seeds", c.seeds);
    if (j.contains("n_seeds")) {
        const int n = get<int>(j, "n_seeds", 0);
        if (n < 1) throw ConfigError("n_seeds must be >= 1");
        c.seeds.resize(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) c.seeds[static_cast<std::size_t>(i)] = i;
    }
    c.base_seed = get<std::uint64_t>(j, "base_seed", c.base_seed);
    if (j.contains("grid")) {
        const auto& g = j.at("grid");
        detail::reject_unknown(g, {"n", "lo", "hi"}, "grid");
        c.grid.n = get<int>(g, "n", c.grid.n);
        c.grid.lo = get<double>(g, "lo", c.grid.lo);
        c.grid.hi = get<double>(g, "hi", c.grid.hi);
        if (c.grid.n < 1) throw ConfigError("grid.n must be >= 1");
    }
    c.predictive_samples = get<int>(j, "predictive_samples", c.predictive_samples);
    c.elbo_samples = get<int>(j, "elbo_samples", c.elbo_samples);
    c.kl_bound_samples = get<int>(j, "kl_bound_samples", c.kl_bound_samples);
    c.splits = get<int>(j, "splits", c.splits);
    c.restarts = get<int>(j, "restarts", c.restarts);
    c.eval_points = get<int>(j, "eval_points", c.eval_points);
    c.bootstrap_replicates = get<int>(j, "bootstrap_replicates", c.bootstrap_replicates);
    c.sample_functions = get<int>(j, "sample_functions", c.sample_functions);
    c.threads = get<int>(j, "threads", c.threads);
    c.control = get<bool>(j, "control", c.control);
    c.assert_trends = get<bool>(j, "assert_trends", c.assert_trends);
    c.dist_tolerance = get<double>(j, "dist_tolerance", c.dist_tolerance);
    c.dist_tolerance_min_width = get<int>(j, "dist_tolerance_min_width", c.dist_tolerance_min_width);
    c.plot_tolerance = get<double>(j, "plot_tolerance", c.plot_tolerance);
    c.activations = get<std::vector<std::string>>(j, "activations", c.activations);
    for (const auto& a : c.activations) parse_activation(a);
    c.counterexample_C = get<double>(j, "counterexample_C", c.counterexample_C);
    c.kl_values = get<std::vector<double>>(j, "kl_values", c.kl_values);
    c.bound_x_norm = get<double>(j, "bound_x_norm", c.bound_x_norm);
    c.inject_sigma_fault = get<bool>(j, "inject_sigma_fault", c.inject_sigma_fault);
    c.output_dir = get<std::string>(j, "output_dir", c.output_dir);
    if (get<bool>(j, "desk", false)) c.apply_desk();
    c.validate();
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    json j;
    try {
        j = json::parse(in, nullptr, true, true);  // allow comments
    } catch (const json::parse_error& e) {
        throw ConfigError("config '" + path + "': " + e.what());
    }
    auto cfg = ExperimentConfig::from_json(j);
    // relative csv paths are taken from the config's directory
    const auto base = fs::path(path).parent_path();
    for (auto& d : cfg.datasets)
        if (d.kind == "csv" && fs::path(d.path).is_relative()) d.path = (base / d.path).lexically_normal().string();
    return cfg;
}

// --- records --------------------------------------------------------------------

struct AssertionResult {
    std::string name;
    bool pass = true;
    std::string detail;
};

/// Metrics for one trained fit. Metrics that an experiment does not define stay 0.
struct CellRecord {
    std::string dataset;
    int width = 0;
    int seed_index = 0;
    int split = 0;
    bool failed = false;
    std::string error;
    double max_mean_dist_to_prior = 0.0;
    double rmse_mean_to_prior = 0.0;
    double rmse_mean_to_test_y = 0.0;
    double rmse_var_to_prior_var = 0.0;
    double final_kl = 0.0;
    double final_elbo = 0.0;
    double seconds = 0.0;
};

struct RunRecord {
    std::string experiment;
    std::string config_hash;
    std::string version = kVersion;
    double wall_clock_seconds = 0.0;
    std::vector<CellRecord> cells;
    std::vector<AssertionResult> assertions;
    json metadata;
    json extra;  // experiment-specific summary

    bool all_pass() const {
        for (const auto& a : assertions)
            if (!a.pass) return false;
        return true;
    }
};

inline const char* kCellCsvHeader =
    "dataset,width,seed_index,split,failed,max_mean_dist_to_prior,rmse_mean_to_prior,rmse_mean_to_test_y,"
    "rmse_var_to_prior_var,final_kl,final_elbo,seconds";

inline void write_cells_csv(std::ostream& os, const std::vector<CellRecord>& cells) {
    os << kCellCsvHeader << '\n';
    os.precision(10);
    for (const auto& c : cells)
        os << c.dataset << ',' << c.width << ',' << c.seed_index << ',' << c.split << ',' << (c.failed ? 1 : 0) << ','
           << c.max_mean_dist_to_prior << ',' << c.rmse_mean_to_prior << ',' << c.rmse_mean_to_test_y << ','
           << c.rmse_var_to_prior_var << ',' << c.final_kl << ',' << c.final_elbo << ',' << c.seconds << '\n';
}

inline json assertions_json(const std::vector<AssertionResult>& as) {
    json a = json::array();
    for (const auto& x : as) a.push_back({{"name", x.name}, {"pass", x.pass}, {"detail", x.detail}});
    return a;
}

// --- infrastructure ---------------------------------------------------------------

/// Runs f(i) for i in [0, n) on `threads` workers. Results must be written to
/// per-index slots so the schedule cannot influence them.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& f) {
    const auto workers = static_cast<std::size_t>(std::max(1, std::min<int>(threads, static_cast<int>(n))));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex err_mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    f(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mu);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

inline std::uint64_t cell_seed(std::uint64_t base, std::initializer_list<std::uint64_t> keys) {
    return derive_seed(base, keys);
}

inline json metadata_block(const ExperimentConfig& cfg, double wall_clock) {
    return {{"version", kVersion},
            {"config_hash", cfg.hash()},
            {"experiment", to_string(cfg.experiment)},
            {"base_seed", cfg.base_seed},
            {"threads", cfg.threads},
            {"wall_clock_seconds", wall_clock},
            {"standardization", "train-split statistics"},
            {"batch_scaling", "log-likelihood scaled by N/batch"},
            {"grad_clip_norm", cfg.train.grad_clip_norm},
            {"bootstrap_replicates", cfg.bootstrap_replicates},
            {"seed_derivation", "splitmix64(base_seed, cell keys)"},
            {"config", cfg.to_json()}};
}

inline void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory '" + dir + "': " + ec.message());
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path + "'");
    out << text;
}

template <class F>
void write_with(const std::string& path, F&& f) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path + "'");
    f(out);
}

inline void finish_run(RunRecord& rec, const ExperimentConfig& cfg, const std::string& out_dir, double secs) {
    rec.wall_clock_seconds = secs;
    rec.config_hash = cfg.hash();
    rec.experiment = to_string(cfg.experiment);
    rec.metadata = metadata_block(cfg, secs);
    json j = rec.metadata;
    j["assertions"] = assertions_json(rec.assertions);
    j["all_pass"] = rec.all_pass();
    if (!rec.extra.is_null()) j["summary"] = rec.extra;
    write_text(out_dir + "/metadata.json", j.dump(2) + "\n");
}

// --- data -------------------------------------------------------------------------

/// Raw dataset for a spec; `rng` drives the synthetic generators.
inline Dataset make_raw_dataset(const DatasetSpec& d, Rng& rng, double counterexample_C = 1.0 / 2.34e-3) {
    Dataset ds;
    if (d.kind == "two_points") ds = make_two_points();
    else if (d.kind == "sine") ds = make_sine(d.n, rng);
    else if (d.kind == "toy") ds = make_toy(d.n, rng);
    else if (d.kind == "csv") ds = load_uci_csv(d.path, d.target, d.drop);
    else if (d.kind == "counterexample") {
        auto spec = CounterexampleSpec::standard();
        spec.C = counterexample_C;
        return build_counterexample_dataset(spec);
    } else throw ConfigError("unknown dataset kind '" + d.kind + "'");
    ds.noise_sigma2 = d.noise_sigma2;
    return ds;
}

/// Train/test pair. Datasets with fewer than 3 rows are used whole for both.
inline std::pair<Dataset, Dataset> make_split(const Dataset& raw, double test_fraction, Rng& rng) {
    if (raw.size() < 3) return {raw, raw};
    auto [tr, te] = standardize_split(raw, test_fraction, rng);
    if (te.empty()) te = tr;
    return {tr, te};
}

// --- per-fit evaluation -------------------------------------------------------------

struct FitMetrics {
    Vector mean_diff;  // E_Q f - E_P f on the evaluation inputs
    PredictiveMoments eval_moments;
    Vector prior_var;  // NNGP output variance on the evaluation inputs
};

inline void evaluate_fit(const MeanFieldGaussian& q, const Architecture& a, const Dataset& train_ds,
                         const Dataset& test_ds, const Matrix& eval_X, const LikelihoodSpec& lik,
                         const ExperimentConfig& cfg, std::uint64_t seed, CellRecord& cell,
                         FitMetrics* keep = nullptr) {
    Rng rng(derive_seed(seed, {0x6576616cULL}));
    const auto gap = crn_mean_difference(q, MeanFieldGaussian::prior(a), a, eval_X, cfg.predictive_samples, rng);
    cell.max_mean_dist_to_prior = gap.diff.cwiseAbs().maxCoeff();
    cell.rmse_mean_to_prior = std::sqrt(gap.diff.squaredNorm() / gap.diff.size());
    const auto pm_eval = predictive_moments(q, a, eval_X, cfg.predictive_samples, rng);
    Vector prior_var(eval_X.rows());
    for (Eigen::Index i = 0; i < eval_X.rows(); ++i) prior_var[i] = nngp_output_variance(a, eval_X.row(i));
    cell.rmse_var_to_prior_var = std::sqrt((pm_eval.variance - prior_var).squaredNorm() / prior_var.size());
    const auto pm_test = predictive_moments(q, a, test_ds.X, cfg.predictive_samples, rng);
    cell.rmse_mean_to_test_y = std::sqrt((pm_test.mean - test_ds.y).squaredNorm() / test_ds.y.size());
    cell.final_kl = kl_to_standard_normal(q);
    cell.final_elbo = elbo_estimate(q, a, train_ds, lik, cfg.elbo_samples, rng).elbo;
    if (keep) *keep = {gap.diff, pm_eval, prior_var};
}

// --- convergence (max distance of the predictive mean to the prior) -------------------

inline RunRecord run_convergence(const ExperimentConfig& cfg, const std::string& out_dir) {
    const auto t0 = std::chrono::steady_clock::now();
    cfg.validate();
    ensure_dir(out_dir);
    const auto& dspec = cfg.datasets.front();
    Rng drng(derive_seed(cfg.base_seed, {0x64617461ULL}));
    const Dataset ds = make_raw_dataset(dspec, drng, cfg.counterexample_C);
    if (ds.dim() != 1) throw ConfigError("convergence experiment needs a 1-d dataset");
    Architecture arch = cfg.arch;
    arch.d_in = 1;
    const auto lik = LikelihoodSpec::gaussian(ds.noise_sigma2);
    const Matrix G = cfg.grid.points();

    struct Job { int width; int seed_index; bool control; };
    std::vector<Job> jobs;
    for (int w : cfg.widths) {
        for (int s : cfg.seeds) jobs.push_back({w, s, false});
        if (cfg.control) jobs.push_back({w, cfg.seeds.front(), true});
    }
    std::vector<CellRecord> cells(jobs.size());
    parallel_for(jobs.size(), cfg.threads, [&](std::size_t i) {
        const auto& jb = jobs[i];
        CellRecord& c = cells[i];
        c.dataset = jb.control ? ds.name + "/control" : ds.name;
        c.width = jb.width;
        c.seed_index = jb.seed_index;
        const auto t = std::chrono::steady_clock::now();
        try {
            const Architecture a = arch.with_width(jb.width);
            TrainConfig tc = cfg.train;
            tc.seed = cell_seed(cfg.base_seed, {static_cast<std::uint64_t>(jb.width),
                                                static_cast<std::uint64_t>(jb.seed_index)});
            if (jb.control) tc.steps = 0;
            const auto res = train(a, ds, lik, tc);
            evaluate_fit(res.q, a, ds, ds, G, lik, cfg, tc.seed, c);
        } catch (const Error& e) {
            c.failed = true;
            c.error = e.what();
        }
        c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
    });

    // bound curve and NNGP reference
    struct WidthSummary { int width; double lo, hi, mean, kl_bound, kl_bound_se, bound; };
    std::vector<WidthSummary> summary;
    std::vector<std::vector<double>> groups;
    for (int w : cfg.widths) {
        WidthSummary s{w, 1e300, -1e300, 0.0, 0.0, 0.0, 0.0};
        std::vector<double> vals;
        for (const auto& c : cells)
            if (c.width == w && !c.failed && c.dataset == ds.name) vals.push_back(c.max_mean_dist_to_prior);
        for (double v : vals) {
            s.lo = std::min(s.lo, v);
            s.hi = std::max(s.hi, v);
            s.mean += v / static_cast<double>(vals.size());
        }
        Rng krng(cell_seed(cfg.base_seed, {static_cast<std::uint64_t>(w), 0x6b6cULL}));
        const Architecture a = arch.with_width(w);
        const auto kb = kl_bound_empirical(ds, a, ds.noise_sigma2, cfg.kl_bound_samples, krng);
        s.kl_bound = kb.estimate;
        s.kl_bound_se = kb.std_error;
        const double xmax = std::max(std::abs(cfg.grid.lo), std::abs(cfg.grid.hi));
        const BoundInputs bi{w, arch.depth, 1, xmax, kb.estimate, arch.activation.alpha.value_or(0.0)};
        s.bound = arch.depth == 1 ? mean_bound_1hl(bi).value : mean_bound_deep(bi).value;
        summary.push_back(s);
        if (!vals.empty()) groups.push_back(vals);
    }
    const auto Kxx = nngp_kernel(arch, ds.X).entries;
    const auto Kgx = nngp_kernel(arch, G, ds.X).entries;
    Vector Kgg(G.rows());
    for (Eigen::Index i = 0; i < G.rows(); ++i) Kgg[i] = nngp_output_variance(arch, G.row(i));
    const auto gp = gp_posterior(Kxx, Kgx, Kgg, ds.y, ds.noise_sigma2);
    const double nngp_dist = gp.mean.cwiseAbs().maxCoeff();

    RunRecord rec;
    rec.cells = cells;
    for (const auto& c : cells)
        if (c.failed) rec.assertions.push_back({"cell_w" + std::to_string(c.width) + "_s" + std::to_string(c.seed_index), false, c.error});
    {
        bool ok = true;
        std::ostringstream d;
        for (const auto& c : cells) {
            if (c.failed) continue;
            const auto& s = *std::find_if(summary.begin(), summary.end(), [&](auto& x) { return x.width == c.width; });
            if (!(c.max_mean_dist_to_prior <= s.bound)) {
                ok = false;
                d << "w=" << c.width << " dist " << c.max_mean_dist_to_prior << " > bound " << s.bound << "; ";
            }
        }
        rec.assertions.push_back({"below_bound", ok, ok ? "every cell below the bound curve" : d.str()});
    }
    if (cfg.assert_trends && groups.size() > 1) {
        const auto t = stats::trend_test(groups);
        std::ostringstream d;
        d << "sse_dec=" << t.sse_decreasing << " sse_inc=" << t.sse_increasing << " drop=" << t.drop;
        rec.assertions.push_back({"non_increasing_in_width", t.decreasing(), d.str()});
    }
    for (const auto& s : summary) {
        if (s.width < cfg.dist_tolerance_min_width) continue;
        std::ostringstream d;
        d << "mean max distance " << s.mean << " vs tolerance " << cfg.dist_tolerance;
        rec.assertions.push_back({"tolerance_w" + std::to_string(s.width), s.mean <= cfg.dist_tolerance, d.str()});
    }

    write_with(out_dir + "/convergence_cells.csv", [&](std::ostream& o) { write_cells_csv(o, cells); });
    write_with(out_dir + "/convergence.csv", [&](std::ostream& o) {
        o << "width,dist_mean,dist_min,dist_max,kl_bound,kl_bound_se,bound,nngp_posterior_dist\n";
        o.precision(10);
        for (const auto& s : summary)
            o << s.width << ',' << s.mean << ',' << s.lo << ',' << s.hi << ',' << s.kl_bound << ',' << s.kl_bound_se
              << ',' << s.bound << ',' << nngp_dist << '\n';
    });
    write_with(out_dir + "/convergence.svg", [&](std::ostream& o) {
        svg::Chart ch;
        ch.title = "max |E_Q f - E_P f| on the grid";
        ch.x_label = "width M";
        ch.y_label = "distance";
        ch.log_x = ch.log_y = true;
        svg::Band band{"seed range", {}, {}, {}, svg::palette()[0], 0.25};
        svg::Series obs{"observed", {}, {}, svg::palette()[0], 2.0, 1.0, false, true};
        svg::Series bnd{"bound", {}, {}, svg::palette()[1], 1.5, 1.0, true, false};
        svg::Series ref{"NNGP posterior", {}, {}, svg::palette()[2], 1.5, 1.0, true, false};
        for (const auto& s : summary) {
            if (s.hi < s.lo) continue;
            band.x.push_back(s.width);
            band.lo.push_back(s.lo);
            band.hi.push_back(s.hi);
            obs.x.push_back(s.width);
            obs.y.push_back(s.mean);
            bnd.x.push_back(s.width);
            bnd.y.push_back(s.bound);
            ref.x.push_back(s.width);
            ref.y.push_back(nngp_dist);
        }
        ch.bands = {band};
        ch.series = {obs, bnd, ref};
        svg::render(o, ch);
    });
    json sj = json::array();
    for (const auto& s : summary)
        sj.push_back({{"width", s.width}, {"dist_mean", s.mean}, {"dist_min", s.lo}, {"dist_max", s.hi},
                      {"kl_bound", s.kl_bound}, {"bound", s.bound}});
    rec.extra = {{"widths", sj}, {"nngp_posterior_dist", nngp_dist}};
    finish_run(rec, cfg, out_dir,
               std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    return rec;
}

// --- RMSE sweep ----------------------------------------------------------------------

inline RunRecord run_rmse_sweep(const ExperimentConfig& cfg, const std::string& out_dir) {
    const auto t0 = std::chrono::steady_clock::now();
    cfg.validate();
    ensure_dir(out_dir);

    // datasets are materialised up front so that every width sees the same splits
    struct SplitData { Dataset train, test; Matrix eval_X; };
    std::vector<std::vector<SplitData>> splits(cfg.datasets.size());
    for (std::size_t d = 0; d < cfg.datasets.size(); ++d) {
        const auto& spec = cfg.datasets[d];
        std::optional<Dataset> fixed;
        if (spec.kind == "csv" || spec.kind == "two_points" || spec.kind == "counterexample") {
            Rng r(0);
            fixed = make_raw_dataset(spec, r, cfg.counterexample_C);
        }
        for (int s = 0; s < cfg.splits; ++s) {
            Rng rng(cell_seed(cfg.base_seed, {0x73706c6974ULL, d, static_cast<std::uint64_t>(s)}));
            const Dataset raw = fixed ? *fixed : make_raw_dataset(spec, rng, cfg.counterexample_C);
            auto [tr, te] = make_split(raw, spec.test_fraction, rng);
            tr.noise_sigma2 = te.noise_sigma2 = spec.noise_sigma2;
            Matrix E(cfg.eval_points, raw.dim());
            std::uniform_real_distribution<double> u(-1.0, 1.0);
            for (Eigen::Index i = 0; i < E.size(); ++i) E.data()[i] = u(rng);
            splits[d].push_back({std::move(tr), std::move(te), std::move(E)});
        }
    }

    struct Job { std::size_t d; int width; int split; };
    std::vector<Job> jobs;
    for (std::size_t d = 0; d < cfg.datasets.size(); ++d)
        for (int w : cfg.widths)
            for (int s = 0; s < cfg.splits; ++s) jobs.push_back({d, w, s});
    std::vector<CellRecord> cells(jobs.size());
    parallel_for(jobs.size(), cfg.threads, [&](std::size_t i) {
        const auto& jb = jobs[i];
        const auto& sd = splits[jb.d][static_cast<std::size_t>(jb.split)];
        CellRecord& c = cells[i];
        c.dataset = cfg.datasets[jb.d].label();
        c.width = jb.width;
        c.split = jb.split;
        const auto t = std::chrono::steady_clock::now();
        try {
            Architecture a = cfg.arch.with_width(jb.width);
            a.d_in = static_cast<int>(sd.train.dim());
            const auto lik = LikelihoodSpec::gaussian(sd.train.noise_sigma2);
            std::optional<TrainResult> best;
            double best_elbo = -std::numeric_limits<double>::infinity();
            std::uint64_t best_seed = 0;
            for (int r = 0; r < cfg.restarts; ++r) {
                TrainConfig tc = cfg.train;
                tc.seed = cell_seed(cfg.base_seed, {jb.d, static_cast<std::uint64_t>(jb.width),
                                                    static_cast<std::uint64_t>(jb.split), static_cast<std::uint64_t>(r)});
                auto res = train(a, sd.train, lik, tc);
                Rng er(derive_seed(cfg.base_seed, {0x656c626fULL, jb.d, static_cast<std::uint64_t>(jb.split)}));
                const double e = elbo_estimate(res.q, a, sd.train, lik, cfg.elbo_samples, er).elbo;
                if (e > best_elbo) {
                    best_elbo = e;
                    best = std::move(res);
                    best_seed = tc.seed;
                }
            }
            evaluate_fit(best->q, a, sd.train, sd.test, sd.eval_X, lik, cfg, best_seed, c);
        } catch (const Error& e) {
            c.failed = true;
            c.error = e.what();
        }
        c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
    });

    RunRecord rec;
    rec.cells = cells;
    for (const auto& c : cells)
        if (c.failed)
            rec.assertions.push_back({"cell_" + c.dataset + "_w" + std::to_string(c.width) + "_split" +
                                          std::to_string(c.split), false, c.error});

    Rng brng(derive_seed(cfg.base_seed, {0x626f6f74ULL}));
    json summary = json::array();
    std::ostringstream sumcsv;
    sumcsv << "dataset,width,metric,mean,ci_lo,ci_hi\n";
    sumcsv.precision(10);
    const std::vector<std::pair<std::string, double CellRecord::*>> metrics{
        {"rmse_mean_to_prior", &CellRecord::rmse_mean_to_prior},
        {"rmse_mean_to_test_y", &CellRecord::rmse_mean_to_test_y},
        {"rmse_var_to_prior_var", &CellRecord::rmse_var_to_prior_var}};
    for (std::size_t d = 0; d < cfg.datasets.size(); ++d) {
        const std::string name = cfg.datasets[d].label();
        std::map<std::string, std::vector<std::vector<double>>> groups;
        for (int w : cfg.widths) {
            for (const auto& [mname, ptr] : metrics) {
                std::vector<double> v;
                for (const auto& c : cells)
                    if (c.dataset == name && c.width == w && !c.failed) v.push_back(c.*ptr);
                if (v.empty()) continue;
                const auto ci = stats::bootstrap_mean_ci(v, brng, cfg.bootstrap_replicates);
                const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
                sumcsv << name << ',' << w << ',' << mname << ',' << mean << ',' << ci.lo << ',' << ci.hi << '\n';
                summary.push_back({{"dataset", name}, {"width", w}, {"metric", mname}, {"mean", mean},
                                   {"ci_lo", ci.lo}, {"ci_hi", ci.hi}});
                groups[mname].push_back(v);
            }
        }
        if (cfg.assert_trends && cfg.widths.size() > 1) {
            const bool odd = cfg.arch.activation.is_odd_plus_constant;
            auto add = [&](const std::string& metric, bool want_decreasing) {
                const auto& g = groups[metric];
                if (g.size() < 2) return;
                const auto t = stats::trend_test(g);
                std::ostringstream det;
                det << "sse_dec=" << t.sse_decreasing << " sse_inc=" << t.sse_increasing << " drop=" << t.drop;
                rec.assertions.push_back({name + "_" + metric + (want_decreasing ? "_decreasing" : "_increasing"),
                                          want_decreasing ? t.decreasing() : t.increasing(), det.str()});
            };
            if (odd) add("rmse_mean_to_prior", true);
            add("rmse_mean_to_test_y", false);
        }
    }
    write_with(out_dir + "/rmse_sweep.csv", [&](std::ostream& o) { write_cells_csv(o, cells); });
    write_text(out_dir + "/rmse_summary.csv", sumcsv.str());
    write_with(out_dir + "/rmse_sweep.svg", [&](std::ostream& o) {
        svg::Chart ch;
        ch.title = "RMSE of the posterior mean";
        ch.x_label = "width M";
        ch.y_label = "RMSE";
        ch.log_x = true;
        std::size_t k = 0;
        for (std::size_t d = 0; d < cfg.datasets.size(); ++d) {
            const std::string name = cfg.datasets[d].label();
            for (const char* m : {"rmse_mean_to_prior", "rmse_mean_to_test_y"}) {
                svg::Series s{name + " " + (std::string(m) == "rmse_mean_to_prior" ? "to prior" : "to test y"),
                              {}, {}, svg::palette()[k % svg::palette().size()], 1.8, 1.0,
                              std::string(m) == "rmse_mean_to_test_y", true};
                svg::Band b{"", {}, {}, {}, s.color, 0.15};
                for (const auto& e : summary)
                    if (e["dataset"] == name && e["metric"] == m) {
                        s.x.push_back(e["width"].get<double>());
                        s.y.push_back(e["mean"].get<double>());
                        b.x.push_back(e["width"].get<double>());
                        b.lo.push_back(e["ci_lo"].get<double>());
                        b.hi.push_back(e["ci_hi"].get<double>());
                    }
                ch.bands.push_back(b);
                ch.series.push_back(s);
                ++k;
            }
        }
        svg::render(o, ch);
    });
    rec.extra = {{"summary", summary}};
    finish_run(rec, cfg, out_dir, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    return rec;
}

// --- posterior plot ---------------------------------------------------------------------

inline RunRecord run_posterior_plot(const ExperimentConfig& cfg, const std::string& out_dir) {
    const auto t0 = std::chrono::steady_clock::now();
    if (cfg.widths.empty()) throw ConfigError("posterior_plot: width list is empty");
    cfg.validate();
    ensure_dir(out_dir);
    Rng drng(derive_seed(cfg.base_seed, {0x64617461ULL}));
    const Dataset ds = make_raw_dataset(cfg.datasets.front(), drng, cfg.counterexample_C);
    if (ds.dim() != 1) throw ConfigError("posterior_plot needs a 1-d dataset");
    Architecture arch = cfg.arch;
    arch.d_in = 1;
    const auto lik = LikelihoodSpec::gaussian(ds.noise_sigma2);
    const Matrix G = cfg.grid.points();

    struct Fit { PredictiveMoments pm; Matrix samples; bool failed = false; std::string error; };
    std::vector<Fit> fits(cfg.widths.size());
    parallel_for(fits.size(), cfg.threads, [&](std::size_t i) {
        const int w = cfg.widths[i];
        try {
            const Architecture a = arch.with_width(w);
            TrainConfig tc = cfg.train;
            tc.seed = cell_seed(cfg.base_seed, {static_cast<std::uint64_t>(w), 0x706c6f74ULL});
            const auto res = train(a, ds, lik, tc);
            Rng rng(derive_seed(tc.seed, {1}));
            fits[i].pm = predictive_moments(res.q, a, G, cfg.predictive_samples, rng);
            fits[i].samples.resize(cfg.sample_functions, G.rows());
            Vector eps(res.q.size());
            for (int s = 0; s < cfg.sample_functions; ++s) {
                fill_normal(eps, rng);
                fits[i].samples.row(s) = forward(a, sample_reparam(res.q, eps), G).col(0).transpose();
            }
        } catch (const Error& e) {
            fits[i].failed = true;
            fits[i].error = e.what();
        }
    });

    Vector prior_var(G.rows());
    for (Eigen::Index i = 0; i < G.rows(); ++i) prior_var[i] = nngp_output_variance(arch, G.row(i));
    const auto Kxx = nngp_kernel(arch, ds.X).entries;
    const auto gp = gp_posterior(Kxx, nngp_kernel(arch, G, ds.X).entries, prior_var, ds.y, ds.noise_sigma2);
    Vector data_var(ds.size());
    for (Eigen::Index i = 0; i < ds.size(); ++i) data_var[i] = nngp_output_variance(arch, ds.X.row(i));
    const auto gp_data = gp_posterior(Kxx, Kxx, data_var, ds.y, ds.noise_sigma2);

    RunRecord rec;
    for (std::size_t i = 0; i < fits.size(); ++i)
        if (fits[i].failed) rec.assertions.push_back({"fit_w" + std::to_string(cfg.widths[i]), false, fits[i].error});
    {
        bool ok = true;
        std::ostringstream d;
        for (Eigen::Index n = 0; n < ds.size(); ++n) {
            const double z = std::abs(gp_data.mean[n] - ds.y[n]) / std::sqrt(gp_data.variance[n]);
            d << "x=" << ds.X(n, 0) << " z=" << z << "; ";
            ok = ok && z <= 2.0;
        }
        rec.assertions.push_back({"nngp_posterior_within_2sd_of_data", ok, d.str()});
    }
    std::size_t widest = 0;
    for (std::size_t i = 1; i < cfg.widths.size(); ++i)
        if (cfg.widths[i] > cfg.widths[widest]) widest = i;
    if (arch.activation.is_odd_plus_constant && !fits[widest].failed) {
        const double sup = (fits[widest].pm.mean.array() - 0.0).abs().maxCoeff();
        std::ostringstream d;
        d << "sup |mean - prior mean| = " << sup << " at width " << cfg.widths[widest] << ", tolerance "
          << cfg.plot_tolerance;
        rec.assertions.push_back({"widest_fit_matches_prior", sup <= cfg.plot_tolerance, d.str()});
    }

    write_with(out_dir + "/posterior_plot.csv", [&](std::ostream& o) {
        o << "series,width,x,mean,sd\n";
        o.precision(10);
        for (Eigen::Index g = 0; g < G.rows(); ++g) {
            o << "nngp_prior,0," << G(g, 0) << ",0," << std::sqrt(prior_var[g]) << '\n';
            o << "nngp_posterior,0," << G(g, 0) << ',' << gp.mean[g] << ',' << std::sqrt(gp.variance[g]) << '\n';
        }
        for (std::size_t i = 0; i < fits.size(); ++i) {
            if (fits[i].failed) continue;
            for (Eigen::Index g = 0; g < G.rows(); ++g)
                o << "mfvi," << cfg.widths[i] << ',' << G(g, 0) << ',' << fits[i].pm.mean[g] << ','
                  << std::sqrt(fits[i].pm.variance[g]) << '\n';
            for (Eigen::Index s = 0; s < fits[i].samples.rows(); ++s)
                for (Eigen::Index g = 0; g < G.rows(); ++g)
                    o << "sample" << s << ',' << cfg.widths[i] << ',' << G(g, 0) << ',' << fits[i].samples(s, g)
                      << ",0\n";
        }
    });
    write_with(out_dir + "/posterior_plot.svg", [&](std::ostream& o) {
        svg::Chart ch;
        ch.title = "predictive mean +- 1 sd";
        ch.x_label = "x";
        ch.y_label = "f(x)";
        std::vector<double> xs(static_cast<std::size_t>(G.rows()));
        for (Eigen::Index g = 0; g < G.rows(); ++g) xs[static_cast<std::size_t>(g)] = G(g, 0);
        auto band_of = [&](const Vector& m, const Vector& v, const std::string& label, const std::string& color) {
            svg::Band b{label, xs, {}, {}, color, 0.15};
            for (Eigen::Index g = 0; g < m.size(); ++g) {
                b.lo.push_back(m[g] - std::sqrt(v[g]));
                b.hi.push_back(m[g] + std::sqrt(v[g]));
            }
            ch.bands.push_back(b);
            ch.series.push_back({"", xs, std::vector<double>(m.data(), m.data() + m.size()), color, 1.8});
        };
        band_of(Vector::Zero(G.rows()), prior_var, "NNGP prior", "#7f7f7f");
        band_of(gp.mean, gp.variance, "NNGP posterior", "#000000");
        for (std::size_t i = 0; i < fits.size(); ++i) {
            if (fits[i].failed) continue;
            const auto& color = svg::palette()[i % svg::palette().size()];
            band_of(fits[i].pm.mean, fits[i].pm.variance, "MFVI M=" + std::to_string(cfg.widths[i]), color);
            for (Eigen::Index s = 0; s < fits[i].samples.rows(); ++s) {
                std::vector<double> ys(xs.size());
                for (std::size_t g = 0; g < xs.size(); ++g) ys[g] = fits[i].samples(s, static_cast<Eigen::Index>(g));
                ch.series.push_back({"", xs, ys, color, 0.8, 0.25});
            }
        }
        svg::Series data{"data", {}, {}, "#d62728", 0.0, 1.0, false, true};
        for (Eigen::Index n = 0; n < ds.size(); ++n) {
            data.x.push_back(ds.X(n, 0));
            data.y.push_back(ds.y[n]);
        }
        ch.series.push_back(data);
        svg::render(o, ch);
    });
    finish_run(rec, cfg, out_dir, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    return rec;
}

// --- counterexample -----------------------------------------------------------------------

inline RunRecord run_counterexample(const ExperimentConfig& cfg, const std::string& out_dir) {
    const auto t0 = std::chrono::steady_clock::now();
    cfg.validate();
    ensure_dir(out_dir);
    auto spec = CounterexampleSpec::standard();
    spec.C = cfg.counterexample_C;
    spec.arch.depth = cfg.arch.depth;
    const Dataset ds = build_counterexample_dataset(spec);

    struct Job { std::string act; int width; };
    std::vector<Job> jobs;
    for (const auto& a : cfg.activations)
        for (int w : cfg.widths) jobs.push_back({a, w});
    std::vector<CounterexampleRow> rows(jobs.size());
    std::vector<std::string> errors(jobs.size());
    parallel_for(jobs.size(), cfg.threads, [&](std::size_t i) {
        TrainConfig tc = cfg.train;
        tc.seed = cell_seed(cfg.base_seed, {0x6378ULL});
        try {
            CounterexampleOptions opt;
            opt.predictive_samples = cfg.predictive_samples;
            opt.elbo_samples = std::max(cfg.elbo_samples, 2);
            const auto rep = run_counterexample_check(spec, parse_activation(jobs[i].act), {jobs[i].width}, tc, opt);
            rows[i] = rep.rows.front();
        } catch (const Error& e) {
            errors[i] = e.what();
            rows[i].width = jobs[i].width;
        }
    });

    RunRecord rec;
    const double threshold = counterexample_gap_threshold(spec);
    json summary = json::object();
    summary["threshold"] = threshold;
    summary["dataset"] = {{"x", {ds.X(0, 0), ds.X(1, 0)}}, {"y", {ds.y[0], ds.y[1]}}, {"sigma2", ds.noise_sigma2}};
    for (const auto& act : cfg.activations) {
        CounterexampleReport rep;
        rep.threshold = threshold;
        std::vector<std::vector<double>> groups;
        bool failed = false;
        for (std::size_t i = 0; i < jobs.size(); ++i) {
            if (jobs[i].act != act) continue;
            if (!errors[i].empty()) {
                rec.assertions.push_back({act + "_w" + std::to_string(jobs[i].width), false, errors[i]});
                failed = true;
                continue;
            }
            rep.rows.push_back(rows[i]);
            groups.push_back({rows[i].gap});
        }
        write_with(out_dir + "/counterexample_" + act + ".csv",
                   [&](std::ostream& o) { write_counterexample_csv(o, rep); });
        json jr = json::array();
        for (const auto& r : rep.rows)
            jr.push_back({{"width", r.width}, {"gap", r.gap}, {"gap_se", r.gap_se}, {"elbo_trained", r.elbo_trained},
                          {"elbo_qc", r.elbo_qc}, {"elbo_prior_optbias", r.elbo_prior_optbias}});
        summary[act] = jr;
        if (failed || rep.rows.empty()) continue;
        if (!ActivationSpec::make(act).is_odd_plus_constant) {
            bool ok = true;
            std::ostringstream d;
            for (const auto& r : rep.rows) {
                d << "w=" << r.width << " gap=" << r.gap << "; ";
                ok = ok && r.gap >= threshold;
            }
            d << "threshold " << threshold;
            rec.assertions.push_back({act + "_gap_persists", ok, d.str()});
        } else if (cfg.assert_trends && groups.size() > 1) {
            const auto t = stats::trend_test(groups);
            std::ostringstream d;
            d << "sse_dec=" << t.sse_decreasing << " sse_inc=" << t.sse_increasing << " drop=" << t.drop;
            rec.assertions.push_back({act + "_gap_shrinks", t.decreasing() && t.drop > 0.0, d.str()});
        }
    }

    // odd-activation family: sqrt(M) * gap against its limit
    {
        Architecture a = cfg.arch;
        a.d_in = 1;
        a.activation = ActivationSpec::make(ActivationKind::tanh);
        Rng rng(derive_seed(cfg.base_seed, {0x6f6464ULL}));
        const Eigen::RowVectorXd x = Eigen::RowVectorXd::Zero(1), x2 = Eigen::RowVectorXd::Ones(1);
        const auto fam = odd_lower_bound_family(a, 1.0, x, x2, cfg.widths, cfg.predictive_samples, rng);
        write_with(out_dir + "/odd_family.csv", [&](std::ostream& o) {
            o << "width,kl,scaled_gap,scaled_gap_se,limit\n";
            o.precision(12);
            for (const auto& r : fam.rows)
                o << r.width << ',' << r.kl << ',' << r.scaled_gap << ',' << r.scaled_gap_se << ',' << fam.limit << '\n';
        });
        summary["odd_family_limit"] = fam.limit;
    }
    rec.extra = summary;
    finish_run(rec, cfg, out_dir, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    return rec;
}

// --- bounds table -------------------------------------------------------------------------

/// Rows of the bounds table: every applicable formula for each (width, KL) pair.
inline std::vector<BoundReport> bounds_rows(const ExperimentConfig& cfg) {
    const double alpha = cfg.arch.activation.alpha.value_or(0.0);
    std::vector<BoundReport> reps;
    std::vector<long> widths(cfg.widths.begin(), cfg.widths.end());
    if (widths.empty()) widths = {100, 10000, 1000000};
    for (long M : widths)
        for (double kl : cfg.kl_values) {
            const BoundInputs in{M, cfg.arch.depth, 1, cfg.bound_x_norm, kl, alpha};
            if (cfg.arch.depth == 1) reps.push_back(mean_bound_1hl(in));
            if (cfg.arch.activation.is_odd_plus_constant) {
                reps.push_back(mean_bound_deep(in));
                reps.push_back(mean_diff_bound(in, cfg.bound_x_norm));
                reps.push_back(second_moment_bound(in));
            }
        }
    return reps;
}

inline RunRecord run_bounds_table(const ExperimentConfig& cfg, const std::string& out_dir) {
    const auto t0 = std::chrono::steady_clock::now();
    ensure_dir(out_dir);
    const auto reps = bounds_rows(cfg);
    write_with(out_dir + "/bounds.csv", [&](std::ostream& o) {
        write_bound_csv_header(o);
        for (const auto& r : reps) write_bound_csv_row(o, r);
    });
    RunRecord rec;
    json kls = json::array();
    for (const auto& d : cfg.datasets) {
        Rng rng(derive_seed(cfg.base_seed, {0x6b6cULL}));
        const Dataset ds = make_raw_dataset(d, rng, cfg.counterexample_C);
        kls.push_back({{"dataset", d.label()},
                       {"kl_bound_gaussian", kl_bound_gaussian(ds, cfg.arch.depth, ds.noise_sigma2)},
                       {"kl_bound_general", kl_bound_general(ds, cfg.arch.depth, static_cast<int>(ds.dim()),
                                                             LikelihoodSpec::gaussian(ds.noise_sigma2))}});
    }
    rec.extra = {{"kl_bounds", kls}, {"rows", reps.size()}};
    finish_run(rec, cfg, out_dir, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    return rec;
}

// --- verify -------------------------------------------------------------------------------

struct VerifyCheck {
    std::string name;
    bool pass = true;
    double lhs = 0.0;
    double rhs = 0.0;
    double slack() const { return rhs - lhs; }
};

inline RunRecord run_verify(const ExperimentConfig& cfg, const std::string& out_dir) {
    const auto t0 = std::chrono::steady_clock::now();
    ensure_dir(out_dir);
    std::vector<VerifyCheck> checks;
    auto add = [&](std::string name, double lhs, double rhs) {
        checks.push_back({std::move(name), lhs <= rhs, lhs, rhs});
    };
    Rng rng(derive_seed(cfg.base_seed, {0x766572ULL}));

    // closed-form KL against quadrature of log q - log p under q
    {
        double worst = 0.0;
        std::normal_distribution<double> n01;
        for (int t = 0; t < 20; ++t) {
            const double mu = n01(rng), ls = 0.5 * n01(rng);
            MeanFieldGaussian q{Vector::Constant(1, mu), Vector::Constant(1, ls)};
            const double s = std::exp(ls);
            const double quad = expect_normal([&](double z) {
                const double th = mu + s * z;
                return -0.5 * z * z - ls + 0.5 * th * th;
            });
            worst = std::max(worst, std::abs(quad - kl_to_standard_normal(q)));
        }
        add("kl_closed_form_vs_quadrature", worst, 1e-10);
    }
    // pathwise gradients
    for (auto k : {ActivationKind::tanh, ActivationKind::erf, ActivationKind::relu, ActivationKind::identity,
                   ActivationKind::sigmoid}) {
        Architecture a;
        a.depth = 2;
        a.width = 3;
        a.d_in = 2;
        a.activation = ActivationSpec::make(k);
        MeanFieldGaussian q{0.5 * standard_normal(param_count(a), rng),
                            (0.2 * standard_normal(param_count(a), rng)).array() - 0.5};
        const Matrix X = standard_normal(4, 2, rng);
        const Vector y = standard_normal(4, rng);
        const Matrix noise = standard_normal(q.size(), 3, rng);
        const auto gc = fd_gradient_check(q, a, X, y, LikelihoodSpec::gaussian(0.5), noise);
        add(std::string("gradient_fd_") + std::string(mfbnn::to_string(k)), gc.max_rel_error, 1e-4);
    }
    // parameter bounds on random families
    {
        Architecture a;
        a.depth = 2;
        a.width = 8;
        a.d_in = 2;
        double worst_slack = std::numeric_limits<double>::infinity();
        bool ok = true;
        std::normal_distribution<double> mu_d(0.0, 0.5), ls_d(0.0, std::sqrt(0.1));
        for (int t = 0; t < 200; ++t) {
            MeanFieldGaussian q;
            q.mu.resize(param_count(a));
            q.log_sigma.resize(param_count(a));
            for (Eigen::Index i = 0; i < q.mu.size(); ++i) {
                q.mu[i] = mu_d(rng);
                q.log_sigma[i] = ls_d(rng);
            }
            const double kl = kl_to_standard_normal(q);
            if (cfg.inject_sigma_fault) q.log_sigma = (q.sigma().array() + 10.0).log();
            const auto rep = verify_param_bounds(q, a, kl);
            ok = ok && rep.all_pass();
            for (const auto& c : rep.checks) worst_slack = std::min(worst_slack, c.slack());
        }
        checks.push_back({"param_bounds_random", ok, -worst_slack, 0.0});
    }
    // random-matrix lemmas
    for (auto [I, J] : {std::pair<long, long>{8, 8}, {64, 64}, {16, 128}}) {
        const auto r = mc_opnorm_checks(I, J, 1.0, 200, rng);
        const std::string tag = std::to_string(I) + "x" + std::to_string(J);
        checks.push_back({"opnorm_mean_" + tag, r.norm_pass, r.mean_norm, r.norm_bound + 4.0 * r.mean_norm_se});
        checks.push_back({"opnorm_sq_" + tag, r.sq_pass, r.mean_sq, r.sq_bound + 4.0 * r.mean_sq_se});
    }
    // KL identities of the constructions
    {
        double worst = 0.0;
        std::uniform_int_distribution<int> Ld(1, 3), Md(1, 64);
        std::uniform_real_distribution<double> Cd(0.01, 100.0);
        for (int t = 0; t < 20; ++t) {
            Architecture a;
            a.depth = Ld(rng);
            a.width = Md(rng);
            a.activation = ActivationSpec::make(ActivationKind::relu);
            const double C = Cd(rng);
            worst = std::max(worst, std::abs(kl_to_standard_normal(build_qc(a, C)) - C / 2) / std::max(1.0, C));
            worst = std::max(worst, std::abs(kl_to_standard_normal(build_odd_family_member(a, C)) - C) / std::max(1.0, C));
        }
        add("construction_kl_identities", worst, 1e-12);
    }
    {
        Architecture a;
        a.activation = ActivationSpec::make(ActivationKind::identity);
        a.depth = 1;
        a.width = 100;
        const auto lb = linear_lower_bound_construction(a, 2.0);
        add("linear_construction_gap", std::abs(lb.forward_gap - lb.analytic_gap), 1e-12);
        const double ub = linear_mean_gap_bound(100, 1, 1, 2.0, Vector::Ones(1), Vector::Zero(1));
        add("linear_construction_attains_bound", std::abs(lb.analytic_gap - ub), 1e-12);
    }
    {
        const auto ds = build_counterexample_dataset(CounterexampleSpec::standard());
        add("counterexample_targets", std::max(std::abs(ds.y[0] - 8.24), std::abs(ds.y[1] - 11.66)), 0.02);
        add("two_points_kl_bound", std::abs(kl_bound_gaussian(make_two_points(), 1, 0.025) - 160.0), 1e-12);
    }
    {
        const Vector y = standard_normal(10, rng);
        const auto b = optimal_output_bias(y, 0.3);
        const double e0 = bias_only_elbo(b.mu_b, b.sigma2_b, y, 0.3);
        double worst = -std::numeric_limits<double>::infinity();
        for (double dm : {-1e-3, 1e-3}) worst = std::max(worst, bias_only_elbo(b.mu_b + dm, b.sigma2_b, y, 0.3) - e0);
        for (double ds2 : {-1e-3, 1e-3}) worst = std::max(worst, bias_only_elbo(b.mu_b, b.sigma2_b + ds2, y, 0.3) - e0);
        checks.push_back({"optimal_bias_stationary", worst < 0.0, worst, 0.0});
    }

    RunRecord rec;
    json jc = json::array();
    for (const auto& c : checks) {
        jc.push_back({{"name", c.name}, {"pass", c.pass}, {"lhs", c.lhs}, {"rhs", c.rhs}, {"slack", c.slack()}});
        rec.assertions.push_back({c.name, c.pass, ""});
    }
    json report = {{"checks", jc}, {"all_pass", rec.all_pass()}};
    write_text(out_dir + "/verify.json", report.dump(2) + "\n");
    rec.extra = report;
    finish_run(rec, cfg, out_dir, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    return rec;
}

inline RunRecord run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
    switch (cfg.experiment) {
        case ExperimentKind::convergence: return run_convergence(cfg, out_dir);
        case ExperimentKind::rmse_sweep: return run_rmse_sweep(cfg, out_dir);
        case ExperimentKind::posterior_plot: return run_posterior_plot(cfg, out_dir);
        case ExperimentKind::counterexample: return run_counterexample(cfg, out_dir);
        case ExperimentKind::bounds_table: return run_bounds_table(cfg, out_dir);
        case ExperimentKind::verify: return run_verify(cfg, out_dir);
    }
    throw ConfigError("unknown experiment");
}

}  // namespace mfbnn::harness
