// ipdsolve: run, sweep or validate one experiment from the command line.

#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "ipd/bench/experiment.hpp"

namespace {

using ipd::bench::ExperimentConfig;

constexpr int kExitConverged = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitMaxIters = 2;

std::vector<std::string> split_list(const std::string& text)
{
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(item);
    return out;
}

double to_double(const std::string& s, const std::string& what)
{
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || s.empty()) throw ipd::ValidationError("bad number '" + s + "' for " + what);
    return v;
}

/// Flags bound to a scratch config; only the ones given on the command line
/// are copied over the base (defaults or --config file).
class ConfigFlags
{
public:
    void attach(CLI::App& app)
    {
        app.add_option("--config", config_path_, "JSON config file; flags override its fields");
        add(app.add_option("--algo", f_.algo,
                           "fb|condat|ipds|ipdsp|iadmm|padmm|minibatch|psmpds|dist-padmm|pdapds"),
            [](auto& d, const auto& s) { d.algo = s.algo; });
        add(app.add_option("--problem", f_.problem, "lasso|logistic"),
            [](auto& d, const auto& s) { d.problem = s.problem; });
        add(app.add_option("--data", f_.data, "libsvm file"), [](auto& d, const auto& s) { d.data = s.data; });
        add(app.add_option("--synth", synth_, "synthetic data m,q,k,noise"), [this](auto& d, const auto&) {
            const auto parts = split_list(synth_);
            if (parts.size() != 4) throw ipd::ValidationError("--synth expects m,q,k,noise");
            d.synth_m = static_cast<ipd::Index>(to_double(parts[0], "--synth m"));
            d.synth_q = static_cast<ipd::Index>(to_double(parts[1], "--synth q"));
            d.synth_k = static_cast<ipd::Index>(to_double(parts[2], "--synth k"));
            d.synth_noise = to_double(parts[3], "--synth noise");
            d.data.clear();
        });
        add(app.add_option("--lambda", f_.lambda, "l1 weight"), [](auto& d, const auto& s) { d.lambda = s.lambda; });
        add(app.add_option("--batches", f_.batches, "batches or agents N"),
            [](auto& d, const auto& s) { d.batches = s.batches; });
        add(app.add_option("--graph", f_.graph, "ring|path|complete|<edge list file>"),
            [](auto& d, const auto& s) { d.graph = s.graph; });
        add(app.add_option("--alpha", f_.alpha, "inertia"), [](auto& d, const auto& s) { d.alpha = s.alpha; });
        add(app.add_option("--theta", f_.theta, "schedule theta"), [](auto& d, const auto& s) { d.theta = s.theta; });
        add(app.add_option("--delta-hat", delta_hat_, "schedule delta_hat, or 'auto'"), [this](auto& d, const auto&) {
            d.delta_hat = delta_hat_ == "auto" ? std::numeric_limits<double>::quiet_NaN()
                                               : to_double(delta_hat_, "--delta-hat");
        });
        add(app.add_option("--rho-frac", f_.rho_frac, "relaxation as a fraction of its bound"),
            [](auto& d, const auto& s) { d.rho_frac = s.rho_frac; });
        add(app.add_option("--gamma", f_.gamma, "step parameter in (0, 2)"),
            [](auto& d, const auto& s) { d.gamma = s.gamma; });
        add(app.add_option("--r", f_.r, "primal/dual balance"), [](auto& d, const auto& s) { d.r = s.r; });
        add(app.add_option("--s", f_.s, "preconditioner exponent in [0, 2]"), [](auto& d, const auto& s) { d.s = s.s; });
        add(app.add_option("--seed", f_.seed, "data and sampling seed"), [](auto& d, const auto& s) { d.seed = s.seed; });
        add(app.add_option("--sampler-seed", f_.sampler_seed, "sampling seed for psmpds/pdapds (0: use --seed)"),
            [](auto& d, const auto& s) { d.sampler_seed = s.sampler_seed; });
        add(app.add_option("--max-iters", f_.max_iters, "iteration cap"),
            [](auto& d, const auto& s) { d.max_iters = s.max_iters; });
        add(app.add_option("--tol", f_.tol, "fixed-point residual tolerance"),
            [](auto& d, const auto& s) { d.tol = s.tol; });
        add(app.add_option("--out", f_.out, "CSV trace path"), [](auto& d, const auto& s) { d.out = s.out; });
    }

    ExperimentConfig build() const
    {
        ExperimentConfig cfg = config_path_.empty() ? ExperimentConfig{} : ipd::bench::load_config(config_path_);
        for (const auto& [opt, apply] : bindings_)
            if (opt->count() > 0) apply(cfg, f_);
        return cfg;
    }

private:
    using Apply = std::function<void(ExperimentConfig&, const ExperimentConfig&)>;

    void add(CLI::Option* opt, Apply apply) { bindings_.emplace_back(opt, std::move(apply)); }

    ExperimentConfig f_;
    std::string config_path_;
    std::string synth_;
    std::string delta_hat_;
    std::vector<std::pair<CLI::Option*, Apply>> bindings_;
};

int exit_code(ipd::RunStatus s) { return s == ipd::RunStatus::converged ? kExitConverged : kExitMaxIters; }

void print_notices(const std::vector<std::string>& notices)
{
    for (const auto& n : notices) std::cerr << "notice: " << n << '\n';
}

int cmd_solve(const ExperimentConfig& cfg, bool print_config)
{
    if (print_config) std::cout << ipd::bench::serialize_config(cfg) << '\n';
    const ipd::bench::Summary s = ipd::bench::run_experiment(cfg);
    print_notices(s.notices);
    std::cout << ipd::bench::summary_line(s) << '\n';
    return exit_code(s.status);
}

int cmd_validate(const ExperimentConfig& cfg, bool print_config)
{
    if (print_config) std::cout << ipd::bench::serialize_config(cfg) << '\n';
    const ipd::bench::PreparedRun pr = ipd::bench::prepare_experiment(cfg);
    print_notices(pr.data.notices);
    for (const auto& c : pr.certificates) std::cout << c << '\n';
    std::cout << "valid\n";
    return kExitConverged;
}

struct SweepGrid
{
    std::string algos;
    std::string seeds;
    std::string alphas;
    std::string out_dir;
    unsigned jobs = 1;
};

int cmd_sweep(const ExperimentConfig& base, const SweepGrid& grid)
{
    std::vector<std::string> algos = grid.algos.empty() ? std::vector<std::string>{base.algo} : split_list(grid.algos);
    std::vector<std::uint64_t> seeds;
    for (const auto& s : grid.seeds.empty() ? std::vector<std::string>{} : split_list(grid.seeds))
        seeds.push_back(static_cast<std::uint64_t>(to_double(s, "--seeds")));
    if (seeds.empty()) seeds.push_back(base.seed);
    std::vector<double> alphas;
    for (const auto& a : grid.alphas.empty() ? std::vector<std::string>{} : split_list(grid.alphas))
        alphas.push_back(to_double(a, "--alphas"));
    if (alphas.empty()) alphas.push_back(base.alpha);

    std::vector<ExperimentConfig> runs;
    for (const auto& algo : algos)
        for (double alpha : alphas)
            for (std::uint64_t seed : seeds) {
                ExperimentConfig c = base;
                c.algo = algo;
                c.alpha = alpha;
                c.seed = seed;
                c.out.clear();
                if (!grid.out_dir.empty()) {
                    std::ostringstream name;
                    name << algo << "_alpha" << alpha << "_seed" << seed << ".csv";
                    c.out = (std::filesystem::path(grid.out_dir) / name.str()).string();
                }
                // fail on a bad grid point before any worker starts
                ipd::bench::validate_config(c);
                runs.push_back(std::move(c));
            }
    if (!grid.out_dir.empty()) std::filesystem::create_directories(grid.out_dir);

    std::vector<std::string> lines(runs.size());
    std::vector<int> codes(runs.size(), kExitConverged);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < runs.size(); i = next++) {
            std::ostringstream line;
            line << "seed=" << runs[i].seed << " alpha=" << ipd::format_double(runs[i].alpha) << ' ';
            try {
                const ipd::bench::Summary s = ipd::bench::run_experiment(runs[i]);
                line << ipd::bench::summary_line(s);
                codes[i] = exit_code(s.status);
            } catch (const std::exception& e) {
                line << "algo=" << runs[i].algo << " error=\"" << e.what() << '"';
                codes[i] = kExitInvalid;
            }
            lines[i] = line.str();
        }
    };
    const unsigned jobs = std::max(1u, std::min<unsigned>(grid.jobs, static_cast<unsigned>(runs.size())));
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < jobs; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    int code = kExitConverged;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        std::cout << lines[i] << '\n';
        if (codes[i] == kExitInvalid) code = kExitInvalid;
        else if (codes[i] == kExitMaxIters && code == kExitConverged) code = kExitMaxIters;
    }
    return code;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Inertial primal-dual solvers: run, sweep or validate an experiment."};
    app.require_subcommand(1);

    ConfigFlags solve_flags, validate_flags, sweep_flags;
    bool print_config = false;
    auto* solve = app.add_subcommand("solve", "run one experiment");
    solve_flags.attach(*solve);
    solve->add_flag("--print-config", print_config, "print the resolved config as JSON");

    auto* validate = app.add_subcommand("validate", "check all step and schedule conditions without solving");
    validate_flags.attach(*validate);
    validate->add_flag("--print-config", print_config, "print the resolved config as JSON");

    SweepGrid grid;
    auto* sweep = app.add_subcommand("sweep", "run a grid over algorithms, inertia and seeds");
    sweep_flags.attach(*sweep);
    sweep->add_option("--algos", grid.algos, "comma-separated algorithm ids");
    sweep->add_option("--seeds", grid.seeds, "comma-separated seeds");
    sweep->add_option("--alphas", grid.alphas, "comma-separated inertia values");
    sweep->add_option("--out-dir", grid.out_dir, "directory for per-run CSV traces");
    sweep->add_option("--jobs", grid.jobs, "parallel workers")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitInvalid;
    }

    try {
        if (*solve) return cmd_solve(solve_flags.build(), print_config);
        if (*validate) return cmd_validate(validate_flags.build(), print_config);
        return cmd_sweep(sweep_flags.build(), grid);
    } catch (const ipd::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInvalid;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInvalid;
    }
}
