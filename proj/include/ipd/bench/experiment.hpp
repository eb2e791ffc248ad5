#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ipd/bench/dataset.hpp"
#include "ipd/distnet.hpp"
#include "ipd/graph.hpp"
#include "ipd/km_engine.hpp"
#include "ipd/minibatch.hpp"
#include "ipd/pd_algorithms.hpp"
#include "ipd/prox.hpp"
#include "ipd/smooth.hpp"
#include "ipd/trace.hpp"

namespace ipd::bench {

inline const std::vector<std::string>& algorithm_ids()
{
    static const std::vector<std::string> ids{"fb",      "condat",    "ipds",   "ipdsp",      "iadmm",
                                              "padmm",   "minibatch", "psmpds", "dist-padmm", "pdapds"};
    return ids;
}

inline bool is_batched(const std::string& algo) { return algo == "minibatch" || algo == "psmpds"; }
inline bool is_networked(const std::string& algo) { return algo == "dist-padmm" || algo == "pdapds"; }

struct ExperimentConfig
{
    std::string algo = "ipds";
    /// "lasso" or "logistic".
    std::string problem = "lasso";
    /// libsvm file; empty means synthetic data.
    std::string data;
    Index synth_m = 50;
    Index synth_q = 20;
    Index synth_k = 5;
    double synth_noise = 0.01;
    double lambda = 0.1;
    std::size_t batches = 4;
    std::string graph = "ring";
    double alpha = 0.3;
    double theta = 0.01;
    /// NaN picks the delta_hat that maximizes the relaxation bound.
    double delta_hat = std::numeric_limits<double>::quiet_NaN();
    double rho_frac = 0.9;
    double gamma = 1.9;
    double r = 1.0;
    double s = 1.0;
    /// Seeds the synthetic data, and the sampler unless sampler_seed is set.
    std::uint64_t seed = 1;
    /// Sampler seed for psmpds and pdapds; 0 reuses `seed`.
    std::uint64_t sampler_seed = 0;
    long max_iters = 100000;
    double tol = 1e-10;
    /// CSV trace path; empty disables the trace.
    std::string out;
};

namespace detail {

inline bool same_double(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

} // namespace detail

/// Field-exact equality; two NaN delta_hat values compare equal.
inline bool operator==(const ExperimentConfig& a, const ExperimentConfig& b)
{
    using detail::same_double;
    return a.algo == b.algo && a.problem == b.problem && a.data == b.data && a.synth_m == b.synth_m &&
           a.synth_q == b.synth_q && a.synth_k == b.synth_k && same_double(a.synth_noise, b.synth_noise) &&
           same_double(a.lambda, b.lambda) && a.batches == b.batches && a.graph == b.graph &&
           same_double(a.alpha, b.alpha) && same_double(a.theta, b.theta) && same_double(a.delta_hat, b.delta_hat) &&
           same_double(a.rho_frac, b.rho_frac) && same_double(a.gamma, b.gamma) && same_double(a.r, b.r) &&
           same_double(a.s, b.s) && a.seed == b.seed && a.sampler_seed == b.sampler_seed && a.max_iters == b.max_iters && same_double(a.tol, b.tol) &&
           a.out == b.out;
}

inline void to_json(nlohmann::json& j, const ExperimentConfig& c)
{
    j = nlohmann::json{{"algo", c.algo},
                       {"problem", c.problem},
                       {"data", c.data},
                       {"synth", {{"m", c.synth_m}, {"q", c.synth_q}, {"k", c.synth_k}, {"noise", c.synth_noise}}},
                       {"lambda", c.lambda},
                       {"batches", c.batches},
                       {"graph", c.graph},
                       {"alpha", c.alpha},
                       {"theta", c.theta},
                       {"delta_hat", nullptr},
                       {"rho_frac", c.rho_frac},
                       {"gamma", c.gamma},
                       {"r", c.r},
                       {"s", c.s},
                       {"seed", c.seed},
                       {"sampler_seed", c.sampler_seed},
                       {"max_iters", c.max_iters},
                       {"tol", c.tol},
                       {"out", c.out}};
    if (!std::isnan(c.delta_hat)) j["delta_hat"] = c.delta_hat;
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline void from_json(const nlohmann::json& j, ExperimentConfig& c)
{
    if (!j.is_object()) throw ValidationError("config: expected a JSON object");
    static const std::vector<std::string> known{"algo",  "problem", "data",     "synth", "lambda", "batches",
                                                "graph", "alpha",   "theta",    "delta_hat", "rho_frac", "gamma",
                                                "r",     "s",       "seed",     "sampler_seed", "max_iters", "tol", "out"};
    for (const auto& [key, value] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw ValidationError("config: unknown key '" + key + "'");
        }
    }
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    try {
        get("algo", c.algo);
        get("problem", c.problem);
        get("data", c.data);
        if (j.contains("synth")) {
            const auto& sj = j.at("synth");
            if (sj.contains("m")) sj.at("m").get_to(c.synth_m);
            if (sj.contains("q")) sj.at("q").get_to(c.synth_q);
            if (sj.contains("k")) sj.at("k").get_to(c.synth_k);
            if (sj.contains("noise")) sj.at("noise").get_to(c.synth_noise);
        }
        get("lambda", c.lambda);
        get("batches", c.batches);
        get("graph", c.graph);
        get("alpha", c.alpha);
        get("theta", c.theta);
        if (j.contains("delta_hat")) {
            c.delta_hat = j.at("delta_hat").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                                      : j.at("delta_hat").get<double>();
        }
        get("rho_frac", c.rho_frac);
        get("gamma", c.gamma);
        get("r", c.r);
        get("s", c.s);
        get("seed", c.seed);
        get("sampler_seed", c.sampler_seed);
        get("max_iters", c.max_iters);
        get("tol", c.tol);
        get("out", c.out);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("config: ") + e.what());
    }
}

inline std::string serialize_config(const ExperimentConfig& c) { return nlohmann::json(c).dump(2); }

inline ExperimentConfig parse_config(const std::string& text)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("config: ") + e.what());
    }
    return j.get<ExperimentConfig>();
}

inline ExperimentConfig load_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw Error("cannot open config '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

/// Checks the scalar fields. Step and schedule conditions are checked
/// when the problem is built.
inline void validate_config(const ExperimentConfig& c)
{
    const auto& ids = algorithm_ids();
    if (std::find(ids.begin(), ids.end(), c.algo) == ids.end()) {
        std::string list;
        for (const auto& id : ids) list += (list.empty() ? "" : ", ") + id;
        throw ValidationError("unknown algorithm '" + c.algo + "' (expected one of: " + list + ")");
    }
    if (c.problem != "lasso" && c.problem != "logistic") {
        throw ValidationError("unknown problem '" + c.problem + "' (expected lasso or logistic)");
    }
    if (c.data.empty()) {
        if (c.synth_m < 1 || c.synth_q < 1) throw ValidationError("synth: need m >= 1 and q >= 1");
        if (c.synth_k < 0 || c.synth_k > c.synth_q) throw ValidationError("synth: sparsity must lie in [0, q]");
        if (!(c.synth_noise >= 0.0)) throw ValidationError("synth: noise must be nonnegative");
    }
    if (!(c.lambda >= 0.0) || !std::isfinite(c.lambda)) throw ValidationError("lambda must be finite and nonnegative");
    if (c.batches < 1) throw ValidationError("batches must be at least 1");
    if (is_networked(c.algo) && c.batches < 2) throw ValidationError("a network needs at least 2 agents");
    if (!(c.max_iters >= 1)) throw ValidationError("max_iters must be at least 1");
    if (!(c.tol > 0.0)) throw ValidationError("tol must be positive");
}

/// Loss data for one experiment: the full-sample loss and its batch split
/// share the same rows.
struct ProblemData
{
    std::string problem;
    std::shared_ptr<SparseMap> a;
    /// b for LASSO, labels for logistic regression.
    Vector target;
    double lambda = 0.0;
    std::vector<std::string> notices;

    Index dim() const { return a->cols(); }

    SmoothPtr full_loss() const
    {
        const double w = 1.0 / static_cast<double>(a->rows());
        if (problem == "lasso") return std::make_shared<LeastSquaresLoss>(a, target, w);
        return std::make_shared<LogisticLoss>(a, target, w);
    }

    ProxPtr regularizer() const { return std::make_shared<L1Norm>(dim(), lambda); }

    BatchedProblem split(std::size_t n) const
    {
        if (static_cast<Index>(n) > a->rows()) {
            throw ValidationError("cannot split " + std::to_string(a->rows()) + " samples into " + std::to_string(n) +
                                  " batches");
        }
        return problem == "lasso" ? split_lasso(*a, target, lambda, n) : split_problem(*a, target, lambda, n);
    }

    double objective(const Vector& x) const { return full_loss()->value(x) + regularizer()->value(x); }
};

inline ProblemData load_problem(const ExperimentConfig& c)
{
    ProblemData pd;
    pd.problem = c.problem;
    pd.lambda = c.lambda;
    if (!c.data.empty()) {
        // for LASSO the labels are real-valued regression targets
        Dataset ds = load_libsvm(c.data, 0, c.problem != "lasso");
        pd.a = ds.a;
        pd.notices = std::move(ds.notices);
        pd.target = std::move(ds.labels);
    } else if (c.problem == "lasso") {
        LassoInstance inst = synth_lasso(c.seed, c.synth_m, c.synth_q, c.synth_k, c.synth_noise);
        pd.a = inst.a;
        pd.target = std::move(inst.b);
    } else {
        Dataset ds = synth_logistic(c.seed, c.synth_m, c.synth_q, c.synth_k, c.synth_noise);
        pd.a = ds.a;
        pd.target = std::move(ds.labels);
    }
    return pd;
}

struct FbResult
{
    RunStatus status = RunStatus::max_iters;
    Vector x;
    long iterations = 0;
    /// ||x^{k+1} - x^k|| at the last step.
    double residual = 0.0;
    double objective = 0.0;
};

/// Plain forward-backward x <- prox_{tau g}(x - tau grad f(x)) until the
/// step length is at most stop.residual_tol. Trace rows share the
/// primal-dual header with a zero dual column.
inline FbResult run_forward_backward(const SmoothOracle& f, const ProxOracle& g, double tau, const StopCriteria& stop,
                                     Vector x, std::ostream* sink = nullptr)
{
    CsvWriter csv(sink, {"k", "objective", "primal_residual", "dual_residual"});
    FbResult res;
    for (long it = 1; it <= stop.max_iters; ++it) {
        Vector next = forward_backward_step(f, g, tau, x);
        res.residual = (next - x).norm();
        x = std::move(next);
        res.iterations = it;
        if (!x.allFinite()) throw Error("forward-backward: non-finite iterate");
        if (csv.enabled()) csv.row(it + 1, f.value(x) + g.value(x), res.residual, 0.0);
        if (res.residual <= stop.residual_tol) {
            res.status = RunStatus::converged;
            break;
        }
    }
    res.objective = f.value(x) + g.value(x);
    res.x = std::move(x);
    return res;
}

struct ReferenceSolution
{
    Vector x;
    double objective = 0.0;
    long iterations = 0;
};

/// Oracle optimum of f + g by forward-backward with tau = 1/l. Throws when
/// the iteration cap is reached first.
inline ReferenceSolution reference_solve(const SmoothOracle& f, const ProxOracle& g, double tol = 1e-12,
                                         long max_iters = 2000000)
{
    const Vector e = f.cocoercivity_diag();
    const double l = e.size() ? e.maxCoeff() : 0.0;
    const double tau = l > 0.0 ? 1.0 / l : 1.0;
    StopCriteria stop;
    stop.max_iters = max_iters;
    stop.residual_tol = tol;
    const FbResult r = run_forward_backward(f, g, tau, stop, Vector::Zero(f.dim()));
    if (r.status != RunStatus::converged) {
        throw Error("reference_solve: iteration cap " + std::to_string(max_iters) + " reached with step " +
                    format_double(r.residual));
    }
    return {r.x, r.objective, r.iterations};
}

inline ReferenceSolution reference_solve(const ProblemData& pd, double tol = 1e-12, long max_iters = 2000000)
{
    return reference_solve(*pd.full_loss(), *pd.regularizer(), tol, max_iters);
}

struct Summary
{
    std::string algo;
    RunStatus status = RunStatus::max_iters;
    long iterations = 0;
    double objective = 0.0;
    double reference_objective = 0.0;
    /// |objective - reference_objective|.
    double gap = 0.0;
    /// Largest distance of a copy from the copies' mean; 0 for centralized solvers.
    double consensus_error = 0.0;
    double fixed_point_residual = 0.0;
    double wall_seconds = 0.0;
    Vector x;
    std::vector<std::string> notices;
};

inline std::string summary_line(const Summary& s)
{
    std::ostringstream o;
    o << "algo=" << s.algo << " status=" << to_string(s.status) << " iterations=" << s.iterations
      << " objective=" << format_double(s.objective) << " reference=" << format_double(s.reference_objective)
      << " gap=" << format_double(s.gap) << " consensus=" << format_double(s.consensus_error)
      << " residual=" << format_double(s.fixed_point_residual) << " seconds=" << format_double(s.wall_seconds);
    return o.str();
}

/// A configured solver whose step and schedule conditions have been checked.
struct PreparedRun
{
    ProblemData data;
    /// One line per checked condition.
    std::vector<std::string> certificates;
    std::function<Summary(std::ostream*)> run;
};

namespace detail {

inline std::string describe(const StepCertificate& c)
{
    return "steps: " + c.condition + " (margin " + format_double(c.margin) + ")";
}

inline std::string describe(const InertialSchedule& s)
{
    return "schedule: alpha=" + format_double(s.alpha) + " theta=" + format_double(s.theta) +
           " delta_hat=" + format_double(s.delta_hat) + " rho=" + format_double(s.rho);
}

inline StopCriteria stop_of(const ExperimentConfig& c)
{
    StopCriteria stop;
    stop.max_iters = c.max_iters;
    stop.residual_tol = c.tol;
    return stop;
}

inline InertialSchedule schedule_of(const ExperimentConfig& c, std::optional<double> averaged)
{
    return make_schedule(c.alpha, c.theta, c.delta_hat, c.rho_frac, averaged);
}

} // namespace detail

/// Builds the problem, steps and schedule named by the config and checks
/// every condition. Nothing iterates until PreparedRun::run is called.
inline PreparedRun prepare_experiment(const ExperimentConfig& cfg)
{
    validate_config(cfg);
    PreparedRun pr;
    pr.data = load_problem(cfg);
    const auto data = std::make_shared<ProblemData>(pr.data);
    const StopCriteria stop = detail::stop_of(cfg);
    const std::string algo = cfg.algo;
    auto& certs = pr.certificates;
    certs.push_back("problem: " + cfg.problem + " with " + std::to_string(data->a->rows()) + " samples, " +
                    std::to_string(data->dim()) + " features, lambda=" + format_double(cfg.lambda));

    auto summary_of = [algo](RunStatus st, long it, double obj, double ce, double res, Vector x) {
        Summary s;
        s.algo = algo;
        s.status = st;
        s.iterations = it;
        s.objective = obj;
        s.consensus_error = ce;
        s.fixed_point_residual = res;
        s.x = std::move(x);
        return s;
    };

    if (algo == "fb") {
        const SmoothPtr f = data->full_loss();
        const ProxPtr g = data->regularizer();
        const double l = f->cocoercivity_diag().maxCoeff();
        const double tau = l > 0.0 ? 1.0 / l : 1.0;
        certs.push_back("steps: tau = 1/l = " + format_double(tau));
        pr.run = [=](std::ostream* sink) {
            const FbResult r = run_forward_backward(*f, *g, tau, stop, Vector::Zero(f->dim()), sink);
            return summary_of(r.status, r.iterations, r.objective, 0.0, r.residual, r.x);
        };
        return pr;
    }

    if (!is_batched(algo) && !is_networked(algo)) {
        const Index q = data->dim();
        auto p = std::make_shared<CompositeProblem>(data->full_loss(), std::make_shared<ZeroFunction>(q),
                                                    data->regularizer(),
                                                    std::make_shared<SparseMap>(SparseMap::identity(q)));
        const PrimalDualState start = PrimalDualState::start(Vector::Zero(q), Vector::Zero(q));
        auto finish = [summary_of](const PdRunResult& r) {
            return summary_of(r.status, r.iterations, r.objective, 0.0, r.fixed_point_residual, r.state.x_curr);
        };
        if (algo == "condat") {
            const PdsSteps sc = default_scalar_steps(*p, cfg.gamma, cfg.r);
            const CondatSteps steps = make_condat_steps(*p, sc.tau[0], sc.sigma[0]);
            const double rho = cfg.rho_frac * steps.delta;
            certs.push_back("steps: tau=" + format_double(steps.tau) + " sigma=" + format_double(steps.sigma) +
                            " delta=" + format_double(steps.delta));
            certs.push_back("relaxation: rho=" + format_double(rho));
            pr.run = [=](std::ostream* sink) { return finish(solve_condat(*p, steps, rho, stop, start, sink)); };
        } else if (algo == "ipds" || algo == "ipdsp") {
            const PdsSteps steps =
                algo == "ipds" ? default_scalar_steps(*p, cfg.gamma, cfg.r)
                               : build_diag_preconditioner(*p->d, p->cocoercivity(), cfg.gamma, cfg.r, cfg.s).pds_steps();
            std::optional<double> averaged;
            if (algo == "ipds") averaged = pds_averaged_constant(*p, steps.tau[0], steps.sigma[0]);
            certs.push_back(detail::describe(validate_step_sizes(*p, steps)));
            const InertialSchedule sched = detail::schedule_of(cfg, averaged);
            certs.push_back(detail::describe(sched));
            pr.run = [=](std::ostream* sink) { return finish(solve_ipds(*p, steps, sched, stop, start, sink)); };
        } else {
            const AdmmGeometry geom(*p->d);
            const AdmmSteps steps = default_admm_steps(*p, geom, cfg.gamma, cfg.r, algo == "iadmm");
            certs.push_back(detail::describe(validate_admm_steps(*p, geom, steps)));
            const Vector ebar = geom.lift_cocoercivity(p->cocoercivity());
            const InertialSchedule sched = detail::schedule_of(cfg, minibatch_averaged_constant(ebar, steps));
            certs.push_back(detail::describe(sched));
            pr.run = [=](std::ostream* sink) { return finish(solve_iadmm(*p, steps, sched, stop, start, sink)); };
        }
        return pr;
    }

    auto bp = std::make_shared<BatchedProblem>(data->split(cfg.batches));
    const AdmmSteps steps = default_batch_steps(bp->e_hat(), cfg.gamma, cfg.r, cfg.s);
    certs.push_back(detail::describe(validate_batch_steps(bp->e_hat(), steps)));
    const InertialSchedule sched = detail::schedule_of(cfg, minibatch_averaged_constant(bp->e_hat(), steps));
    certs.push_back(detail::describe(sched));
    const std::uint64_t seed = cfg.sampler_seed ? cfg.sampler_seed : cfg.seed;

    if (is_batched(algo)) {
        const MinibatchState start = MinibatchState::zeros(cfg.batches, bp->dim());
        auto finish = [summary_of](const MinibatchRunResult& r) {
            return summary_of(r.status, r.iterations, r.objective, r.consensus_error, r.fixed_point_residual,
                              r.state.x.mean());
        };
        if (algo == "minibatch") {
            pr.run = [=](std::ostream* sink) { return finish(solve_minibatch(*bp, steps, sched, stop, start, sink)); };
        } else {
            const CoordinateSampler sampler = CoordinateSampler::uniform_singletons(cfg.batches);
            certs.push_back("sampler: uniform single batch, seed " + std::to_string(seed));
            pr.run = [=](std::ostream* sink) {
                Rng rng(seed);
                return finish(solve_psmpds(*bp, steps, sched, sampler, rng, stop, start, sink));
            };
        }
        return pr;
    }

    auto graph = std::make_shared<const AgentGraph>(build_graph(cfg.graph, cfg.batches));
    auto np = std::make_shared<NetworkProblem>(graph, *bp);
    certs.push_back("graph: " + std::to_string(graph->num_nodes()) + " agents, " +
                    std::to_string(graph->num_edges()) + " edges");
    const DistState start = DistState::start(*graph, BlockVector(static_cast<Index>(cfg.batches), bp->dim()));
    auto finish = [summary_of](const DistRunResult& r) {
        return summary_of(r.status, r.iterations, r.objective, r.consensus_error, r.fixed_point_residual,
                          r.state.x.mean());
    };
    if (algo == "dist-padmm") {
        pr.run = [=](std::ostream* sink) { return finish(solve_dist_padmm(*np, steps, sched, stop, start, sink)); };
    } else {
        const ActivationSchedule activation = CoordinateSampler::uniform_singletons(cfg.batches);
        certs.push_back("activation: one uniformly random agent per tick, seed " + std::to_string(seed));
        pr.run = [=](std::ostream* sink) {
            Rng rng(seed);
            return finish(solve_pdapds(*np, steps, sched, activation, rng, stop, start, sink));
        };
    }
    return pr;
}

/// Runs one experiment. The trace goes to `sink` when given, otherwise to
/// cfg.out when set. The summary carries the gap to reference_solve.
inline Summary run_experiment(const ExperimentConfig& cfg, std::ostream* sink = nullptr)
{
    PreparedRun pr = prepare_experiment(cfg);
    std::ofstream file;
    if (!sink && !cfg.out.empty()) {
        file.open(cfg.out);
        if (!file) throw Error("cannot write trace '" + cfg.out + "'");
        sink = &file;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Summary s = pr.run(sink);
    s.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const ReferenceSolution ref = reference_solve(pr.data);
    s.reference_objective = ref.objective;
    s.gap = std::abs(s.objective - ref.objective);
    s.notices = pr.data.notices;
    return s;
}

} // namespace ipd::bench
