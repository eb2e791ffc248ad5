// Sparse logistic regression split over a ring of agents: synchronous
// distributed PADMM+ against the asynchronous variant where one random
// agent wakes up per tick.

#include <iostream>
#include <limits>

#include "ipd/bench/dataset.hpp"
#include "ipd/ipd.hpp"

int main(int argc, char** argv)
{
    const std::size_t agents = argc > 1 ? std::stoul(argv[1]) : 6;
    const double lambda = 0.01;

    const ipd::bench::Dataset ds = ipd::bench::synth_logistic(7, 300, 40, 8, 1.0);
    auto graph = std::make_shared<const ipd::AgentGraph>(ipd::make_ring_graph(agents));
    const ipd::NetworkProblem np(graph, ipd::split_problem(*ds.a, ds.labels, lambda, agents));

    const ipd::AdmmSteps steps = ipd::default_batch_steps(np.local().e_hat());
    const double averaged = ipd::minibatch_averaged_constant(np.local().e_hat(), steps);
    const ipd::StopCriteria stop{500000, 1e-9, 100};
    const ipd::DistState start = ipd::DistState::start(*graph, ipd::BlockVector(static_cast<ipd::Index>(agents), np.dim()));

    std::cout << "agents=" << agents << " edges=" << graph->num_edges() << " features=" << np.dim() << "\n";
    for (double alpha : {0.0, 0.2}) {
        const ipd::InertialSchedule sched =
            ipd::make_schedule(alpha, 0.01, std::numeric_limits<double>::quiet_NaN(), 0.95, averaged);
        const ipd::DistRunResult sync = ipd::solve_dist_padmm(np, steps, sched, stop, start);
        ipd::Rng rng(1);
        const ipd::DistRunResult async =
            ipd::solve_pdapds(np, steps, sched, ipd::CoordinateSampler::uniform_singletons(agents), rng, stop, start);
        std::cout << "alpha=" << alpha << " rho=" << sched.rho << "\n"
                  << "  synchronous : " << ipd::to_string(sync.status) << " after " << sync.iterations
                  << " rounds, objective " << ipd::format_double(sync.objective) << ", consensus "
                  << sync.consensus_error << "\n"
                  << "  one agent/tick: " << ipd::to_string(async.status) << " after " << async.iterations
                  << " ticks (" << async.iterations / static_cast<long>(agents) << " rounds), objective "
                  << ipd::format_double(async.objective) << ", consensus " << async.consensus_error << "\n";
    }
}
