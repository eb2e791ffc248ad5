#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ipd/error.hpp"

namespace ipd {

/// Undirected agent network. Nodes are 0-indexed internally; edge-list files
/// are 1-indexed. Each edge is stored once as (lo, hi) with lo < hi and edges
/// are sorted lexicographically, which fixes the layout of edge-indexed
/// vectors (dual slots, EdgeOperator output).
class AgentGraph
{
public:
    struct Edge
    {
        std::size_t lo;
        std::size_t hi;
    };

    /// One entry of a node's adjacency list.
    struct Incidence
    {
        std::size_t neighbor;
        std::size_t edge;
        bool is_lo; ///< true when this node is the smaller endpoint
    };

    AgentGraph(std::size_t num_nodes, const std::vector<std::pair<std::size_t, std::size_t>>& edges)
        : adjacency_(num_nodes)
    {
        if (num_nodes < 2) throw ValidationError("graph: at least two agents are required");
        std::set<std::pair<std::size_t, std::size_t>> canonical;
        for (auto [a, b] : edges) {
            if (a >= num_nodes || b >= num_nodes) {
                throw ValidationError("graph: edge endpoint out of range");
            }
            if (a == b) {
                throw ValidationError("graph: self loop at node " + std::to_string(a + 1) +
                                      " (the network must be connected and loop-free)");
            }
            if (!canonical.insert({std::min(a, b), std::max(a, b)}).second) {
                throw ValidationError("graph: duplicate edge {" + std::to_string(std::min(a, b) + 1) + "," +
                                      std::to_string(std::max(a, b) + 1) + "}");
            }
        }
        for (auto [lo, hi] : canonical) {
            const std::size_t e = edges_.size();
            edges_.push_back({lo, hi});
            adjacency_[lo].push_back({hi, e, true});
            adjacency_[hi].push_back({lo, e, false});
        }
        if (!connected()) {
            throw ValidationError("graph: network is disconnected (the network must be connected and loop-free)");
        }
    }

    std::size_t num_nodes() const noexcept { return adjacency_.size(); }
    std::size_t num_edges() const noexcept { return edges_.size(); }
    const std::vector<Edge>& edges() const noexcept { return edges_; }
    const std::vector<Incidence>& neighbors(std::size_t n) const { return adjacency_.at(n); }
    std::size_t degree(std::size_t n) const { return adjacency_.at(n).size(); }

    std::size_t max_degree() const
    {
        std::size_t d = 0;
        for (const auto& adj : adjacency_) d = std::max(d, adj.size());
        return d;
    }

private:
    bool connected() const
    {
        std::vector<bool> seen(num_nodes(), false);
        std::vector<std::size_t> stack{0};
        seen[0] = true;
        std::size_t count = 1;
        while (!stack.empty()) {
            const auto n = stack.back();
            stack.pop_back();
            for (const auto& inc : adjacency_[n]) {
                if (!seen[inc.neighbor]) {
                    seen[inc.neighbor] = true;
                    ++count;
                    stack.push_back(inc.neighbor);
                }
            }
        }
        return count == num_nodes();
    }

    std::vector<Edge> edges_;
    std::vector<std::vector<Incidence>> adjacency_;
};

inline AgentGraph make_path_graph(std::size_t n)
{
    std::vector<std::pair<std::size_t, std::size_t>> e;
    for (std::size_t i = 0; i + 1 < n; ++i) e.emplace_back(i, i + 1);
    return AgentGraph(n, e);
}

/// Cycle on n nodes; n = 2 degenerates to a single edge.
inline AgentGraph make_ring_graph(std::size_t n)
{
    if (n < 3) return make_path_graph(n);
    std::vector<std::pair<std::size_t, std::size_t>> e;
    for (std::size_t i = 0; i < n; ++i) e.emplace_back(i, (i + 1) % n);
    return AgentGraph(n, e);
}

inline AgentGraph make_complete_graph(std::size_t n)
{
    std::vector<std::pair<std::size_t, std::size_t>> e;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) e.emplace_back(i, j);
    return AgentGraph(n, e);
}

/// Parses "n m" pairs (1-indexed, whitespace separated, '#' comments). The
/// node count is max(min_nodes, largest index seen), so nodes that never
/// appear in any edge are isolated and rejected.
inline AgentGraph parse_edge_list(std::istream& in, std::size_t min_nodes = 0)
{
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    std::size_t max_index = 0;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
        std::istringstream ls(line);
        long long a = 0, b = 0;
        std::string extra;
        if (!(ls >> a >> b) || (ls >> extra) || a < 1 || b < 1) {
            throw ValidationError("edge list line " + std::to_string(lineno) + ": expected two 1-indexed node ids");
        }
        edges.emplace_back(static_cast<std::size_t>(a - 1), static_cast<std::size_t>(b - 1));
        max_index = std::max<std::size_t>(max_index, static_cast<std::size_t>(std::max(a, b)));
    }
    return AgentGraph(std::max(min_nodes, max_index), edges);
}

inline AgentGraph load_edge_list(const std::string& path, std::size_t min_nodes = 0)
{
    std::ifstream in(path);
    if (!in) throw Error("cannot open edge list '" + path + "'");
    return parse_edge_list(in, min_nodes);
}

/// `spec` is one of ring, path, complete, or a path to an edge-list file.
inline AgentGraph build_graph(const std::string& spec, std::size_t n)
{
    if (spec == "ring") return make_ring_graph(n);
    if (spec == "path") return make_path_graph(n);
    if (spec == "complete") return make_complete_graph(n);
    return load_edge_list(spec, n);
}

} // namespace ipd
