#pragma once

#include "ravine/embedding.hpp"
#include "ravine/error.hpp"

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <set>
#include <utility>
#include <vector>

namespace ravine {

struct ClusteringParams {
    std::size_t min_cluster_size = 2;
    // Pairs at cosine distance >= max_distance are never density-connected;
    // 1.0 means orthogonal vectors do not share a neighbourhood.
    double max_distance = 1.0;
};

struct ClusteringResult {
    std::vector<std::vector<std::size_t>> clusters; // each sorted; ordered by first index
    std::vector<std::size_t> outliers;              // sorted
};

namespace detail {

struct DisjointSet {
    std::vector<std::size_t> parent;

    explicit DisjointSet(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), std::size_t{0}); }

    std::size_t find(std::size_t x)
    {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    }

    void unite(std::size_t a, std::size_t b)
    {
        a = find(a);
        b = find(b);
        if (a != b)
            parent[std::max(a, b)] = std::min(a, b);
    }
};

/// Single-linkage hierarchy over mutual-reachability distances. Edges of
/// equal weight merge in one step, so a node may have more than two
/// children and the shape does not depend on input order.
struct Hierarchy {
    struct Node {
        std::vector<std::size_t> children; // empty for points
        double distance = 0.0;
        std::size_t size = 1;
    };
    std::vector<Node> nodes;     // points first, then merges
    std::vector<std::size_t> tops; // roots of the forest
};

inline double sum_sorted(std::vector<double> values)
{
    std::sort(values.begin(), values.end());
    double s = 0.0;
    for (double v : values)
        s += v;
    return s;
}

class Condenser {
public:
    Condenser(const Hierarchy& h, std::size_t min_size) : h_(h), min_size_(min_size) {}

    struct Cluster {
        double birth = 0.0;
        std::vector<double> contributions;
        std::vector<std::size_t> children;
        std::size_t node = 0;
    };

    std::vector<Cluster> clusters;

    std::size_t open(std::size_t node, double birth)
    {
        clusters.push_back({birth, {}, {}, node});
        const std::size_t id = clusters.size() - 1;
        descend(id, node);
        return id;
    }

    /// Excess-of-mass selection below cluster `id`.
    std::pair<double, std::vector<std::size_t>> select(std::size_t id) const
    {
        const Cluster& c = clusters[id];
        const double own = sum_sorted(c.contributions);
        if (c.children.empty())
            return {own, {id}};
        std::vector<double> child_values;
        std::vector<std::size_t> chosen;
        for (auto child : c.children) {
            auto [value, ids] = select(child);
            child_values.push_back(value);
            chosen.insert(chosen.end(), ids.begin(), ids.end());
        }
        const double below = sum_sorted(child_values);
        if (below > own)
            return {below, chosen};
        return {own, {id}};
    }

    void collect_points(std::size_t node, std::vector<std::size_t>& out) const
    {
        const auto& n = h_.nodes[node];
        if (n.children.empty()) {
            out.push_back(node);
            return;
        }
        for (auto c : n.children)
            collect_points(c, out);
    }

private:
    static double lambda_of(double distance) { return 1.0 / std::max(distance, 1e-12); }

    void descend(std::size_t id, std::size_t node)
    {
        const auto& n = h_.nodes[node];
        const double lambda = lambda_of(n.distance);
        const double birth = clusters[id].birth;
        std::vector<std::size_t> big;
        for (auto c : n.children) {
            if (h_.nodes[c].size >= min_size_)
                big.push_back(c);
            else
                clusters[id].contributions.push_back(static_cast<double>(h_.nodes[c].size) * (lambda - birth));
        }
        if (big.size() == 1) {
            descend(id, big.front());
            return;
        }
        for (auto c : big) {
            clusters[id].contributions.push_back(static_cast<double>(h_.nodes[c].size) * (lambda - birth));
            const std::size_t child = open(c, lambda);
            clusters[id].children.push_back(child);
        }
    }

    const Hierarchy& h_;
    std::size_t min_size_;
};

inline Hierarchy build_hierarchy(const std::vector<std::vector<double>>& mr, double cutoff)
{
    const std::size_t n = mr.size();
    Hierarchy h;
    h.nodes.resize(n);
    struct Edge {
        double w;
        std::size_t a, b;
    };
    std::vector<Edge> edges;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (mr[i][j] < cutoff)
                edges.push_back({mr[i][j], i, j});
    std::sort(edges.begin(), edges.end(), [](const Edge& x, const Edge& y) {
        if (x.w != y.w)
            return x.w < y.w;
        return std::pair(x.a, x.b) < std::pair(y.a, y.b);
    });

    DisjointSet dsu(n);
    std::vector<std::size_t> node_of(n);
    std::iota(node_of.begin(), node_of.end(), std::size_t{0});
    for (std::size_t g = 0; g < edges.size();) {
        std::size_t end = g;
        while (end < edges.size() && edges[end].w == edges[g].w)
            ++end;
        std::vector<std::pair<std::size_t, std::size_t>> joined; // old node ids per edge
        std::vector<std::size_t> anchors;
        for (std::size_t e = g; e < end; ++e) {
            auto ra = dsu.find(edges[e].a), rb = dsu.find(edges[e].b);
            if (ra != rb) {
                joined.emplace_back(node_of[ra], node_of[rb]);
                anchors.push_back(edges[e].a);
            }
        }
        for (std::size_t e = g; e < end; ++e)
            dsu.unite(edges[e].a, edges[e].b);
        std::vector<std::pair<std::size_t, std::set<std::size_t>>> merges; // new root -> old nodes
        for (std::size_t k = 0; k < joined.size(); ++k) {
            auto root = dsu.find(anchors[k]);
            auto it = std::find_if(merges.begin(), merges.end(), [&](const auto& m) { return m.first == root; });
            if (it == merges.end()) {
                merges.push_back({root, {}});
                it = std::prev(merges.end());
            }
            it->second.insert(joined[k].first);
            it->second.insert(joined[k].second);
        }
        for (auto& [root, olds] : merges) {
            Hierarchy::Node node;
            node.distance = edges[g].w;
            node.size = 0;
            for (auto o : olds) {
                node.children.push_back(o);
                node.size += h.nodes[o].size;
            }
            h.nodes.push_back(std::move(node));
            node_of[root] = h.nodes.size() - 1;
        }
        g = end;
    }
    std::set<std::size_t> tops;
    for (std::size_t i = 0; i < n; ++i)
        tops.insert(node_of[dsu.find(i)]);
    h.tops.assign(tops.begin(), tops.end());
    return h;
}

} // namespace detail

/// HDBSCAN* over a symmetric distance matrix, min_samples = min_cluster_size.
/// Connected components below `max_distance` are the top-level candidate
/// clusters; excess-of-mass selection picks stable clusters beneath them.
inline ClusteringResult hdbscan(const std::vector<std::vector<double>>& distance, const ClusteringParams& params)
{
    if (params.min_cluster_size < 2)
        throw Error("min_cluster_size must be >= 2");
    if (!(params.max_distance > 0.0))
        throw Error("max_distance must be > 0");
    const std::size_t n = distance.size();
    const std::size_t m = params.min_cluster_size;
    ClusteringResult result;
    if (n < m) {
        for (std::size_t i = 0; i < n; ++i)
            result.outliers.push_back(i);
        return result;
    }

    // Core distance: distance to the m-th nearest point, counting the point itself.
    std::vector<double> core(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> row = distance[i];
        row[i] = 0.0;
        std::nth_element(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(m - 1), row.end());
        core[i] = row[m - 1];
    }
    std::vector<std::vector<double>> mr(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j)
                mr[i][j] = std::max({core[i], core[j], distance[i][j]});

    auto hierarchy = detail::build_hierarchy(mr, params.max_distance);
    detail::Condenser condenser(hierarchy, m);
    std::vector<bool> clustered(n, false);
    for (auto top : hierarchy.tops) {
        if (hierarchy.nodes[top].size < m)
            continue;
        const std::size_t root = condenser.open(top, 1.0 / params.max_distance);
        for (auto id : condenser.select(root).second) {
            std::vector<std::size_t> points;
            condenser.collect_points(condenser.clusters[id].node, points);
            std::sort(points.begin(), points.end());
            for (auto p : points)
                clustered[p] = true;
            result.clusters.push_back(std::move(points));
        }
    }
    std::sort(result.clusters.begin(), result.clusters.end());
    for (std::size_t i = 0; i < n; ++i)
        if (!clustered[i])
            result.outliers.push_back(i);
    return result;
}

/// Cosine distance (1 - dot, clamped to [0, 2]) between unit vectors.
inline std::vector<std::vector<double>> cosine_distances(const std::vector<Embedding>& points)
{
    const std::size_t n = points.size();
    std::vector<std::vector<double>> d(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            d[i][j] = d[j][i] = std::clamp(1.0 - dot(points[i], points[j]), 0.0, 2.0);
    return d;
}

inline ClusteringResult hdbscan_cosine(const std::vector<Embedding>& points, const ClusteringParams& params)
{
    return hdbscan(cosine_distances(points), params);
}

} // namespace ravine
