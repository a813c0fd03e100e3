#include "dgdi/geograph.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "dgdi/errors.hpp"
#include "dgdi/rng.hpp"

namespace dgdi {

namespace {

constexpr double kEarthRadiusKm = 6371.0;
constexpr double kPi = 3.14159265358979323846;

void check_coords(double lat, double lon) {
    if (!(lat >= -90.0 && lat <= 90.0)) {
        throw ValidationError("latitude " + std::to_string(lat) + " outside [-90, 90]");
    }
    if (!(lon >= -180.0 && lon <= 180.0)) {
        throw ValidationError("longitude " + std::to_string(lon) + " outside [-180, 180]");
    }
}

}  // namespace

double haversine_km(double lat1, double lon1, double lat2, double lon2) {
    check_coords(lat1, lon1);
    check_coords(lat2, lon2);
    const double phi1 = lat1 * kPi / 180.0;
    const double phi2 = lat2 * kPi / 180.0;
    const double dphi = (lat2 - lat1) * kPi / 180.0;
    const double dlam = (lon2 - lon1) * kPi / 180.0;
    const double sp = std::sin(dphi / 2.0);
    const double sl = std::sin(dlam / 2.0);
    const double a = sp * sp + std::cos(phi1) * std::cos(phi2) * sl * sl;
    return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(a)));
}

GeometricGraph build_graph(const std::vector<GeoLocation>& locations, double threshold_km) {
    if (locations.empty()) throw ValidationError("build_graph: no locations");
    if (!(threshold_km > 0.0)) throw ValidationError("build_graph: threshold must be positive");
    {
        std::set<std::string> ids;
        for (const auto& l : locations) {
            check_coords(l.lat, l.lon);
            if (!ids.insert(l.id).second) {
                throw ValidationError("build_graph: duplicate location id '" + l.id + "'");
            }
        }
    }
    const int n = static_cast<int>(locations.size());
    GeometricGraph g;
    g.n_nodes = n;
    g.coords.reserve(locations.size());
    for (const auto& l : locations) g.coords.emplace_back(l.lat, l.lon);

    // Coarse grid prune: one degree of latitude is ~111.19 km, so cells of
    // threshold_km (in degrees, with a generous longitude scale) guarantee
    // that any pair under the threshold lands in the same or adjacent cells.
    // Near the poles the longitude scale degenerates; fall back to the full
    // pair scan there.
    double max_abs_lat = 0.0;
    for (const auto& [lat, lon] : g.coords) max_abs_lat = std::max(max_abs_lat, std::abs(lat));

    auto test_pair = [&](int i, int j) {
        const auto& [lat_i, lon_i] = g.coords[i];
        const auto& [lat_j, lon_j] = g.coords[j];
        if (haversine_km(lat_i, lon_i, lat_j, lon_j) < threshold_km) {
            g.edges.emplace_back(std::min(i, j), std::max(i, j));
        }
    };

    if (max_abs_lat > 80.0 || n < 64) {
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) test_pair(i, j);
    } else {
        const double cell_lat = threshold_km / 110.0;
        const double cell_lon = threshold_km / (110.0 * std::cos(max_abs_lat * kPi / 180.0));
        std::map<std::pair<long, long>, std::vector<int>> cells;
        auto cell_of = [&](int i) {
            return std::make_pair(static_cast<long>(std::floor(g.coords[i].first / cell_lat)),
                                  static_cast<long>(std::floor(g.coords[i].second / cell_lon)));
        };
        for (int i = 0; i < n; ++i) cells[cell_of(i)].push_back(i);
        for (const auto& [key, members] : cells) {
            for (long dr = -1; dr <= 1; ++dr) {
                for (long dc = -1; dc <= 1; ++dc) {
                    auto it = cells.find({key.first + dr, key.second + dc});
                    if (it == cells.end()) continue;
                    for (int i : members) {
                        for (int j : it->second) {
                            if (i < j) test_pair(i, j);
                        }
                    }
                }
            }
        }
    }

    std::sort(g.edges.begin(), g.edges.end());
    g.edges.erase(std::unique(g.edges.begin(), g.edges.end()), g.edges.end());
    g.norm_adj = normalize_adjacency(g.edges, n);
    return g;
}

CsrMatrix normalize_adjacency(const std::vector<std::pair<int, int>>& edges, int n_nodes) {
    if (n_nodes < 1) throw ValidationError("normalize_adjacency: need at least one node");
    std::vector<std::vector<int>> adj(n_nodes);
    for (const auto& [i, j] : edges) {
        if (i < 0 || j < 0 || i >= n_nodes || j >= n_nodes) {
            throw IndexError("normalize_adjacency: edge endpoint out of range");
        }
        if (i == j) throw ValidationError("normalize_adjacency: self-edge in raw edge list");
        adj[i].push_back(j);
        adj[j].push_back(i);
    }
    std::vector<double> inv_sqrt_deg(n_nodes);
    for (int i = 0; i < n_nodes; ++i) {
        std::sort(adj[i].begin(), adj[i].end());
        adj[i].erase(std::unique(adj[i].begin(), adj[i].end()), adj[i].end());
        inv_sqrt_deg[i] = 1.0 / std::sqrt(static_cast<double>(adj[i].size()) + 1.0);
    }
    CsrMatrix m;
    m.n = n_nodes;
    m.row_ptr.reserve(n_nodes + 1);
    m.row_ptr.push_back(0);
    for (int i = 0; i < n_nodes; ++i) {
        bool self_emitted = false;
        auto emit_self = [&]() {
            m.col.push_back(i);
            m.val.push_back(inv_sqrt_deg[i] * inv_sqrt_deg[i]);
            self_emitted = true;
        };
        for (int j : adj[i]) {
            if (!self_emitted && j > i) emit_self();
            m.col.push_back(j);
            m.val.push_back(inv_sqrt_deg[i] * inv_sqrt_deg[j]);
        }
        if (!self_emitted) emit_self();
        m.row_ptr.push_back(static_cast<int>(m.col.size()));
    }
    return m;
}

std::vector<int> corruption_permutation(int n, std::uint64_t seed) {
    std::vector<int> perm(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
    if (n <= 1) return perm;
    Rng rng(seed);
    auto is_identity = [&]() {
        for (int i = 0; i < n; ++i)
            if (perm[static_cast<std::size_t>(i)] != i) return false;
        return true;
    };
    do {
        rng.shuffle(perm);
    } while (is_identity());
    return perm;
}

Tensor corrupt_embeddings(const Tensor& table, std::uint64_t seed) {
    if (table.rank() != 2) throw ShapeError("corrupt_embeddings: expected a rank-2 table");
    const auto perm = corruption_permutation(table.shape[0], seed);
    Tensor out(table.shape);
    const int f = table.shape[1];
    for (int i = 0; i < table.shape[0]; ++i)
        for (int j = 0; j < f; ++j) out.at(i, j) = table.at(perm[static_cast<std::size_t>(i)], j);
    return out;
}

}  // namespace dgdi
