#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dgdi/sparse.hpp"
#include "dgdi/tensor.hpp"

namespace dgdi {

struct GeoLocation {
    std::string id;
    int index = -1;
    double lat = 0.0;
    double lon = 0.0;
    std::string name;
};

// Locations with an edge between every pair closer than the distance
// threshold, plus the symmetric self-loop-normalized adjacency the GCN
// consumes.
struct GeometricGraph {
    int n_nodes = 0;
    std::vector<std::pair<int, int>> edges;  // i < j, deduplicated, sorted
    CsrMatrix norm_adj;
    std::vector<std::pair<double, double>> coords;  // (lat, lon)
};

// Great-circle distance on a 6371 km sphere. Coordinates in degrees.
double haversine_km(double lat1, double lon1, double lat2, double lon2);

// Edge (i, j) iff haversine < threshold_km, strictly. Pairs are pruned with a
// coarse lat/lon grid before the exact distance test.
GeometricGraph build_graph(const std::vector<GeoLocation>& locations, double threshold_km = 3.0);

// A_hat = D^(-1/2) (A + I) D^(-1/2) with degrees counted after self-loops.
CsrMatrix normalize_adjacency(const std::vector<std::pair<int, int>>& edges, int n_nodes);

// Uniform random permutation of [0, n); the identity is rejected for n > 1.
std::vector<int> corruption_permutation(int n, std::uint64_t seed);

// DGI negative: same rows as U in permuted order.
Tensor corrupt_embeddings(const Tensor& table, std::uint64_t seed);

}  // namespace dgdi
