#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <set>

#include "dgdi/errors.hpp"
#include "dgdi/geograph.hpp"
#include "dgdi/rng.hpp"
#include "doctest.h"

using namespace dgdi;

namespace {

std::vector<GeoLocation> make_locations(const std::vector<std::pair<double, double>>& coords) {
    std::vector<GeoLocation> out;
    for (std::size_t i = 0; i < coords.size(); ++i) {
        out.push_back({"L" + std::to_string(i), static_cast<int>(i), coords[i].first,
                       coords[i].second, ""});
    }
    return out;
}

}  // namespace

TEST_CASE("haversine distances") {
    CHECK(haversine_km(22.3, 114.2, 22.3, 114.2) == 0.0);
    // one degree of latitude = R * pi / 180
    CHECK(haversine_km(0, 0, 1, 0) == doctest::Approx(111.195).epsilon(1e-5));
    // antipodal along the equator = half circumference
    CHECK(haversine_km(0, 0, 0, 180) == doctest::Approx(20015.1).epsilon(3e-5));
    CHECK(haversine_km(10, 20, 30, 40) == haversine_km(30, 40, 10, 20));
    CHECK_THROWS_AS(haversine_km(95, 0, 0, 0), ValidationError);
    CHECK_THROWS_AS(haversine_km(0, 181, 0, 0), ValidationError);
}

TEST_CASE("build_graph thresholding") {
    // 1 km ~ 0.008993 degrees of latitude
    const double deg_per_km = 1.0 / 111.195;

    SUBCASE("two points 1 km apart are connected at 3 km") {
        auto g = build_graph(make_locations({{0.0, 0.0}, {deg_per_km, 0.0}}), 3.0);
        CHECK(g.edges.size() == 1);
        CHECK(g.edges[0] == std::pair<int, int>{0, 1});
    }
    SUBCASE("two points 5 km apart are not") {
        auto g = build_graph(make_locations({{0.0, 0.0}, {5.0 * deg_per_km, 0.0}}), 3.0);
        CHECK(g.edges.empty());
    }
    SUBCASE("collinear points at 0, 2 and 4 km chain up") {
        auto g = build_graph(
            make_locations({{0.0, 0.0}, {2.0 * deg_per_km, 0.0}, {4.0 * deg_per_km, 0.0}}), 3.0);
        CHECK(g.edges == std::vector<std::pair<int, int>>{{0, 1}, {1, 2}});
    }
    SUBCASE("threshold is strict") {
        auto g = build_graph(make_locations({{0.0, 0.0}, {3.0 * deg_per_km, 0.0}}), 3.0);
        // distance is 3 km up to rounding; nudge to exactly-at-threshold via threshold = distance
        const double d = haversine_km(0.0, 0.0, 3.0 * deg_per_km, 0.0);
        auto g2 = build_graph(make_locations({{0.0, 0.0}, {3.0 * deg_per_km, 0.0}}), d);
        CHECK(g2.edges.empty());
        (void)g;
    }
    SUBCASE("duplicate ids rejected") {
        auto locs = make_locations({{0.0, 0.0}, {1.0, 1.0}});
        locs[1].id = locs[0].id;
        CHECK_THROWS_AS(build_graph(locs, 3.0), ValidationError);
    }
}

TEST_CASE("grid prune agrees with the full pair scan") {
    Rng rng(5150);
    for (int trial = 0; trial < 8; ++trial) {
        std::vector<std::pair<double, double>> coords;
        const int n = 70 + static_cast<int>(rng.below(60));  // above the grid cutoff
        for (int i = 0; i < n; ++i) {
            coords.emplace_back(rng.uniform(22.0, 22.6), rng.uniform(113.8, 114.4));
        }
        auto g = build_graph(make_locations(coords), 3.0);
        std::vector<std::pair<int, int>> brute;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j)
                if (haversine_km(coords[i].first, coords[i].second, coords[j].first,
                                 coords[j].second) < 3.0)
                    brute.emplace_back(i, j);
        CHECK(g.edges == brute);
    }
}

TEST_CASE("normalize_adjacency") {
    SUBCASE("isolated node keeps a unit self-loop") {
        auto m = normalize_adjacency({}, 1);
        CHECK(m.at(0, 0) == 1.0);
        CHECK(m.nnz() == 1);
    }
    SUBCASE("two connected nodes give all entries 0.5") {
        auto m = normalize_adjacency({{0, 1}}, 2);
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) CHECK(m.at(i, j) == doctest::Approx(0.5).epsilon(1e-15));
    }
    SUBCASE("3-node path") {
        auto m = normalize_adjacency({{0, 1}, {1, 2}}, 3);
        CHECK(m.at(0, 1) == doctest::Approx(1.0 / std::sqrt(6.0)).epsilon(1e-15));
        CHECK(m.at(0, 0) == doctest::Approx(0.5).epsilon(1e-15));   // degree 2 with self-loop
        CHECK(m.at(1, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
        CHECK(m.at(0, 2) == 0.0);
    }
    SUBCASE("self-edges rejected") {
        CHECK_THROWS_AS(normalize_adjacency({{1, 1}}, 2), ValidationError);
    }
}

TEST_CASE("normalized adjacency invariants") {
    Rng rng(77);
    for (int trial = 0; trial < 10; ++trial) {
        const int n = 2 + static_cast<int>(rng.below(12));
        std::vector<std::pair<int, int>> edges;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j)
                if (rng.uniform() < 0.3) edges.emplace_back(i, j);
        auto m = normalize_adjacency(edges, n);
        std::vector<int> degree(n, 1);
        for (auto [i, j] : edges) {
            ++degree[i];
            ++degree[j];
        }
        for (int i = 0; i < n; ++i) {
            CHECK(m.at(i, i) == doctest::Approx(1.0 / degree[i]).epsilon(1e-15));
            for (int j = 0; j < n; ++j) {
                CHECK(m.at(i, j) == m.at(j, i));  // exact: entries share the same product
                CHECK(m.at(i, j) >= 0.0);
                CHECK(m.at(i, j) <= 1.0);
            }
        }
    }
}

TEST_CASE("graph construction is order independent") {
    Rng rng(31);
    std::vector<std::pair<double, double>> coords;
    for (int i = 0; i < 40; ++i) coords.emplace_back(rng.uniform(22.0, 22.2), rng.uniform(114.0, 114.2));
    auto base = build_graph(make_locations(coords), 3.0);

    std::vector<int> order(coords.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    rng.shuffle(order);
    std::vector<std::pair<double, double>> shuffled;
    for (int idx : order) shuffled.push_back(coords[static_cast<std::size_t>(idx)]);
    auto permuted = build_graph(make_locations(shuffled), 3.0);

    // map shuffled indices back and compare edge sets
    std::set<std::pair<int, int>> relabeled;
    for (auto [i, j] : permuted.edges) {
        int a = order[static_cast<std::size_t>(i)];
        int b = order[static_cast<std::size_t>(j)];
        relabeled.insert({std::min(a, b), std::max(a, b)});
    }
    std::set<std::pair<int, int>> expected(base.edges.begin(), base.edges.end());
    CHECK(relabeled == expected);
}

TEST_CASE("corrupt_embeddings") {
    SUBCASE("single row is returned unchanged") {
        Tensor u = Tensor::matrix(1, 3, {1, 2, 3});
        CHECK(corrupt_embeddings(u, 9).data == u.data);
    }
    SUBCASE("rows are a permutation and never the identity") {
        Rng rng(4);
        for (int trial = 0; trial < 30; ++trial) {
            const int n = 2 + static_cast<int>(rng.below(6));
            Tensor u({n, 2});
            for (int i = 0; i < n; ++i) {
                u.at(i, 0) = i;
                u.at(i, 1) = 10.0 * i;
            }
            Tensor c = corrupt_embeddings(u, rng.next_u64());
            std::multiset<double> a(u.data.begin(), u.data.end());
            std::multiset<double> b(c.data.begin(), c.data.end());
            CHECK(a == b);
            CHECK(c.data != u.data);  // identity rejected
        }
    }
    SUBCASE("fixed seed is reproducible") {
        auto p1 = corruption_permutation(5, 42);
        auto p2 = corruption_permutation(5, 42);
        CHECK(p1 == p2);
    }
}
