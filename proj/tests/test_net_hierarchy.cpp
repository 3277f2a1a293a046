#include <catch2/catch.hpp>

#include <set>
#include <sstream>

#include "doracle/net_hierarchy.hpp"
#include "test_util.hpp"

using namespace doracle;
using testutil::build_hierarchy;

TEST_CASE("first point forms a single root chain with no links") {
    auto s = testutil::line_points({0.0, 1.0, 5.0});
    HierarchyConfig cfg;
    NetHierarchy h(s, cfg);
    auto rep = h.insert_point(0);
    CHECK(rep.first_point);
    CHECK(h.root() == 0);
    CHECK(h.live_count() == 1);
    CHECK(h.links_at(0, 0).empty());
}

TEST_CASE("two 1D points at distance 1: both at level 0, one net point at level 1") {
    auto s = testutil::line_points({0.0, 1.0});
    auto h = build_hierarchy(s, 0.1);
    CHECK(h.top_level(0) >= 1);
    CHECK(h.top_level(1) == 0);  // packed by point 0 at level 1 (d = 1 <= 5/5)
    CHECK(h.parent_point(1) == 0);
    // Level 1 covers both: d(0,1) = 1 < 3.
    CHECK(s.distance(0, 1) < 0.6 * pow5(1));
    auto inv = h.verify_invariants();
    INFO(inv.failure);
    CHECK(inv.ok);
}

TEST_CASE("1D {0,4}: mutual 6-neighbor links at level 0 with cached distance 4") {
    auto s = testutil::line_points({0.0, 4.0});
    auto h = build_hierarchy(s);
    auto n0 = h.neighbor_set(0, 0, 6.0);
    auto n1 = h.neighbor_set(1, 0, 6.0);
    REQUIRE(n0.size() == 1);
    REQUIRE(n1.size() == 1);
    CHECK(n0[0].other == 1);
    CHECK(n0[0].dist == 4.0);
    CHECK(n1[0].other == 0);
}

TEST_CASE("neighbor_set of an isolated far point is empty; implicit nodes error") {
    auto s = testutil::line_points({0.0, 1.0, 10000.0});
    auto h = build_hierarchy(s);
    // Point 2 is far: at its low explicit levels (if any) nothing is close.
    // Its top occurrence has the sibling link; below that it is implicit.
    Level low = h.lowest_explicit(2);
    CHECK_THROWS_AS(h.links_at(2, low - 1), lookup_error);
    CHECK_THROWS_AS(h.neighbor_set(0, 0, 5.5), config_error);
}

TEST_CASE("neighbor_set equals a brute-force level scan on random data") {
    auto s = testutil::uniform_points(150, 2, 5);
    auto h = build_hierarchy(s, 0.25);
    for (Level i = h.i_min(); i <= h.i_max(); ++i) {
        auto members = h.level_members(i);
        for (PointId p : members) {
            if (!h.is_explicit(p, i)) continue;
            for (double b : {6.0, h.config().c()}) {
                std::set<PointId> expect;
                for (PointId q : members)
                    if (q != p && s.distance(p, q) <= b * pow5(i)) expect.insert(q);
                std::set<PointId> got;
                for (const auto& l : h.neighbor_set(p, i, b)) got.insert(l.other);
                REQUIRE(got == expect);
            }
        }
    }
}

TEST_CASE("invariants hold after inserting random 2D points") {
    for (double eps : {0.1, 0.5}) {
        auto s = testutil::uniform_points(400, 2, 9);
        auto h = build_hierarchy(s, eps);
        auto inv = h.verify_invariants();
        INFO("eps=" << eps << " failure=" << inv.failure);
        CHECK(inv.ok);
    }
}

TEST_CASE("invariants hold on a 1D grid and on clustered data") {
    auto g = testutil::grid_1d(200);
    auto h = build_hierarchy(g, 0.25);
    auto inv = h.verify_invariants();
    INFO(inv.failure);
    CHECK(inv.ok);

    // Two tight clusters far apart exercise deep chains.
    RngStream rng(4);
    std::vector<double> coords;
    for (int i = 0; i < 60; ++i) {
        coords.push_back(rng.next_double() * 0.01 + (i % 2 ? 1000.0 : 0.0));
        coords.push_back(rng.next_double() * 0.01);
    }
    auto cl = MetricSpace::from_points(std::move(coords), 2);
    auto hc = build_hierarchy(cl, 0.1);
    auto inv2 = hc.verify_invariants();
    INFO(inv2.failure);
    CHECK(inv2.ok);
}

TEST_CASE("duplicate insert and bad deletes raise errors") {
    auto s = testutil::line_points({0.0, 1.0, 2.5, 7.0});
    auto h = build_hierarchy(s);
    CHECK_THROWS_AS(h.insert_point(0), std::invalid_argument);
    CHECK_THROWS_AS(h.delete_point(7), lookup_error);
    h.delete_point(1);  // 1 of 4 stays below the rebuild fraction
    CHECK_THROWS_AS(h.delete_point(1), lookup_error);
    CHECK(h.is_deleted(1));
    CHECK(!h.contains(1));
}

TEST_CASE("rebuild fires at the tombstone fraction and preserves invariants") {
    auto s = testutil::uniform_points(300, 2, 21);
    auto h = build_hierarchy(s, 0.25);
    std::uint64_t epoch0 = h.epoch();
    bool rebuilt = false;
    for (PointId p = 0; p < 100; ++p) rebuilt = h.delete_point(p) || rebuilt;
    CHECK(rebuilt);
    CHECK(h.epoch() > epoch0);
    CHECK(h.live_count() == 200);
    CHECK(h.tombstone_count() == 0);
    auto inv = h.verify_invariants();
    INFO(inv.failure);
    CHECK(inv.ok);
}

TEST_CASE("cover ancestors stay within the cumulative covering radius") {
    auto s = testutil::uniform_points(250, 2, 13);
    auto h = build_hierarchy(s);
    RngStream rng(3);
    for (int t = 0; t < 2000; ++t) {
        PointId p = static_cast<PointId>(rng.next_below(250));
        Level i = static_cast<Level>(h.i_min() + static_cast<Level>(rng.next_below(
                                                     static_cast<std::uint64_t>(h.i_max() - h.i_min() + 1))));
        auto a = h.cover_ancestor(p, i);
        REQUIRE(s.distance(p, a.point) < 0.8 * pow5(i));
    }
    // Trivial endpoints.
    CHECK(h.cover_ancestor(5, h.i_max()).point == h.root());
    CHECK_THROWS_AS(h.cover_ancestor(5, h.i_max() + 1), lookup_error);
}

TEST_CASE("hierarchy size stays linear-ish across n (constant per family)") {
    double prev_ratio = 0.0;
    for (std::size_t n : {250u, 500u, 1000u, 2000u}) {
        auto s = testutil::uniform_points(n, 2, 33);
        auto h = build_hierarchy(s, 0.25);
        auto inv = h.verify_invariants();
        REQUIRE(inv.ok);
        double ratio = static_cast<double>(inv.explicit_nodes + inv.links) / n;
        if (prev_ratio > 0.0) CHECK(ratio <= prev_ratio * 1.6 + 8.0);
        prev_ratio = ratio;
    }
}

TEST_CASE("debug dump lists every explicit node and link once") {
    auto s = testutil::uniform_points(60, 2, 2);
    auto h = build_hierarchy(s);
    std::ostringstream os;
    h.debug_dump(os);
    std::istringstream is(os.str());
    std::string kind;
    std::size_t nodes = 0, links = 0;
    while (is >> kind) {
        if (kind == "node") {
            Level lvl;
            long long p, par;
            is >> lvl >> p >> par;
            REQUIRE(h.is_explicit(static_cast<PointId>(p), lvl));
            ++nodes;
        } else {
            REQUIRE(kind == "link");
            Level lvl;
            long long a, b;
            double d;
            is >> lvl >> a >> b >> d;
            REQUIRE(d == h.space().distance(static_cast<PointId>(a), static_cast<PointId>(b)));
            ++links;
        }
    }
    auto inv = h.verify_invariants();
    CHECK(nodes == inv.explicit_nodes);
    CHECK(links == inv.links);
}

TEST_CASE("corruption hook flips one cached distance and the audit sees it") {
    auto s = testutil::uniform_points(50, 2, 8);
    auto h = build_hierarchy(s);
    REQUIRE(h.verify_invariants().ok);
    REQUIRE(h.corrupt_one_link_for_test(0.125));
    CHECK_FALSE(h.verify_invariants().ok);
}

TEST_CASE("a new closest pair extends the hierarchy downward without rebuild") {
    std::vector<double> pts = {0.0, 10.0, 20.0, 30.0};
    auto s = testutil::line_points({0.0, 10.0, 20.0, 30.0, 10.001});
    HierarchyConfig cfg;
    NetHierarchy h(s, cfg);
    for (PointId p = 0; p < 4; ++p) h.insert_point(p);
    Level imin0 = h.i_min();
    std::uint64_t epoch0 = h.epoch();
    h.insert_point(4);  // distance 0.001 to point 1
    CHECK(h.i_min() < imin0);
    CHECK(h.epoch() == epoch0);
    auto inv = h.verify_invariants();
    INFO(inv.failure);
    CHECK(inv.ok);
}
