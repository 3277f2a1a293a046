#include <catch2/catch.hpp>

#include <sstream>

#include "doracle/composite_oracle.hpp"
#include "test_util.hpp"

using namespace doracle;

namespace {

std::unique_ptr<CompositeOracle> build(const MetricSpace& space, OracleMode mode, double eps,
                                        std::size_t n = 0) {
    OracleConfig cfg;
    cfg.mode = mode;
    cfg.epsilon = eps;
    cfg.lambda = 2.0;
    cfg.dimension = 64;
    cfg.seed = 42;
    auto o = std::make_unique<CompositeOracle>(space, cfg);
    std::size_t limit = n ? n : space.size();
    for (PointId p = 0; p < limit; ++p) o->insert(p);
    o->finalize_build();
    return o;
}

const std::vector<OracleMode> kAllModes = {
    OracleMode::static_O1,      OracleMode::static_binary,
    OracleMode::static_loglogN, OracleMode::static_loglogLambda,
    OracleMode::dynamic_O1,     OracleMode::dynamic_variant9,
    OracleMode::backup_forest,  OracleMode::backup_centroid,
};

}  // namespace

TEST_CASE("two-point oracle answers the single pair in every mode") {
    auto s = testutil::line_points({0.0, 37.0});
    for (OracleMode m : kAllModes) {
        auto o = build(s, m, 0.25);
        auto r = o->query(0, 1);
        INFO(mode_name(m));
        CHECK(r.estimate >= (1 - 0.25 - 1e-9) * 37.0);
        CHECK(r.estimate <= (1 + 0.25 + 1e-9) * 37.0);
        CHECK(o->query(1, 1).estimate == 0.0);
    }
}

TEST_CASE("all modes pass the exactness audit on random 2D data") {
    // The provable band for this construction is 12.5*eps/(8 - 2.5*eps):
    // ancestor drift of up to half a level radius against a pair that missed
    // the c-threshold one level below by a sliver. The nominal eps band holds
    // on all but boundary pairs; both are asserted.
    auto s = testutil::uniform_points(400, 2, 2024);
    for (double eps : {0.1, 0.5}) {
        double provable = 12.5 * eps / (8.0 - 2.5 * eps);
        for (OracleMode m : kAllModes) {
            auto o = build(s, m, eps);
            RngStream rng(7);
            double worst = 0.0;
            int in_eps = 0, total = 0;
            for (int t = 0; t < 1200; ++t) {
                PointId x = static_cast<PointId>(rng.next_below(400));
                PointId y = static_cast<PointId>(rng.next_below(400));
                if (x == y) continue;
                auto r = o->query(x, y);
                double err = std::abs(r.audit.ratio - 1.0);
                INFO(mode_name(m) << " eps=" << eps << " x=" << x << " y=" << y
                                  << " ratio=" << r.audit.ratio << " path=" << r.audit.path_taken);
                REQUIRE(err <= provable + 1e-9);
                ++total;
                if (err <= eps + 1e-9) ++in_eps;
                worst = std::max(worst, err);
            }
            INFO(mode_name(m) << " eps=" << eps << " worst " << worst << " in-eps "
                              << in_eps << "/" << total);
            CHECK(in_eps >= total * 995 / 1000);
        }
    }
}

TEST_CASE("modes agree with each other inside the band") {
    auto s = testutil::uniform_points(300, 2, 5);
    std::vector<std::unique_ptr<CompositeOracle>> oracles;
    for (OracleMode m : kAllModes) oracles.push_back(build(s, m, 0.25));
    RngStream rng(3);
    for (int t = 0; t < 400; ++t) {
        PointId x = static_cast<PointId>(rng.next_below(300));
        PointId y = static_cast<PointId>(rng.next_below(300));
        if (x == y) continue;
        double exact = s.exact_query(x, y);
        double provable = 12.5 * 0.25 / (8.0 - 2.5 * 0.25);
        for (auto& o : oracles) {
            double est = o->query(x, y).estimate;
            REQUIRE(est >= (1 - provable - 1e-9) * exact);
            REQUIRE(est <= (1 + provable + 1e-9) * exact);
        }
    }
}

TEST_CASE("the instance ratio and the level window hold per query") {
    auto s = testutil::uniform_points(500, 2, 99);
    auto o = build(s, OracleMode::static_O1, 0.1);
    double c = 8.0 / (5.0 * 0.1);
    RngStream rng(11);
    for (int t = 0; t < 2500; ++t) {
        PointId x = static_cast<PointId>(rng.next_below(500));
        PointId y = static_cast<PointId>(rng.next_below(500));
        if (x == y) continue;
        auto r = o->query(x, y);
        if (r.pair.merged) continue;
        // located pair is a c-pair; the provable instance band is
        // 2.5/(c - 1/2), tighter claims fail on boundary pairs
        double inst = std::abs(r.audit.exact / r.pair.dist - 1.0);
        REQUIRE(inst <= 2.5 / (c - 0.5) + 1e-9);
        // level window: located level inside [i-1-log5(c+8/5), i-log5(c-8/5)]
        double lo = r.audit.i - 1 - std::log(c + 1.6) / std::log(5.0);
        double hi = std::ceil(r.audit.i - std::log(c - 1.6) / std::log(5.0));
        REQUIRE(static_cast<double>(r.pair.level) >= lo - 1e-9);
        REQUIRE(static_cast<double>(r.pair.level) <= hi + 1e-9);
    }
}

TEST_CASE("returned pairs are minimal") {
    auto s = testutil::uniform_points(300, 2, 31);
    auto o = build(s, OracleMode::static_O1, 0.25);
    PairResolver res(o->hierarchy());
    double c = o->hierarchy().config().c();
    RngStream rng(13);
    for (int t = 0; t < 1500; ++t) {
        PointId x = static_cast<PointId>(rng.next_below(300));
        PointId y = static_cast<PointId>(rng.next_below(300));
        if (x == y) continue;
        auto r = o->query(x, y);
        REQUIRE(res.pair_is_minimal(r.pair, x, y, c));
    }
}

TEST_CASE("dynamic updates keep audits green through interleaved work") {
    auto s = testutil::uniform_points(700, 2, 17);
    OracleConfig cfg;
    cfg.mode = OracleMode::dynamic_O1;
    cfg.epsilon = 0.25;
    cfg.lambda = 2.0;
    cfg.seed = 1;
    CompositeOracle o(s, cfg);
    for (PointId p = 0; p < 500; ++p) o.insert(p);
    RngStream rng(23);
    std::vector<PointId> live;
    for (PointId p = 0; p < 500; ++p) live.push_back(p);
    PointId next_insert = 500;
    int deletes_done = 0;
    for (int t = 0; t < 3000; ++t) {
        int roll = static_cast<int>(rng.next_below(100));
        if (roll < 5 && next_insert < 700) {
            o.insert(next_insert);
            live.push_back(next_insert);
            ++next_insert;
        } else if (roll < 8 && deletes_done < 100 && live.size() > 10) {
            std::size_t k = rng.next_below(live.size());
            o.erase(live[k]);
            live.erase(live.begin() + static_cast<long>(k));
            ++deletes_done;
        } else {
            PointId x = live[rng.next_below(live.size())];
            PointId y = live[rng.next_below(live.size())];
            if (x == y) continue;
            auto r = o.query(x, y);
            double provable = 12.5 * 0.25 / (8.0 - 2.5 * 0.25);
            REQUIRE(r.audit.ratio >= 1 - provable - 1e-9);
            REQUIRE(r.audit.ratio <= 1 + provable + 1e-9);
        }
    }
    CHECK(deletes_done > 50);
}

TEST_CASE("insert-then-query covers the fresh point in every dynamic mode") {
    auto s = testutil::uniform_points(220, 2, 8);
    for (OracleMode m : {OracleMode::dynamic_O1, OracleMode::dynamic_variant9}) {
        auto o = build(s, m, 0.25, 200);
        for (PointId p = 200; p < 220; ++p) {
            o->insert(p);
            double provable = 12.5 * 0.25 / (8.0 - 2.5 * 0.25);
            for (PointId q = 0; q < 20; ++q) {
                auto r = o->query(p, q * 7);
                REQUIRE(r.audit.ratio >= 1 - provable - 1e-9);
                REQUIRE(r.audit.ratio <= 1 + provable + 1e-9);
            }
        }
    }
}

TEST_CASE("snapshot round trip reproduces identical answers") {
    auto s = testutil::uniform_points(250, 2, 55);
    auto o = build(s, OracleMode::static_O1, 0.1);
    std::stringstream buf;
    o->save(buf);
    auto o2 = CompositeOracle::load(s, buf);
    RngStream rng(5);
    for (int t = 0; t < 500; ++t) {
        PointId x = static_cast<PointId>(rng.next_below(250));
        PointId y = static_cast<PointId>(rng.next_below(250));
        if (x == y) continue;
        REQUIRE(o->query(x, y).estimate == o2->query(x, y).estimate);
    }
    std::stringstream bad("XXXX");
    CHECK_THROWS_AS(CompositeOracle::load(s, bad), parse_error);
}

TEST_CASE("same seed rebuilds byte-identical snapshots") {
    auto s = testutil::uniform_points(200, 2, 77);
    auto a = build(s, OracleMode::static_O1, 0.25);
    auto b = build(s, OracleMode::static_O1, 0.25);
    std::stringstream sa, sb;
    a->save(sa);
    b->save(sb);
    CHECK(sa.str() == sb.str());
}

TEST_CASE("variant probe counts stay within twice their formulas") {
    auto s = testutil::uniform_points(512, 2, 21);
    for (OracleMode m : {OracleMode::static_loglogN, OracleMode::static_loglogLambda,
                         OracleMode::dynamic_variant9}) {
        auto o = build(s, m, 0.25);
        RngStream rng(9);
        std::uint64_t worst = 0;
        for (int t = 0; t < 1200; ++t) {
            PointId x = static_cast<PointId>(rng.next_below(512));
            PointId y = static_cast<PointId>(rng.next_below(512));
            if (x == y) continue;
            auto r = o->query(x, y);
            worst = std::max(worst, r.audit.outer_probes);
        }
        // every variant binary-searches a level window whose width is
        // bounded by the coarse-estimate distortion formula
        double delta = 0;
        {
            double lam = 2.0;
            double base = std::max(1.25, 5.0 * lam / 4.0);
            double target = (m == OracleMode::dynamic_variant9)
                                ? 16.0
                                : std::log2(512.0);
            int tail = std::max(1, (int)std::ceil(std::log(target) / std::log(base)));
            double l = pow5((Level)std::ceil(std::log(37 * lam * lam) / std::log(5.0)));
            delta = (32.0 / 5.0) * std::pow(4.0 * l, tail + 1);
        }
        std::uint64_t width = static_cast<std::uint64_t>(std::log(delta) / std::log(5.0)) + 6;
        std::uint64_t formula = static_cast<std::uint64_t>(ceil_log2(1.0 + double(width))) + 2;
        INFO(mode_name(m) << " worst=" << worst << " formula=" << formula);
        CHECK(worst <= 2 * formula);
    }
}

TEST_CASE("fast-path primitive counts stay flat across sizes") {
    std::vector<double> means;
    for (std::size_t n : {256u, 1024u}) {
        auto s = testutil::uniform_points(n, 2, 4);
        auto o = build(s, OracleMode::static_O1, 0.25);
        RngStream rng(2);
        std::uint64_t before = o->primitives_snapshot();
        int queries = 0;
        for (int t = 0; t < 800; ++t) {
            PointId x = static_cast<PointId>(rng.next_below(n));
            PointId y = static_cast<PointId>(rng.next_below(n));
            if (x == y) continue;
            o->query(x, y);
            ++queries;
        }
        means.push_back(double(o->primitives_snapshot() - before) / queries);
    }
    INFO("means " << means[0] << " " << means[1]);
    CHECK(means[1] <= 3.0 * means[0] + 3.0);
}

TEST_CASE("fallback usage is reported and rare on benchmark data") {
    auto s = testutil::uniform_points(600, 2, 123);
    auto o = build(s, OracleMode::static_O1, 0.1);
    RngStream rng(6);
    int fallbacks = 0, total = 0;
    for (int t = 0; t < 2000; ++t) {
        PointId x = static_cast<PointId>(rng.next_below(600));
        PointId y = static_cast<PointId>(rng.next_below(600));
        if (x == y) continue;
        auto r = o->query(x, y);
        ++total;
        if (r.audit.fallback_used) ++fallbacks;
    }
    INFO("fallback rate " << double(fallbacks) / total);
    CHECK(total > 1500);
    // engineering target, not a hard bound; asserted loosely here
    CHECK(fallbacks <= total / 2);
}

TEST_CASE("deleted endpoints raise endpoint errors in every mode") {
    auto s = testutil::uniform_points(50, 2, 9);
    auto o = build(s, OracleMode::dynamic_O1, 0.25);
    o->erase(7);
    CHECK_THROWS_AS(o->query(7, 9), lookup_error);
    CHECK_THROWS_AS(o->query(9, 7), lookup_error);
}
