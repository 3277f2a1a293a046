#include <catch2/catch.hpp>

#include <vector>

#include "doracle/packed_vector.hpp"
#include "doracle/common.hpp"

using namespace doracle;

namespace {

std::uint64_t naive_sq_dist(const std::vector<std::uint32_t>& p,
                            const std::vector<std::uint32_t>& q) {
    std::uint64_t s = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        std::int64_t d = static_cast<std::int64_t>(p[i]) - static_cast<std::int64_t>(q[i]);
        s += static_cast<std::uint64_t>(d * d);
    }
    return s;
}

// School multiplication over bit vectors; the independent reference for the
// in-word product layout.
std::vector<std::uint8_t> bitmul(std::uint64_t a, std::uint64_t b) {
    std::vector<std::uint32_t> acc(128, 0);
    for (int i = 0; i < 64; ++i) {
        if (!((a >> i) & 1)) continue;
        for (int j = 0; j < 64; ++j)
            if ((b >> j) & 1) acc[i + j] += 1;
    }
    std::vector<std::uint8_t> bits(128, 0);
    std::uint32_t carry = 0;
    for (int k = 0; k < 128; ++k) {
        std::uint32_t v = acc[k] + carry;
        bits[k] = v & 1;
        carry = v >> 1;
    }
    return bits;
}

}  // namespace

TEST_CASE("single coordinate layout") {
    auto v = PackedVector::pack({3u}, 2);
    CHECK(v.u_word(0) == 0x3u);
    CHECK(v.decode() == std::vector<std::uint32_t>{3});
    CHECK(v.sum_of_squares() == 9);
}

TEST_CASE("all-zero vector packs to zero words") {
    auto v = PackedVector::pack({0, 0, 0}, 4);
    for (std::size_t b = 0; b < v.block_count(); ++b) {
        CHECK(v.u_word(b) == 0);
        CHECK(v.v_word(b) == 0);
    }
    CHECK(v.sum_of_squares() == 0);
}

TEST_CASE("frozen example: d=2 b=2 dot and squared distance") {
    auto p = PackedVector::pack({3, 1}, 2);
    auto q = PackedVector::pack({2, 3}, 2);
    CHECK(p.dot(q) == 9);
    CHECK(p.squared_distance(q) == 5);
    CHECK(q.squared_distance(p) == 5);
}

TEST_CASE("identical vectors have zero distance") {
    RngStream rng(99);
    for (int t = 0; t < 50; ++t) {
        std::size_t d = 1 + rng.next_below(8);
        int b = 1 + static_cast<int>(rng.next_below(6));
        std::vector<std::uint32_t> v(d);
        for (auto& c : v) c = static_cast<std::uint32_t>(rng.next_below(1ull << b));
        auto pv = PackedVector::pack(v, b);
        CHECK(pv.squared_distance(pv) == 0);
    }
}

TEST_CASE("coordinate out of range is rejected") {
    CHECK_THROWS_AS(PackedVector::pack({4}, 2), std::invalid_argument);
    CHECK_THROWS_AS(PackedVector::pack({}, 2), std::invalid_argument);
}

TEST_CASE("shape mismatch is rejected") {
    auto a = PackedVector::pack({1, 2}, 3);
    auto b = PackedVector::pack({1}, 3);
    auto c = PackedVector::pack({1, 2}, 4);
    CHECK_THROWS_AS(a.squared_distance(b), std::invalid_argument);
    CHECK_THROWS_AS(a.squared_distance(c), std::invalid_argument);
}

TEST_CASE("random vectors round-trip through both layouts") {
    RngStream rng(7);
    for (int t = 0; t < 500; ++t) {
        std::size_t d = 1 + rng.next_below(12);
        int b = 1 + static_cast<int>(rng.next_below(8));
        std::vector<std::uint32_t> v(d);
        for (auto& c : v) c = static_cast<std::uint32_t>(rng.next_below(1ull << b));
        CHECK(PackedVector::pack(v, b).decode() == v);
    }
}

TEST_CASE("packed squared distance equals the naive loop, both regimes") {
    RngStream rng(2024);
    int within_word = 0, multi_word = 0;
    for (int t = 0; t < 100000; ++t) {
        std::size_t d = 1 + rng.next_below(8);
        int b = 1 + static_cast<int>(rng.next_below(6));
        std::vector<std::uint32_t> p(d), q(d);
        for (auto& c : p) c = static_cast<std::uint32_t>(rng.next_below(1ull << b));
        for (auto& c : q) c = static_cast<std::uint32_t>(rng.next_below(1ull << b));
        auto pp = PackedVector::pack(p, b);
        auto pq = PackedVector::pack(q, b);
        REQUIRE(pp.squared_distance(pq) == naive_sq_dist(p, q));
        if (pp.block_count() == 1)
            ++within_word;
        else
            ++multi_word;
    }
    // Both code paths must actually be exercised.
    CHECK(within_word > 1000);
    CHECK(multi_word > 1000);
}

TEST_CASE("vectors with 4*b*d^2 <= 64 stay in one word") {
    for (int b = 1; b <= 6; ++b)
        for (std::size_t d = 1; d <= 8; ++d) {
            if (4ull * b * d * d > 64) continue;
            std::vector<std::uint32_t> v(d, (1u << b) - 1);
            CHECK(PackedVector::pack(v, b).block_count() == 1);
        }
}

TEST_CASE("masked product contains exactly the coordinate products") {
    RngStream rng(31);
    for (int t = 0; t < 300; ++t) {
        int b = 1 + static_cast<int>(rng.next_below(4));
        std::size_t bd = PackedVector::block_dim_for(b);
        std::size_t d = 1 + rng.next_below(bd);
        std::vector<std::uint32_t> p(d), q(d);
        for (auto& c : p) c = static_cast<std::uint32_t>(rng.next_below(1ull << b));
        for (auto& c : q) c = static_cast<std::uint32_t>(rng.next_below(1ull << b));
        auto pp = PackedVector::pack(p, b);
        auto pq = PackedVector::pack(q, b);
        REQUIRE(pp.block_count() == 1);

        // Bit-level simulation of u^p * v^q.
        auto bits = bitmul(pp.u_word(0), pq.v_word(0));
        std::size_t dhat = PackedVector::padded_dim(bd);
        std::uint64_t r = 2ull * b, stride = r + r * dhat;
        for (std::size_t i = 0; i < d; ++i) {
            std::uint64_t window = 0;
            for (std::uint64_t k = 0; k < r; ++k) {
                std::size_t pos = stride * i + k;
                if (pos < 128 && bits[pos]) window |= 1ull << k;
            }
            REQUIRE(window == static_cast<std::uint64_t>(p[i]) * q[i]);
        }
    }
}

TEST_CASE("block dimension respects the word budget") {
    for (int b = 1; b <= 16; ++b) {
        std::size_t bd = PackedVector::block_dim_for(b);
        std::size_t dhat = PackedVector::padded_dim(bd);
        std::uint64_t r = 2ull * b, stride = r + r * dhat;
        std::uint64_t top = stride * (dhat - 1) + r + (dhat > 1 ? 64 - __builtin_clzll(dhat - 1) : 0);
        CHECK(top <= 64);
        CHECK(bd >= 1);
    }
}
