#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace doracle {

using PointId = std::uint32_t;
using Level = std::int32_t;

inline constexpr PointId kInvalidPoint = 0xffffffffu;
inline constexpr Level kNoLevel = std::numeric_limits<Level>::min();

// ---------------------------------------------------------------------------
// Errors

struct lookup_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct parse_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct epoch_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Level arithmetic. Levels are signed; the radius of level i is 5^i.

inline double pow5(Level i) {
    static constexpr int kCacheLo = -64, kCacheHi = 64;
    struct Table {
        double v[kCacheHi - kCacheLo + 1];
        Table() {
            for (int i = kCacheLo; i <= kCacheHi; ++i) v[i - kCacheLo] = std::pow(5.0, i);
        }
    };
    static const Table t;
    if (i >= kCacheLo && i <= kCacheHi) return t.v[i - kCacheLo];
    return std::pow(5.0, i);
}

/// Largest i with 5^i <= d. Requires d > 0.
inline Level floor_log5(double d) {
    if (!(d > 0.0)) throw std::invalid_argument("floor_log5: argument must be positive");
    Level i = static_cast<Level>(std::floor(std::log(d) / std::log(5.0)));
    while (pow5(i + 1) <= d) ++i;
    while (pow5(i) > d) --i;
    return i;
}

/// Smallest i with 5^i >= d. Requires d > 0.
inline Level ceil_log5(double d) {
    Level i = floor_log5(d);
    return pow5(i) >= d ? i : i + 1;
}

inline Level floor_div(Level a, Level b) {
    Level q = a / b, r = a % b;
    return (r != 0 && ((r < 0) != (b < 0))) ? q - 1 : q;
}

/// Largest multiple of k that is <= x.
inline Level floor_multiple(Level x, Level k) { return k * floor_div(x, k); }

/// Largest multiple of k strictly below x.
inline Level multiple_below(Level x, Level k) { return k * floor_div(x - 1, k); }

/// Smallest multiple of k that is >= x.
inline Level ceil_multiple(Level x, Level k) { return k * floor_div(x + k - 1, k); }

inline Level floor_even(Level x) { return floor_multiple(x, 2); }

inline int ceil_log2(double x) {
    if (x <= 1.0) return 0;
    int k = 0;
    double v = 1.0;
    while (v < x) {
        v *= 2.0;
        ++k;
    }
    return k;
}

// ---------------------------------------------------------------------------
// Node handles. A node of the hierarchy is a (point, level) occurrence;
// `implicit_chain` marks occurrences materialized from a compressed chain.

struct NodeRef {
    PointId point = kInvalidPoint;
    Level level = kNoLevel;
    bool implicit_chain = false;

    bool valid() const { return point != kInvalidPoint; }
    bool operator==(const NodeRef& o) const { return point == o.point && level == o.level; }
    bool operator!=(const NodeRef& o) const { return !(*this == o); }
};

inline std::uint64_t node_key(PointId p, Level l) {
    return (static_cast<std::uint64_t>(p) << 32) |
           (static_cast<std::uint32_t>(l) ^ 0x80000000u);
}
inline std::uint64_t node_key(const NodeRef& n) { return node_key(n.point, n.level); }

// ---------------------------------------------------------------------------
// Deterministic PRNG helpers. All randomness in the library is derived from
// explicit seeds through these, so rebuilds replay identically.

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
    return splitmix64(a ^ (0x9e3779b97f4a7c15ull + (b << 6) + (b >> 2) + splitmix64(b)));
}

/// Uniform double in [0, 1) keyed by up to three 64-bit values plus a seed.
inline double keyed_uniform(std::uint64_t seed, std::uint64_t k1, std::uint64_t k2 = 0,
                            std::uint64_t k3 = 0) {
    std::uint64_t h = hash_combine(hash_combine(hash_combine(seed, k1), k2), k3);
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

/// Sequential xorshift-style stream, used where a consumable stream is the
/// natural interface (dataset generation, workload sampling).
class RngStream {
  public:
    explicit RngStream(std::uint64_t seed) : state_(splitmix64(seed ^ 0xd1b54a32d192ed03ull)) {
        if (state_ == 0) state_ = 0x9e3779b97f4a7c15ull;
    }

    std::uint64_t next_u64() {
        state_ = splitmix64(state_);
        return state_;
    }
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
    /// Uniform integer in [0, n).
    std::uint64_t next_below(std::uint64_t n) { return n ? next_u64() % n : 0; }

  private:
    std::uint64_t state_;
};

// ---------------------------------------------------------------------------
// Operation counters. These are the measured proxies the benchmarks compare;
// each counts calls into a query primitive, not the primitive's inner steps.

struct OpCounters {
    std::uint64_t distance_evals = 0;
    std::uint64_t link_checks = 0;
    std::uint64_t lca_queries = 0;
    std::uint64_t level_ancestor_queries = 0;
    std::uint64_t jump_queries = 0;
    std::uint64_t table_lookups = 0;
    std::uint64_t probes = 0;
    std::uint64_t scan_steps = 0;
    std::uint64_t nodes_touched = 0;

    void reset() { *this = OpCounters{}; }
    std::uint64_t query_primitives() const {
        return link_checks + lca_queries + level_ancestor_queries + jump_queries +
               table_lookups + probes + scan_steps;
    }
    OpCounters& operator+=(const OpCounters& o) {
        distance_evals += o.distance_evals;
        link_checks += o.link_checks;
        lca_queries += o.lca_queries;
        level_ancestor_queries += o.level_ancestor_queries;
        jump_queries += o.jump_queries;
        table_lookups += o.table_lookups;
        probes += o.probes;
        scan_steps += o.scan_steps;
        nodes_touched += o.nodes_touched;
        return *this;
    }
};

}  // namespace doracle
