#pragma once

#include <cmath>
#include <string>

#include "doracle/common.hpp"
#include "doracle/net_hierarchy.hpp"

namespace doracle {

/// The lowest ancestral pair of two query points within a radius class b:
/// the minimum level where their ancestors are within b * 5^j of each other.
/// When the ancestor paths merge before any such pair exists (possible for
/// b < 6), the sibling children of the meet node stand in, flagged `merged`.
struct ResolvedPair {
    PointId a = kInvalidPoint, b = kInvalidPoint;
    Level level = 0;       // level of the located pair (merge level when merged)
    double dist = 0.0;     // cached link distance of the pair: the answer
    bool merged = false;
};

/// Level i with 5^(i-1) < d <= 5^i.
inline Level distance_level(double d) {
    Level i = floor_log5(d);
    return pow5(i) == d ? i : i + 1;
}

class PairResolver {
  public:
    PairResolver(const NetHierarchy& h, OpCounters* counters = nullptr)
        : h_(&h), counters_(counters) {}

    /// Monotone scan for the lowest level where the ancestors of x and y are
    /// b-neighbors or the same point. `hint` seeds the scan; correctness does
    /// not depend on it, only the step count does.
    ResolvedPair resolve(PointId x, PointId y, double b, Level hint) const {
        const MetricSpace& sp = h_->space();
        Level lo_floor = h_->i_min() - static_cast<Level>(std::ceil(
                                           std::log(h_->config().b_max()) / std::log(5.0))) -
                         2;
        Level j = std::clamp(hint, lo_floor, static_cast<Level>(h_->i_max() + 1));

        // Climb up until true, then down while still true below.
        while (!close_at(sp, x, y, b, j)) {
            ++j;
            if (j > h_->i_max() + 2) throw std::logic_error("pair resolution ran past the root");
        }
        while (j - 1 >= lo_floor && close_at(sp, x, y, b, j - 1)) --j;

        ResolvedPair out;
        PointId ax = rep_at(x, j), ay = rep_at(y, j);
        if (ax == ay) {
            out.merged = true;
            out.level = j;
            out.a = rep_at(x, j - 1);
            out.b = rep_at(y, j - 1);
            out.dist = cached_distance(out.a, out.b, j - 1);
        } else {
            out.level = j;
            out.a = ax;
            out.b = ay;
            out.dist = cached_distance(ax, ay, j);
        }
        return out;
    }

    /// Independent reference: replays the definition bottom-up across every
    /// level using raw parent chains and direct distance evaluations only.
    ResolvedPair resolve_reference(PointId x, PointId y, double b) const {
        const MetricSpace& sp = h_->space();
        Level lo = h_->i_min() - 8;
        for (Level j = lo; j <= h_->i_max() + 2; ++j) {
            PointId ax = rep_at(x, j), ay = rep_at(y, j);
            if (ax == ay) {
                ResolvedPair out;
                out.merged = true;
                out.level = j;
                out.a = rep_at(x, j - 1);
                out.b = rep_at(y, j - 1);
                out.dist = sp.distance(out.a, out.b);
                return out;
            }
            if (sp.distance(ax, ay) <= b * pow5(j)) {
                ResolvedPair out;
                out.level = j;
                out.a = ax;
                out.b = ay;
                out.dist = sp.distance(ax, ay);
                return out;
            }
        }
        throw std::logic_error("reference resolution ran past the root");
    }

    /// True when the children of the located pair are not themselves
    /// b-neighbors: the per-query minimality re-check.
    bool pair_is_minimal(const ResolvedPair& r, PointId x, PointId y, double b) const {
        if (r.merged) return true;
        Level below = r.level - 1;
        PointId cx = rep_at(x, below), cy = rep_at(y, below);
        if (cx == cy) return false;
        if (counters_) counters_->link_checks++;
        return h_->space().distance(cx, cy) > b * pow5(below);
    }

    PointId rep_at(PointId p, Level j) const {
        PointId rep = p;
        while (h_->top_level(rep) < j) {
            PointId up = h_->parent_point(rep);
            if (up == kInvalidPoint) break;
            rep = up;
        }
        return rep;
    }

  private:
    bool close_at(const MetricSpace& sp, PointId x, PointId y, double b, Level j) const {
        if (counters_) counters_->link_checks++;
        PointId ax = rep_at(x, j), ay = rep_at(y, j);
        if (ax == ay) return true;
        return sp.distance(ax, ay) <= b * pow5(j);
    }

    /// Pairs within the configured radius classes always carry links; the
    /// answer is the cached distance of that link.
    double cached_distance(PointId a, PointId b, Level j) const {
        for (const NeighborLink& l : h_->links_at(a, j))
            if (l.other == b) return l.dist;
        throw std::logic_error("resolved pair has no cached link");
    }

    const NetHierarchy* h_;
    OpCounters* counters_;
};

/// Per-query audit record shared by every oracle; serialized as JSON lines.
struct QueryAudit {
    PointId x = kInvalidPoint, y = kInvalidPoint;
    double exact = 0.0;
    double estimate = 0.0;
    double ratio = 0.0;       // estimate / exact
    Level i = 0;              // 5^(i-1) < exact <= 5^i
    Level pair_level = 0;
    bool merged = false;
    Level lca_level_min = kNoLevel;  // forest oracle only
    std::uint64_t outer_probes = 0, inner_probes = 0;  // centroid oracle only
    std::string mode;
    std::string path_taken;
    bool fallback_used = false;
};

}  // namespace doracle
