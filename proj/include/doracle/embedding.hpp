#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "doracle/common.hpp"
#include "doracle/net_hierarchy.hpp"

namespace doracle {

/// Truncated exponential radius distribution on [5^h, 2*5^h] with rate
/// rho = 2 ln(lambda^4) / (4 * 5^h). The normalizing constant divides out of
/// the inverse CDF, so sampling uses the distribution shape directly.
class RadiusSampler {
  public:
    RadiusSampler(double lambda, std::uint64_t seed)
        : lambda_(effective_lambda(lambda)), stream_(seed) {}

    static double effective_lambda(double lambda) {
        // The density degenerates at lambda <= 1; clamp with a warning flag.
        return lambda > 1.0 ? lambda : 1.01;
    }
    static bool lambda_was_clamped(double lambda) { return !(lambda > 1.0); }

    /// Inverse-CDF sample for the radius interval anchored at scale `a`
    /// (the interval is [a, 2a]).
    static double sample_from_uniform(double a, double lambda, double u) {
        lambda = effective_lambda(lambda);
        double rho = 2.0 * std::log(std::pow(lambda, 4.0)) / (4.0 * a);
        double e1 = std::exp(-rho * a);        // = lambda^-2
        double e2 = std::exp(-rho * 2.0 * a);  // = lambda^-4
        double r = -std::log(e1 - u * (e1 - e2)) / rho;
        return std::clamp(r, a, 2.0 * a);
    }

    static double cdf(double a, double lambda, double r) {
        lambda = effective_lambda(lambda);
        if (r <= a) return 0.0;
        if (r >= 2.0 * a) return 1.0;
        double rho = 2.0 * std::log(std::pow(lambda, 4.0)) / (4.0 * a);
        double e1 = std::exp(-rho * a), e2 = std::exp(-rho * 2.0 * a);
        return (e1 - std::exp(-rho * r)) / (e1 - e2);
    }

    /// Stream interface: one draw per call for the scale-anchored interval.
    double sample(double a) { return sample_from_uniform(a, lambda_, stream_.next_double()); }

  private:
    double lambda_;
    RngStream stream_;
};

/// Restricted hierarchy: every ceil(log5 l)-th backbone level, anchored at
/// the epoch's bottom level, with per-occurrence random radii and the
/// first-inserted-capturing parent rule. Derived state is computed on demand
/// from the backbone plus the seed, so it replays identically after rebuilds.
class RestrictedHierarchy {
  public:
    RestrictedHierarchy(const NetHierarchy& h, double branching, std::uint64_t seed_salt)
        : h_(&h), seed_salt_(seed_salt) {
        stride_ = std::max<Level>(1, static_cast<Level>(std::ceil(
                                        std::log(std::max(5.0, branching)) / std::log(5.0))));
        l_eff_ = pow5(stride_);
        lambda_ = RadiusSampler::effective_lambda(h.config().lambda);
    }

    Level stride() const { return stride_; }
    double branching() const { return l_eff_; }
    double unit() const {
        ensure();
        return pow5(base_);
    }
    Level base_level() const {
        ensure();
        return base_;
    }
    int top_index() const {
        ensure();
        return cap_;
    }
    std::uint64_t epoch_marker() const {
        ensure();
        return anchor_marks_;
    }

    /// Scale of restricted level i: 5^(base + i*stride).
    double scale(int i) const {
        ensure();
        return pow5(base_ + stride_ * i);
    }

    /// Deterministic radius of occurrence (p, i), in [scale, 2*scale].
    double radius(PointId p, int i) const {
        double u = keyed_uniform(hash_combine(h_->config().seed, seed_salt_), node_key(p, 0),
                                 static_cast<std::uint64_t>(i) + 7, 11);
        return RadiusSampler::sample_from_uniform(scale(i), lambda_, u);
    }

    /// Occurrence creation stamp: points stamp at their insertion; the root's
    /// upward extensions stamp at the insert that raised the root level.
    std::uint32_t stamp(PointId p, int i) const {
        ensure();
        if (p != h_->root() || i <= root_base_index_) return h_->insert_seq(p);
        std::size_t k = static_cast<std::size_t>(i - root_base_index_ - 1);
        if (k < root_ext_stamp_.size()) return root_ext_stamp_[k];
        return root_ext_stamp_.empty() ? h_->insert_seq(p) : root_ext_stamp_.back();
    }

    bool occurrence_exists(PointId p, int i) const {
        ensure();
        if (i == 0) return true;
        return base_ + stride_ * i <= h_->top_level(p);
    }

    /// Cluster representative of x at restricted level i: the capture chain
    /// ancestor. Cached per point per version.
    PointId rep(PointId x, int i) const {
        ensure();
        const auto& chain = rep_chain(x);
        if (i >= static_cast<int>(chain.size())) return chain.back();
        return chain[static_cast<std::size_t>(i)];
    }

    /// Lowest restricted level where the capture chains of x and y merge.
    int merge_level(PointId x, PointId y) const {
        ensure();
        if (x == y) return 0;
        const auto& cx = rep_chain(x);
        const auto& cy = rep_chain(y);
        for (int i = 1; i <= cap_; ++i) {
            PointId a = i < static_cast<int>(cx.size()) ? cx[i] : cx.back();
            PointId b = i < static_cast<int>(cy.size()) ? cy[i] : cy.back();
            if (a == b) return i;
        }
        return cap_;
    }

    /// Earlier-inserted level-i occurrences within 4 * scale(i) of v.
    std::vector<PointId> boundary_competitors(PointId v, int i) const {
        ensure();
        std::vector<PointId> out;
        Level hl = base_ + stride_ * i;
        if (hl > h_->i_max()) return out;
        double lim = 4.0 * scale(i);
        std::uint32_t vstamp = stamp(v, i);
        auto consider = [&](PointId z) {
            if (z == v || !occurrence_exists(z, i)) return;
            if (stamp(z, i) >= vstamp && !(z == h_->root() && stamp(z, i) == vstamp)) return;
            if (h_->space().distance(z, v) <= lim) out.push_back(z);
        };
        NodeRef anc = h_->ancestor_at(v, hl);
        consider(anc.point);
        if (!anc.implicit_chain)
            for (const NeighborLink& l : h_->links_at(anc.point, hl)) consider(l.other);
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }

    const NetHierarchy& backbone() const { return *h_; }
    double lambda() const { return lambda_; }

  private:
    void ensure() const {
        if (built_version_ == h_->version() && built_epoch_ == h_->epoch()) return;
        Level new_base = h_->i_min();
        if (built_epoch_ != h_->epoch() || new_base < base_ || built_version_ == ~0ull) {
            base_ = new_base;
            ++anchor_marks_;
        }
        cap_ = static_cast<int>(floor_div(h_->i_max() - base_, stride_)) + 2;
        // Root extension stamps: prefix maxima of attach levels by sequence.
        // The root enters at backbone level 0; higher occurrences appear with
        // the attach that first raised the root chain past them.
        root_base_index_ = static_cast<int>(floor_div(-base_, stride_));
        root_ext_stamp_.clear();
        std::vector<std::pair<std::uint32_t, Level>> attaches;
        for (PointId p = 0; p < h_->space().size(); ++p) {
            if (!h_->is_member(p) || p == h_->root()) continue;
            attaches.emplace_back(h_->insert_seq(p),
                                  static_cast<Level>(h_->top_level(p) + 1));
        }
        std::sort(attaches.begin(), attaches.end());
        Level run = 0;
        int covered = root_base_index_;  // restricted levels <= covered are stamped
        for (const auto& [seq, att] : attaches) {
            run = std::max(run, att);
            int idx = static_cast<int>(floor_div(run - base_, stride_));
            while (covered < idx) {
                ++covered;
                root_ext_stamp_.push_back(seq);
            }
        }
        chains_.clear();
        built_version_ = h_->version();
        built_epoch_ = h_->epoch();
    }

    const std::vector<PointId>& rep_chain(PointId x) const {
        auto it = chains_.find(x);
        if (it != chains_.end()) return it->second;
        std::vector<PointId> chain;
        chain.push_back(x);
        PointId cur = x;
        for (int i = 1; i <= cap_; ++i) {
            cur = capture_parent(cur, i);
            chain.push_back(cur);
            if (cur == h_->root() && base_ + stride_ * i >= h_->i_max()) break;
        }
        return chains_.emplace(x, std::move(chain)).first->second;
    }

    /// First-inserted level-i occurrence whose radius captures w.
    PointId capture_parent(PointId w, int i) const {
        Level hl = base_ + stride_ * i;
        if (hl >= h_->i_max()) return h_->root();
        double lim = 2.0 * scale(i);
        PointId best = kInvalidPoint;
        std::uint32_t best_stamp = 0;
        bool best_root = false;
        auto consider = [&](PointId z) {
            if (!occurrence_exists(z, i)) return;
            double d = h_->space().distance(z, w);
            if (d > lim || d > radius(z, i)) return;
            std::uint32_t s = stamp(z, i);
            bool zroot = z == h_->root();
            if (best == kInvalidPoint || s < best_stamp || (s == best_stamp && zroot && !best_root) ||
                (s == best_stamp && zroot == best_root && z < best)) {
                best = z;
                best_stamp = s;
                best_root = zroot;
            }
        };
        NodeRef anc = h_->ancestor_at(w, hl);
        consider(anc.point);
        if (!anc.implicit_chain)
            for (const NeighborLink& l : h_->links_at(anc.point, hl)) consider(l.other);
        if (best == kInvalidPoint) {
            // The covering ancestor always captures: d <= (4/5) * scale < radius.
            throw std::logic_error("restricted hierarchy occurrence has no capturer");
        }
        return best;
    }

    const NetHierarchy* h_;
    std::uint64_t seed_salt_;
    Level stride_ = 1;
    double l_eff_ = 5.0, lambda_ = 2.0;
    mutable Level base_ = 0;
    mutable int cap_ = 1;
    mutable int root_base_index_ = 0;
    mutable std::vector<std::uint32_t> root_ext_stamp_;
    mutable std::unordered_map<PointId, std::vector<PointId>> chains_;
    mutable std::uint64_t built_version_ = ~0ull, built_epoch_ = ~0ull, anchor_marks_ = 0;
};

/// Probabilistic tree embedding: the restricted hierarchy with branching
/// 37*lambda^2; the edge into restricted level i has length (4l)^i in anchor
/// units, and the tree distance is the path length between the leaves.
class TreeEmbedding {
  public:
    TreeEmbedding(const NetHierarchy& h, std::uint64_t seed_salt = 0x7e11ull)
        : rh_(h, 37.0 * RadiusSampler::effective_lambda(h.config().lambda) *
                     RadiusSampler::effective_lambda(h.config().lambda),
              seed_salt) {}

    const RestrictedHierarchy& restricted() const { return rh_; }

    double edge_length(int i) const { return rh_.unit() * std::pow(4.0 * rh_.branching(), i); }

    int lca_level(PointId x, PointId y) const { return rh_.merge_level(x, y); }

    /// Sum of edge lengths from both leaves up to the meet level.
    double distance(PointId x, PointId y) const {
        if (!rh_.backbone().is_member(x) || !rh_.backbone().is_member(y))
            throw lookup_error("tree embedding endpoint is not in the structure");
        if (x == y) return 0.0;
        int m = rh_.merge_level(x, y);
        double s = 0.0;
        for (int i = 1; i <= m; ++i) s += edge_length(i);
        return 2.0 * s;
    }

  private:
    RestrictedHierarchy rh_;
};

/// Dynamic snowflake embedding into R^D: per coordinate and restricted level,
/// a Bernoulli sign per cluster scales the truncated boundary distance; the
/// final map is scaled non-expansive against sqrt of the metric.
class SnowflakeEmbedding {
  public:
    SnowflakeEmbedding(const NetHierarchy& h, int dimension, std::uint64_t seed_salt = 0x5107ull)
        : rh_(h, 8.0, seed_salt), dim_(dimension), seed_salt_(seed_salt) {
        tau_ = std::log(2.0) / (8.0 * rh_.lambda());
    }

    const RestrictedHierarchy& restricted() const { return rh_; }
    int dimension() const { return dim_; }
    double tau() const { return tau_; }
    /// Deterministic per-coordinate Lipschitz constant before scaling.
    double lipschitz_bound() const { return 128.0 * rh_.lambda(); }

    /// Distance from x to the boundary of its level-i cluster, per the
    /// radius-minus-distance rule against earlier-inserted competitors. Not
    /// affected by later insertions; may be negative under chain drift.
    double boundary_distance(PointId x, int i) const {
        if (!rh_.backbone().is_member(x))
            throw lookup_error("snowflake endpoint is not in the structure");
        if (i < 0 || i > rh_.top_index()) throw lookup_error("restricted level out of range");
        PointId v = rh_.rep(x, i);
        const MetricSpace& sp = rh_.backbone().space();
        double g = rh_.radius(v, i) - sp.distance(v, x);
        for (PointId u : rh_.boundary_competitors(v, i))
            g = std::min(g, sp.distance(u, x) - rh_.radius(u, i));
        return g;
    }

    /// One level's contribution to coordinate t, in [0, sqrt(scale * l^i)].
    double level_term(int t, PointId x, int i) const {
        const auto& pr = profile(x);
        const LevelTerm& lt = pr[static_cast<std::size_t>(i)];
        return sign(lt.cluster, i, t) ? lt.magnitude : 0.0;
    }

    double coordinate(int t, PointId x) const {
        const auto& pr = profile(x);
        double s = 0.0;
        for (int i = 0; i < static_cast<int>(pr.size()); ++i)
            if (sign(pr[static_cast<std::size_t>(i)].cluster, i, t))
                s += pr[static_cast<std::size_t>(i)].magnitude;
        return s;
    }

    /// Raw embedding before centering: D^-1/2 (f1, ..., fD).
    std::vector<double> raw_coords(PointId x) const {
        std::vector<double> out(static_cast<std::size_t>(dim_));
        double norm = 1.0 / std::sqrt(static_cast<double>(dim_));
        for (int t = 0; t < dim_; ++t) out[static_cast<std::size_t>(t)] = norm * coordinate(t, x);
        return out;
    }

    /// Centered on the root point, so a single-point space maps to zero.
    std::vector<double> coords(PointId x) const {
        auto v = raw_coords(x);
        auto c = raw_coords(rh_.backbone().root());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= c[i];
        return v;
    }

    double embedded_distance(PointId x, PointId y) const {
        double s = 0.0;
        double norm = 1.0 / static_cast<double>(dim_);
        for (int t = 0; t < dim_; ++t) {
            double d = coordinate(t, x) - coordinate(t, y);
            s += norm * d * d;
        }
        return std::sqrt(s);
    }

    /// Non-expansive after dividing by the Lipschitz constant.
    double scaled_distance(PointId x, PointId y) const {
        return embedded_distance(x, y) / lipschitz_bound();
    }

  private:
    struct LevelTerm {
        PointId cluster;
        double magnitude;
    };

    bool sign(PointId cluster, int i, int t) const {
        return keyed_uniform(hash_combine(rh_.backbone().config().seed, seed_salt_),
                             node_key(cluster, 0), static_cast<std::uint64_t>(i) + 131,
                             static_cast<std::uint64_t>(t) + 1) >= 0.5;
    }

    const std::vector<LevelTerm>& profile(PointId x) const {
        if (profile_version_ != rh_.backbone().version() ||
            profile_epoch_ != rh_.backbone().epoch() ||
            profile_marks_ != rh_.epoch_marker()) {
            profiles_.clear();
            profile_version_ = rh_.backbone().version();
            profile_epoch_ = rh_.backbone().epoch();
            profile_marks_ = rh_.epoch_marker();
        }
        auto it = profiles_.find(x);
        if (it != profiles_.end()) return it->second;
        std::vector<LevelTerm> pr;
        pr.reserve(static_cast<std::size_t>(rh_.top_index() + 1));
        for (int i = 0; i <= rh_.top_index(); ++i) {
            double a = rh_.scale(i);
            double g = std::max(0.0, boundary_distance(x, i));
            pr.push_back(LevelTerm{rh_.rep(x, i), std::min(g / tau_, a) / std::sqrt(a)});
        }
        return profiles_.emplace(x, std::move(pr)).first->second;
    }

    RestrictedHierarchy rh_;
    int dim_;
    std::uint64_t seed_salt_;
    double tau_;
    mutable std::unordered_map<PointId, std::vector<LevelTerm>> profiles_;
    mutable std::uint64_t profile_version_ = ~0ull, profile_epoch_ = ~0ull,
                          profile_marks_ = ~0ull;
};

}  // namespace doracle
