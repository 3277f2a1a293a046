#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "doracle/common.hpp"
#include "doracle/metric_space.hpp"

namespace doracle {

struct HierarchyConfig {
    double epsilon = 0.1;   // in (0, 1/2]
    double lambda = 2.0;    // doubling dimension, user supplied
    double rebuild_fraction = 1.0 / 3.0;
    std::uint64_t seed = 42;

    double c() const { return 8.0 / (5.0 * epsilon); }
    double b_max() const { return std::max(6.0, c()); }

    void validate() const {
        if (!(epsilon > 0.0) || epsilon > 0.5)
            throw config_error("epsilon must be in (0, 1/2]");
        if (!(rebuild_fraction > 0.0) || rebuild_fraction > 1.0)
            throw config_error("rebuild_fraction must be in (0, 1]");
    }
};

struct NeighborLink {
    PointId other = kInvalidPoint;
    double dist = 0.0;
};

/// Everything a single insertion changed; substructures consume this to stay
/// in sync without rescanning the hierarchy.
struct InsertReport {
    PointId point = kInvalidPoint;
    Level top = 0;
    PointId parent = kInvalidPoint;
    // (level, inserted point, existing point, distance)
    std::vector<std::tuple<Level, PointId, PointId, double>> new_links;
    // Existing occurrences that gained their first link and left a chain.
    std::vector<NodeRef> split_nodes;
    // Parent occurrence that gained the new child.
    NodeRef attach_parent;
    Level old_i_max = 0, new_i_max = 0;
    bool first_point = false;
};

/// Leveled net hierarchy. Level i is a (5^i/5, 3*5^i/5)-net of level i-1,
/// nested so each point occupies a contiguous run of levels up to its top.
/// Same-level occurrences within b_max * 5^i of each other carry links with
/// cached distances; occurrences with no links and a single child are kept
/// implicit inside per-point chains.
class NetHierarchy {
  public:
    NetHierarchy(const MetricSpace& space, HierarchyConfig cfg) : space_(&space), cfg_(cfg) {
        cfg_.validate();
        points_.resize(space.size());
    }

    const MetricSpace& space() const { return *space_; }
    const HierarchyConfig& config() const { return cfg_; }

    std::size_t live_count() const { return live_; }
    std::size_t member_count() const { return members_; }
    std::size_t tombstone_count() const { return tombstones_; }
    Level i_min() const { return i_min_; }
    Level i_max() const { return i_max_; }
    PointId root() const { return root_; }
    double min_pairwise_seen() const { return d_min_seen_; }
    std::uint64_t version() const { return version_; }
    std::uint64_t epoch() const { return epoch_; }

    bool contains(PointId p) const {
        return p < points_.size() && points_[p].present && !points_[p].deleted;
    }
    bool is_member(PointId p) const { return p < points_.size() && points_[p].present; }
    bool is_deleted(PointId p) const {
        return p < points_.size() && points_[p].present && points_[p].deleted;
    }

    Level top_level(PointId p) const { return rec(p).top; }
    PointId parent_point(PointId p) const { return rec(p).parent; }
    std::uint32_t insert_seq(PointId p) const { return rec(p).seq; }
    const std::vector<PointId>& insertion_order() const { return order_; }

    bool is_explicit(PointId p, Level i) const {
        const PointRec& r = rec(p);
        return std::binary_search(r.explicit_levels.begin(), r.explicit_levels.end(), i);
    }

    const std::vector<Level>& explicit_levels(PointId p) const { return rec(p).explicit_levels; }

    /// Insert sequence of the mutation that made this occurrence explicit.
    std::uint32_t explicit_creation_seq(PointId p, Level i) const {
        const PointRec& r = rec(p);
        auto it = std::lower_bound(r.explicit_levels.begin(), r.explicit_levels.end(), i);
        if (it == r.explicit_levels.end() || *it != i)
            throw lookup_error("occurrence is not explicit");
        return r.explicit_seq[static_cast<std::size_t>(it - r.explicit_levels.begin())];
    }

    Level lowest_explicit(PointId p) const {
        const PointRec& r = rec(p);
        if (r.explicit_levels.empty()) throw lookup_error("point has no explicit occurrence");
        return r.explicit_levels.front();
    }

    const std::vector<NeighborLink>& links_at(PointId p, Level i) const {
        const PointRec& r = rec(p);
        auto it = std::lower_bound(r.explicit_levels.begin(), r.explicit_levels.end(), i);
        if (it == r.explicit_levels.end() || *it != i)
            throw lookup_error("implicit occurrence has no neighbor links");
        return r.links[static_cast<std::size_t>(it - r.explicit_levels.begin())];
    }

    /// b must be one of the two configured radius classes (6 or c).
    std::vector<NeighborLink> neighbor_set(PointId p, Level i, double b) const {
        if (std::abs(b - 6.0) > 1e-12 && std::abs(b - cfg_.c()) > 1e-12)
            throw config_error("neighbor radius class must be 6 or c");
        std::vector<NeighborLink> out;
        double lim = b * pow5(i);
        for (const NeighborLink& l : links_at(p, i))
            if (l.dist <= lim) out.push_back(l);
        return out;
    }

    /// Chain-expanding ancestor: the occurrence of p's representative at
    /// level i. Marked implicit when that occurrence sits inside a chain.
    NodeRef ancestor_at(PointId p, Level i) const {
        require_member(p);
        if (i > i_max_) throw lookup_error("level above hierarchy root");
        PointId rep = p;
        while (points_[rep].top < i) {
            PointId up = points_[rep].parent;
            if (up == kInvalidPoint) break;  // root chain extends upward
            rep = up;
        }
        NodeRef n;
        n.point = rep;
        n.level = i;
        n.implicit_chain = !is_explicit(rep, i);
        return n;
    }

    /// Ancestor with the cumulative covering guarantee d < (4/5) * 5^i.
    NodeRef cover_ancestor(PointId p, Level i) const {
        if (i < i_min_ || i > i_max_) throw lookup_error("cover_ancestor: level out of range");
        return ancestor_at(p, i);
    }

    /// Parent in the compressed tree: the lowest explicit proper ancestor.
    NodeRef nav_parent(PointId p, Level i) const {
        const PointRec& r = rec(p);
        auto it = std::upper_bound(r.explicit_levels.begin(), r.explicit_levels.end(), i);
        if (it != r.explicit_levels.end()) return NodeRef{p, *it, false};
        if (r.parent == kInvalidPoint) return NodeRef{};  // root
        return NodeRef{r.parent, static_cast<Level>(r.top + 1), false};
    }

    /// Explicit children in the compressed tree, chain child first, then
    /// attached children in insertion order.
    std::vector<NodeRef> nav_children(PointId p, Level i) const {
        const PointRec& r = rec(p);
        std::vector<NodeRef> out;
        auto it = std::lower_bound(r.explicit_levels.begin(), r.explicit_levels.end(), i);
        if (it != r.explicit_levels.begin()) {
            Level prev = *(it - 1);
            if (prev < i) out.push_back(NodeRef{p, prev, false});
        }
        for (const auto& [lvl, child] : r.attached)
            if (lvl == i) out.push_back(NodeRef{child, points_[child].top, false});
        return out;
    }

    const std::vector<std::pair<Level, PointId>>& attachments(PointId p) const {
        return rec(p).attached;
    }

    /// Members of net level i (tops at or above i), represented or not.
    std::vector<PointId> level_members(Level i) const {
        std::vector<PointId> out;
        for (PointId p = 0; p < points_.size(); ++p)
            if (points_[p].present && points_[p].top >= i) out.push_back(p);
        return out;
    }

    InsertReport insert_point(PointId p) {
        if (p >= space_->size()) throw lookup_error("insert: unknown point id");
        if (points_[p].present) throw std::invalid_argument("insert: point already in hierarchy");
        InsertReport rep;
        rep.point = p;
        rep.old_i_max = i_max_;
        ++version_;

        if (members_ == 0) {
            PointRec& r = points_[p];
            r.present = true;
            r.seq = seq_counter_++;
            r.top = 0;
            r.parent = kInvalidPoint;
            add_explicit(p, 0);
            root_ = p;
            i_max_ = 0;
            i_min_ = 0;
            ++members_;
            ++live_;
            order_.push_back(p);
            rep.first_point = true;
            rep.top = 0;
            rep.new_i_max = i_max_;
            return rep;
        }

        const double theta = cfg_.b_max();
        double d_root = space_->distance(p, root_);
        if (d_root == 0.0) throw std::invalid_argument("insert: zero distance to existing point");
        // Smallest level whose packing radius reaches the root.
        Level l_analytic = ceil_log5(5.0 * d_root);
        Level i_hi = std::max(i_max_, l_analytic);

        // Descend, keeping all level-i occurrences within theta * 5^i of p.
        struct Cand {
            PointId q;
            double d;
        };
        std::vector<std::pair<Level, std::vector<Cand>>> zs;
        std::unordered_map<PointId, double> dist_cache;
        dist_cache.emplace(root_, d_root);
        auto dist_to = [&](PointId q) {
            auto it = dist_cache.find(q);
            if (it != dist_cache.end()) return it->second;
            double d = space_->distance(p, q);
            if (d == 0.0 && !points_[q].deleted)
                throw std::invalid_argument("insert: zero distance to existing point");
            dist_cache.emplace(q, d);
            return d;
        };

        Level packed_min = kNoLevel;
        std::vector<Cand> cur;
        cur.push_back({root_, d_root});
        Level i = i_hi;
        double nearest = d_root;
        while (!cur.empty()) {
            double pack_rad = 0.2 * pow5(i);
            bool packed = false;
            for (const Cand& c : cur) {
                nearest = std::min(nearest, c.d);
                if (c.d <= pack_rad) packed = true;
            }
            if (packed) packed_min = i;
            zs.emplace_back(i, cur);
            // Children of the current set, filtered to the next radius.
            std::vector<Cand> next;
            double nrad = theta * pow5(i - 1);
            auto consider = [&](PointId q) {
                double d = dist_to(q);
                if (d <= nrad) next.push_back({q, d});
            };
            for (const Cand& c : cur) {
                consider(c.q);
                for (const auto& [lvl, child] : points_[c.q].attached)
                    if (lvl == i) consider(child);
            }
            std::sort(next.begin(), next.end(), [](const Cand& a, const Cand& b) {
                return a.q < b.q;
            });
            next.erase(std::unique(next.begin(), next.end(),
                                   [](const Cand& a, const Cand& b) { return a.q == b.q; }),
                       next.end());
            cur = std::move(next);
            --i;
        }

        if (packed_min == kNoLevel)
            throw std::logic_error("insert: no packing level found");  // unreachable

        Level top_p = packed_min - 1;
        Level attach_level = packed_min;

        // Parent: closest covering candidate at the attach level, ties to the
        // lower id.
        PointId parent = kInvalidPoint;
        double parent_d = std::numeric_limits<double>::infinity();
        for (const auto& [lvl, cands] : zs) {
            if (lvl != attach_level) continue;
            double cover = 0.6 * pow5(attach_level);
            for (const Cand& c : cands) {
                if (c.d < cover && (c.d < parent_d || (c.d == parent_d && c.q < parent))) {
                    parent = c.q;
                    parent_d = c.d;
                }
            }
        }
        if (parent == kInvalidPoint) throw std::logic_error("insert: no covering parent");

        PointRec& r = points_[p];
        r.present = true;
        r.seq = seq_counter_++;
        r.top = top_p;
        r.parent = parent;
        ++members_;
        ++live_;
        order_.push_back(p);
        rep.top = top_p;
        rep.parent = parent;

        if (attach_level > i_max_) {
            i_max_ = attach_level;
            points_[root_].top = i_max_;
        }
        rep.new_i_max = i_max_;

        // Attach to the parent occurrence; that occurrence gains a second
        // child and must be explicit.
        points_[parent].attached.emplace_back(attach_level, p);
        if (!is_explicit(parent, attach_level)) {
            add_explicit(parent, attach_level);
            rep.split_nodes.push_back(NodeRef{parent, attach_level, false});
        }
        rep.attach_parent = NodeRef{parent, attach_level, false};

        // Neighbor links at every level p joined.
        double bmax = cfg_.b_max();
        for (const auto& [lvl, cands] : zs) {
            if (lvl > top_p) continue;
            double lim = bmax * pow5(lvl);
            for (const Cand& c : cands) {
                if (c.q == p || c.d > lim) continue;
                if (!is_explicit(p, lvl)) add_explicit(p, lvl);
                if (!is_explicit(c.q, lvl)) {
                    add_explicit(c.q, lvl);
                    rep.split_nodes.push_back(NodeRef{c.q, lvl, false});
                }
                add_link(p, c.q, lvl, c.d);
                rep.new_links.emplace_back(lvl, p, c.q, c.d);
            }
        }

        if (nearest < d_min_seen_) {
            d_min_seen_ = nearest;
            i_min_ = floor_log5(d_min_seen_);
        }
        return rep;
    }

    /// Tombstones the point. Returns true when the tombstone fraction
    /// triggered a full foreground rebuild from live points.
    bool delete_point(PointId p) {
        if (!is_member(p)) throw lookup_error("delete: point not in hierarchy");
        if (points_[p].deleted) throw lookup_error("delete: point already deleted");
        ++version_;
        points_[p].deleted = true;
        ++tombstones_;
        --live_;
        if (static_cast<double>(tombstones_) >=
                cfg_.rebuild_fraction * static_cast<double>(members_) &&
            live_ > 0) {
            rebuild();
            return true;
        }
        return false;
    }

    /// Rebuilds from live points in original insertion order.
    void rebuild() {
        std::vector<PointId> live;
        for (PointId p : order_)
            if (points_[p].present && !points_[p].deleted) live.push_back(p);
        points_.assign(space_->size(), PointRec{});
        order_.clear();
        members_ = live_ = tombstones_ = 0;
        root_ = kInvalidPoint;
        i_min_ = 0;
        i_max_ = 0;
        d_min_seen_ = std::numeric_limits<double>::infinity();
        seq_counter_ = 0;
        ++epoch_;
        ++version_;
        for (PointId p : live) insert_point(p);
    }

    // -- invariant audit ----------------------------------------------------

    struct InvariantReport {
        bool ok = true;
        std::string failure;
        std::size_t explicit_nodes = 0;
        std::size_t links = 0;

        void fail(const std::string& what) {
            if (ok) {
                ok = false;
                failure = what;
            }
        }
    };

    /// Full structural scan: packing, covering, hereditary property, sibling
    /// 6-neighborliness, link exactness and completeness, chain validity.
    /// Quadratic per level; intended for n up to a few thousand.
    InvariantReport verify_invariants() const {
        InvariantReport rep;
        const double tol = 1.0 + 1e-12;
        const double c = cfg_.c(), bmax = cfg_.b_max();

        std::vector<std::vector<PointId>> by_level(static_cast<std::size_t>(i_max_ - i_min_ + 1));
        for (PointId p = 0; p < points_.size(); ++p) {
            if (!points_[p].present) continue;
            const PointRec& r = points_[p];
            rep.explicit_nodes += r.explicit_levels.size();
            for (const auto& ls : r.links) rep.links += ls.size();
            for (Level i = i_min_; i <= std::min(r.top, i_max_); ++i)
                by_level[static_cast<std::size_t>(i - i_min_)].push_back(p);
            // chain validity: attachments only at explicit levels
            for (const auto& [lvl, child] : r.attached) {
                (void)child;
                if (!is_explicit(p, lvl)) rep.fail("attachment at implicit occurrence");
            }
        }
        rep.links /= 2;

        for (Level i = i_min_; i <= i_max_; ++i) {
            const auto& mem = by_level[static_cast<std::size_t>(i - i_min_)];
            double pack = 0.2 * pow5(i), cover = 0.6 * pow5(i + 1), blim = bmax * pow5(i);
            for (std::size_t a = 0; a < mem.size(); ++a) {
                for (std::size_t b = a + 1; b < mem.size(); ++b) {
                    double d = space_->distance(mem[a], mem[b]);
                    if (d * tol < pack) {
                        rep.fail("packing violated at level " + std::to_string(i));
                    }
                    bool linked = has_link(mem[a], i, mem[b]);
                    if (d <= blim && !linked)
                        rep.fail("missing neighbor link at level " + std::to_string(i));
                    if (d > blim * tol && linked)
                        rep.fail("spurious neighbor link at level " + std::to_string(i));
                }
                // covering one level up
                if (i < i_max_) {
                    PointId q = mem[a];
                    PointId par = points_[q].top >= i + 1 ? q : points_[q].parent;
                    if (par == kInvalidPoint) {
                        if (q != root_) rep.fail("missing parent");
                    } else {
                        double d = space_->distance(q, par);
                        if (!(d < cover * tol))
                            rep.fail("covering violated at level " + std::to_string(i + 1));
                    }
                }
            }
        }

        // Link exactness, hereditary property, sibling property.
        for (PointId p = 0; p < points_.size(); ++p) {
            if (!points_[p].present) continue;
            const PointRec& r = points_[p];
            for (std::size_t k = 0; k < r.explicit_levels.size(); ++k) {
                Level i = r.explicit_levels[k];
                for (const NeighborLink& l : r.links[k]) {
                    if (l.dist != space_->distance(p, l.other)) rep.fail("stale cached distance");
                    if (!has_link(l.other, i, p)) rep.fail("asymmetric link");
                    if (l.dist <= c * pow5(i) && i + 1 <= i_max_) {
                        PointId pa = points_[p].top >= i + 1 ? p : points_[p].parent;
                        PointId pb = points_[l.other].top >= i + 1 ? l.other
                                                                   : points_[l.other].parent;
                        if (pa != pb && space_->distance(pa, pb) > c * pow5(i + 1) * tol)
                            rep.fail("hereditary property violated at level " +
                                     std::to_string(i));
                    }
                }
                // Siblings under (p, i): the chain occurrence of p at i-1 and
                // every attached child. All pairs must be 6-neighbors.
                std::vector<PointId> kid_pts;
                if (i > i_min_) kid_pts.push_back(p);
                for (const auto& [lvl, child] : r.attached)
                    if (lvl == i) kid_pts.push_back(child);
                double slim = 6.0 * pow5(i - 1) * tol;
                for (std::size_t a = 0; a < kid_pts.size(); ++a)
                    for (std::size_t b = a + 1; b < kid_pts.size(); ++b)
                        if (space_->distance(kid_pts[a], kid_pts[b]) > slim)
                            rep.fail("sibling 6-neighbor property violated");
            }
        }
        return rep;
    }

    /// One line per explicit node `level point parent_point`, one line per
    /// link `level a b dist` (each link printed once, a < b).
    void debug_dump(std::ostream& os) const {
        for (PointId p = 0; p < points_.size(); ++p) {
            if (!points_[p].present) continue;
            const PointRec& r = points_[p];
            for (Level i : r.explicit_levels) {
                PointId par = i < r.top ? p : r.parent;
                os << "node " << i << ' ' << p << ' '
                   << (par == kInvalidPoint ? -1 : static_cast<long long>(par)) << '\n';
            }
            for (std::size_t k = 0; k < r.explicit_levels.size(); ++k)
                for (const NeighborLink& l : r.links[k])
                    if (p < l.other) {
                        char buf[64];
                        std::snprintf(buf, sizeof buf, "%.17g", l.dist);
                        os << "link " << r.explicit_levels[k] << ' ' << p << ' ' << l.other << ' '
                           << buf << '\n';
                    }
        }
    }

    /// Test hook: corrupts one cached link distance so audits can prove they
    /// catch inconsistent structures.
    bool corrupt_one_link_for_test(double delta) {
        for (PointId p = 0; p < points_.size(); ++p) {
            PointRec& r = points_[p];
            if (!r.present) continue;
            for (auto& ls : r.links)
                if (!ls.empty()) {
                    ls[0].dist += delta;
                    ++version_;
                    return true;
                }
        }
        return false;
    }

  private:
    struct PointRec {
        bool present = false;
        bool deleted = false;
        std::uint32_t seq = 0;
        Level top = 0;
        PointId parent = kInvalidPoint;
        std::vector<Level> explicit_levels;            // sorted
        std::vector<std::uint32_t> explicit_seq;       // insert seq that created each
        std::vector<std::vector<NeighborLink>> links;  // parallel to explicit_levels
        std::vector<std::pair<Level, PointId>> attached;
    };

    const PointRec& rec(PointId p) const {
        require_member(p);
        return points_[p];
    }

    void require_member(PointId p) const {
        if (p >= points_.size() || !points_[p].present)
            throw lookup_error("point " + std::to_string(p) + " not in hierarchy");
    }

    void add_explicit(PointId p, Level i) {
        PointRec& r = points_[p];
        auto it = std::lower_bound(r.explicit_levels.begin(), r.explicit_levels.end(), i);
        std::size_t idx = static_cast<std::size_t>(it - r.explicit_levels.begin());
        r.explicit_levels.insert(it, i);
        r.explicit_seq.insert(r.explicit_seq.begin() + idx,
                              seq_counter_ == 0 ? 0 : seq_counter_ - 1);
        r.links.emplace(r.links.begin() + idx);
    }

    void add_link(PointId a, PointId b, Level i, double d) {
        link_vec(a, i).push_back({b, d});
        link_vec(b, i).push_back({a, d});
    }

    std::vector<NeighborLink>& link_vec(PointId p, Level i) {
        PointRec& r = points_[p];
        auto it = std::lower_bound(r.explicit_levels.begin(), r.explicit_levels.end(), i);
        return r.links[static_cast<std::size_t>(it - r.explicit_levels.begin())];
    }

    bool has_link(PointId p, Level i, PointId q) const {
        const PointRec& r = points_[p];
        auto it = std::lower_bound(r.explicit_levels.begin(), r.explicit_levels.end(), i);
        if (it == r.explicit_levels.end() || *it != i) return false;
        for (const NeighborLink& l : r.links[static_cast<std::size_t>(it - r.explicit_levels.begin())])
            if (l.other == q) return true;
        return false;
    }

    const MetricSpace* space_;
    HierarchyConfig cfg_;
    std::vector<PointRec> points_;
    std::vector<PointId> order_;
    PointId root_ = kInvalidPoint;
    Level i_min_ = 0, i_max_ = 0;
    double d_min_seen_ = std::numeric_limits<double>::infinity();
    std::size_t members_ = 0, live_ = 0, tombstones_ = 0;
    std::uint32_t seq_counter_ = 0;
    std::uint64_t version_ = 0, epoch_ = 0;
};

}  // namespace doracle
