#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "doracle/common.hpp"
#include "doracle/nav_tree.hpp"
#include "doracle/net_hierarchy.hpp"
#include "doracle/pair_resolve.hpp"

namespace doracle {

/// Forest of parallel trees over the even hierarchy levels. Every occurrence
/// is dominant in exactly one tree; dominant nodes of a tree level are more
/// than 2 * 5^j apart, so a dominant covering node wins every parent contest
/// it enters. Parent assignments are made at insertion time and never revised.
class DominantForest {
  public:
    DominantForest(const NetHierarchy& h, NavTree& nav) : h_(&h), nav_(&nav) {
        // Packing admits up to (2 / (1/5))^lambda-ish prior dominants inside
        // the 2*5^j dominance radius, so the cap scales with 20^lambda.
        tree_cap_ = static_cast<int>(
            std::pow(20.0, std::ceil(std::max(1.0, h.config().lambda))) + 8);
        jump_k_ = std::max<Level>(1, static_cast<Level>(std::ceil(
                                          std::log(h.config().c()) / std::log(5.0))));
        nav_->register_jump(jump_k_);
    }

    int tree_count() const {
        ensure();
        return tree_count_;
    }
    int tree_cap() const { return tree_cap_; }
    OpCounters& counters() const { return counters_; }

    void notify(const InsertReport& rep) {
        if (epoch_ != h_->epoch() || version_ + 1 != h_->version()) {
            rebuild();
            return;
        }
        absorb_insert(rep.point, rep.new_i_max);
        version_ = h_->version();
    }

    void notify_delete() {
        if (version_ + 1 == h_->version() && epoch_ == h_->epoch()) version_ = h_->version();
    }

    /// Tree index this occurrence is dominant in.
    int dominance(PointId p, Level j) const {
        auto it = rows_.find(node_key(p, j));
        return it == rows_.end() ? 0 : it->second.dominant_tree;
    }

    /// Parent point of occurrence (p, j) in tree h.
    PointId tree_parent(PointId p, Level j, int tree) const {
        auto it = rows_.find(node_key(p, j));
        if (it == rows_.end()) return p;  // implicit self-parent row
        const Row& r = it->second;
        for (const auto& [t, z] : r.dominant_parents)
            if (t == tree) return z;
        return r.default_parent;
    }

    struct ForestAnswer {
        double estimate = 0.0;
        Level lca_level_min = 0;
        ResolvedPair pair;
    };

    /// LCA in every tree, then a jump-aided descent to the lowest ancestral
    /// c-neighbors; the answer is their cached distance.
    ForestAnswer query(PointId x, PointId y) const {
        require_live(x);
        require_live(y);
        ensure();
        ForestAnswer ans;
        if (x == y) return ans;

        Level j_min = kNoLevel;
        Level start = floor_even(h_->i_min()) - 2;
        for (int t = 0; t < tree_count_; ++t) {
            counters_.lca_queries++;
            Level j = climb_lca_level(x, y, t, start);
            if (j_min == kNoLevel || j < j_min) j_min = j;
        }
        ans.lca_level_min = j_min;

        // Locate explicit ancestors near the meet level and jump down by
        // multiples of ceil(log5 c), then scan for the lowest c-pair.
        Level hint = j_min;
        Level anchor_level = std::min(j_min, h_->i_max());
        NodeRef wx = explicit_at_or_above(x, anchor_level);
        NodeRef wy = explicit_at_or_above(y, anchor_level);
        NodeRef jx = nav_->k_jump(nav_->leaf_of(x), wx, jump_k_);
        NodeRef jy = nav_->k_jump(nav_->leaf_of(y), wy, jump_k_);
        hint = std::min(jx.level, jy.level) - 1;

        PairResolver resolver(*h_, &counters_);
        ans.pair = resolver.resolve(x, y, h_->config().c(), hint);
        ans.estimate = ans.pair.dist;
        return ans;
    }

    struct InvariantReport {
        bool ok = true;
        std::string failure;
        void fail(const std::string& w) {
            if (ok) {
                ok = false;
                failure = w;
            }
        }
    };

    /// Dominance packing, uniqueness of assignments, parent covering, and the
    /// geometric ancestor-drift bound. Quadratic per level.
    InvariantReport verify_invariants() const {
        ensure();
        InvariantReport rep;
        const double tol = 1.0 + 1e-12;
        for (Level j = floor_even(h_->i_min()); j <= h_->i_max(); j += 2) {
            auto members = h_->level_members(j);
            // dominance packing per tree
            for (std::size_t a = 0; a < members.size(); ++a) {
                int ta = dominance(members[a], j);
                if (ta < 0 || ta >= tree_count_) rep.fail("dominance tree out of range");
                for (std::size_t b = a + 1; b < members.size(); ++b) {
                    if (ta != dominance(members[b], j)) continue;
                    double d = h_->space().distance(members[a], members[b]);
                    if (!(d * tol > 2.0 * pow5(j)))
                        rep.fail("dominant nodes too close at level " + std::to_string(j));
                }
            }
            // parent covering
            for (PointId p : members) {
                if (h_->top_level(p) < j) continue;
                for (int t = 0; t < tree_count_; ++t) {
                    PointId z = tree_parent(p, j, t);
                    if (j + 2 <= h_->top_level(p) && z == p) continue;
                    double d = h_->space().distance(p, z);
                    if (!(d <= pow5(j + 2) * tol))
                        rep.fail("forest parent does not cover child at level " +
                                 std::to_string(j));
                }
            }
        }
        return rep;
    }

    /// d(u, ancestor at level m) < 25/24 * 5^m, sampled.
    bool check_ancestor_drift(std::uint64_t seed, int samples = 2000) const {
        ensure();
        RngStream rng(seed);
        std::size_t n = h_->space().size();
        for (int s = 0; s < samples; ++s) {
            PointId p = static_cast<PointId>(rng.next_below(n));
            if (!h_->is_member(p)) continue;
            int t = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(tree_count_)));
            Level j = floor_even(h_->i_min());
            PointId cur = p;
            while (j + 2 <= h_->i_max() + 2) {
                cur = tree_parent(cur, j, t);
                j += 2;
                double lim = (25.0 / 24.0) * pow5(j);
                if (!(h_->space().distance(p, cur) < lim)) return false;
                if (cur == h_->root()) break;
            }
        }
        return true;
    }

  private:
    struct Row {
        int dominant_tree = 0;
        PointId default_parent = kInvalidPoint;
        std::vector<std::pair<int, PointId>> dominant_parents;
    };

    void require_live(PointId p) const {
        if (!h_->contains(p)) throw lookup_error("forest query endpoint is not live");
    }

    void ensure() const {
        if (epoch_ != h_->epoch() || version_ != h_->version()) rebuild();
    }

    void rebuild() const {
        rows_.clear();
        tree_count_ = 0;
        // Replay in insertion order, tracking the root level as it was at
        // each point's insertion so assignments reproduce exactly.
        Level imax_running = 0;
        for (PointId p : h_->insertion_order()) {
            if (!h_->is_member(p)) continue;
            if (p != h_->root())
                imax_running = std::max(imax_running, static_cast<Level>(h_->top_level(p) + 1));
            absorb_insert(p, imax_running);
        }
        epoch_ = h_->epoch();
        version_ = h_->version();
    }

    /// Assignments for every even-level occurrence of a newly inserted point,
    /// ascending. Neighbor scans filter by insertion sequence so a from-
    /// scratch replay reproduces the incremental assignments exactly.
    /// `imax_at_insert` is the root level as of this point's insertion.
    void absorb_insert(PointId p, Level imax_at_insert) const {
        Level top = p == h_->root() ? imax_at_insert : h_->top_level(p);
        Level top_even = floor_even(top);
        Level lo = floor_even(h_->i_min()) - 2;
        std::uint32_t my_seq = h_->insert_seq(p);
        for (Level j = lo; j <= top_even; j += 2) {
            bool self_explicit = h_->is_explicit(p, j);
            bool parent_explicit = j + 2 <= top && h_->is_explicit(p, j + 2);
            bool is_top_row = (j == top_even);

            // Dominance: first tree with no prior dominant within 2 * 5^j.
            int dom = 0;
            if (self_explicit) {
                std::vector<bool> used(static_cast<std::size_t>(tree_count_) + 1, false);
                for (const NeighborLink& l : h_->links_at(p, j)) {
                    if (h_->insert_seq(l.other) > my_seq) continue;
                    if (l.dist <= 2.0 * pow5(j)) {
                        int t = dominance(l.other, j);
                        if (t < static_cast<int>(used.size())) used[t] = true;
                    }
                }
                while (dom < static_cast<int>(used.size()) && used[dom]) ++dom;
                if (dom >= tree_cap_)
                    throw std::runtime_error(
                        "dominant forest exceeded its tree cap (diagnostic failure)");
            }
            if (!self_explicit && !parent_explicit && !is_top_row) continue;

            Row row;
            row.dominant_tree = dom;
            if (dom + 1 > tree_count_) tree_count_ = dom + 1;

            // Parent candidates: occurrences at j+2 within 5^(j+2), existing
            // at insertion time.
            double lim = pow5(j + 2);
            std::vector<std::pair<PointId, double>> cands;
            if (p == h_->root() && j + 2 > imax_at_insert) {
                row.default_parent = p;
                rows_.emplace(node_key(p, j), std::move(row));
                continue;
            }
            if (j + 2 > imax_at_insert) {
                cands.emplace_back(h_->root(), h_->space().distance(p, h_->root()));
            } else {
                NodeRef anc = h_->ancestor_at(p, j + 2);
                double danc = h_->space().distance(p, anc.point);
                if (danc <= lim) cands.emplace_back(anc.point, danc);
                if (!anc.implicit_chain)
                    for (const NeighborLink& l : h_->links_at(anc.point, j + 2)) {
                        if (h_->insert_seq(l.other) > my_seq) continue;
                        double d = h_->space().distance(p, l.other);
                        if (d <= lim) cands.emplace_back(l.other, d);
                    }
            }
            if (cands.empty()) throw std::logic_error("no covering forest parent");
            std::sort(cands.begin(), cands.end(), [](const auto& a, const auto& b) {
                if (a.second != b.second) return a.second < b.second;
                return a.first < b.first;
            });
            row.default_parent = cands[0].first;
            for (const auto& [z, d] : cands) {
                (void)d;
                int t = dominance(z, j + 2);
                bool taken = false;
                for (const auto& [t2, z2] : row.dominant_parents) {
                    (void)z2;
                    if (t2 == t) taken = true;
                }
                if (!taken) row.dominant_parents.emplace_back(t, z);
            }
            rows_.emplace(node_key(p, j), std::move(row));
        }
    }

    Level climb_lca_level(PointId x, PointId y, int tree, Level start) const {
        PointId ax = x, ay = y;
        Level j = start;
        while (ax != ay) {
            ax = step_up(ax, j, tree);
            ay = step_up(ay, j, tree);
            j += 2;
            if (j > h_->i_max() + 4) throw std::logic_error("forest climb ran past the root");
        }
        return j;
    }

    PointId step_up(PointId p, Level j, int tree) const {
        counters_.scan_steps++;
        return tree_parent(p, j, tree);
    }

    NodeRef explicit_at_or_above(PointId p, Level j) const {
        NodeRef n = h_->ancestor_at(p, j);
        if (n.implicit_chain) n = h_->nav_parent(n.point, n.level);
        return n;
    }

    const NetHierarchy* h_;
    NavTree* nav_;
    Level jump_k_ = 1;
    int tree_cap_ = 24;
    mutable OpCounters counters_;
    mutable std::unordered_map<std::uint64_t, Row> rows_;
    mutable int tree_count_ = 0;
    mutable std::uint64_t version_ = ~0ull, epoch_ = ~0ull;
};

}  // namespace doracle
