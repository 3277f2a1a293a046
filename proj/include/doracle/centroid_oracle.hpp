#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <unordered_map>
#include <vector>

#include "doracle/common.hpp"
#include "doracle/nav_tree.hpp"
#include "doracle/net_hierarchy.hpp"
#include "doracle/pair_resolve.hpp"

namespace doracle {

struct CentroidAnswer {
    double estimate = 0.0;
    ResolvedPair pair;
    std::uint64_t outer_probes = 0;
    std::uint64_t inner_probes = 0;
};

struct PathGraphEdge {
    Level level = 0;          // lowest level holding a qualifying pair
    NodeRef witness_a, witness_b;
};

namespace detail {
/// Normalized key for an unordered pair of small integer ids.
inline std::uint64_t pair_key(std::uint32_t a, std::uint32_t b) {
    if (a > b) std::swap(a, b);
    return (static_cast<std::uint64_t>(a) << 32) | b;
}
}  // namespace detail

/// Static centroid path decomposition of the compressed tree: paths by dyadic
/// subtree-size classes, a path tree for binary searches over the heads on a
/// root path, and a path graph holding, per path pair, the lowest level with
/// a c-neighbor pair and its witness.
class CentroidStatic {
  public:
    explicit CentroidStatic(const NetHierarchy& h) : h_(&h) {}

    OpCounters& counters() const { return counters_; }

    void ensure() const {
        if (version_ != h_->version() || epoch_ != h_->epoch()) build();
    }

    std::size_t path_count() const {
        ensure();
        return heads_.size();
    }

    /// Number of distinct paths crossed walking a node to the root.
    int paths_to_root(const NodeRef& n) const {
        ensure();
        int id = node_id(n);
        return cp_index_.depth(path_of_[id]) + 1;
    }

    /// Path-graph edges as (head_a, head_b, level) tuples, for brute-force
    /// comparison in tests.
    std::vector<std::tuple<NodeRef, NodeRef, Level>> graph_edges() const {
        ensure();
        std::vector<std::tuple<NodeRef, NodeRef, Level>> out;
        for (const auto& [key, e] : graph_) {
            std::uint32_t a = static_cast<std::uint32_t>(key >> 32);
            std::uint32_t b = static_cast<std::uint32_t>(key & 0xffffffffu);
            out.emplace_back(nodes_[heads_[a]], nodes_[heads_[b]], e.level);
        }
        std::sort(out.begin(), out.end(), [](const auto& x, const auto& y) {
            return std::get<2>(x) < std::get<2>(y);
        });
        return out;
    }

    CentroidAnswer query(PointId x, PointId y) const {
        require_live(x);
        require_live(y);
        ensure();
        CentroidAnswer ans;
        if (x == y) return ans;
        PairResolver resolver(*h_, &counters_);
        const double c = h_->config().c();

        // Binary search over the centroid-path heads on x's root path, then
        // on y's; hereditary monotonicity makes both predicates upward-closed.
        auto [pa, entry_ax] = locate_side(x, y, c, ans.outer_probes);
        auto [pb, entry_by] = locate_side(y, x, c, ans.inner_probes);

        Level head_a = nodes_[heads_[pa]].level;
        Level head_b = nodes_[heads_[pb]].level;
        Level lo = std::max(entry_ax, entry_by);
        Level hi = std::min(head_a, head_b);

        Level hint;
        auto it = graph_.find(detail::pair_key(pa, pb));
        if (it != graph_.end() && it->second.level >= lo && it->second.level <= hi) {
            // The precomputed edge weight pins the level directly.
            hint = it->second.level;
        } else {
            // The edge witness sits below the query's entry points (or the
            // window degenerated); binary search the level window instead.
            hint = window_search(x, y, c, lo, hi, ans.inner_probes);
        }
        ans.pair = resolver.resolve(x, y, c, hint);
        ans.estimate = ans.pair.dist;
        return ans;
    }

  private:
    friend class CentroidDynamic;

    void require_live(PointId p) const {
        if (!h_->contains(p)) throw lookup_error("centroid query endpoint is not live");
    }

    int node_id(const NodeRef& n) const {
        auto it = id_.find(node_key(n));
        if (it == id_.end()) throw epoch_error("node unknown to the centroid decomposition");
        return it->second;
    }

    /// Lowest path on p's root-path whose head is a c-neighbor of the other
    /// point's same-level ancestor. Returns (path id, entry level of p's path
    /// segment into that path).
    std::pair<std::uint32_t, Level> locate_side(PointId p, PointId other, double c,
                                                std::uint64_t& probes) const {
        int leaf = node_id(NodeRef{p, h_->lowest_explicit(p), false});
        std::uint32_t leaf_path = path_of_[leaf];
        int depth = cp_index_.depth(leaf_path);
        // Paths indexed by CP-depth: t = 0 is the leaf path, t = depth is the
        // root path. Predicate over t is upward-closed.
        auto head_of = [&](int t) {
            return heads_[cp_index_.ancestor_at_depth(static_cast<int>(leaf_path), depth - t)];
        };
        auto pred = [&](int t) {
            const NodeRef& head = nodes_[head_of(t)];
            ++probes;
            counters_.probes++;
            PairResolver r(*h_, &counters_);
            PointId ap = r.rep_at(p, head.level);
            PointId ao = r.rep_at(other, head.level);
            if (ap == ao) return true;
            return h_->space().distance(ap, ao) <= c * pow5(head.level);
        };
        int lo = 0, hi = depth;  // pred(depth) holds: both reach the root
        if (pred(0)) {
            std::uint32_t pid = path_of_[leaf];
            return {pid, nodes_[leaf].level};
        }
        while (lo + 1 < hi) {
            int mid = lo + (hi - lo) / 2;
            if (pred(mid))
                hi = mid;
            else
                lo = mid;
        }
        std::uint32_t pid = static_cast<std::uint32_t>(
            cp_index_.ancestor_at_depth(static_cast<int>(leaf_path), depth - hi));
        // Entry of p's root path into this path: the parent of the previous
        // path's head.
        int prev_head = head_of(hi - 1);
        NodeRef par = h_->nav_parent(nodes_[prev_head].point, nodes_[prev_head].level);
        return {pid, par.level};
    }

    /// Binary search for the lowest c-true level inside [lo, hi].
    Level window_search(PointId x, PointId y, double c, Level lo, Level hi,
                        std::uint64_t& probes) const {
        PairResolver r(*h_, &counters_);
        auto pred = [&](Level j) {
            ++probes;
            counters_.probes++;
            PointId ax = r.rep_at(x, j), ay = r.rep_at(y, j);
            if (ax == ay) return true;
            return h_->space().distance(ax, ay) <= c * pow5(j);
        };
        if (lo > hi) return hi;
        if (pred(lo)) return lo;
        Level a = lo, b = hi;
        if (!pred(hi)) return hi + 1;
        while (a + 1 < b) {
            Level mid = a + (b - a) / 2;
            if (pred(mid))
                b = mid;
            else
                a = mid;
        }
        return b;
    }

    void build() const {
        nodes_.clear();
        id_.clear();
        for (PointId p = 0; p < h_->space().size(); ++p) {
            if (!h_->is_member(p)) continue;
            for (Level e : h_->explicit_levels(p)) {
                id_.emplace(node_key(p, e), static_cast<int>(nodes_.size()));
                nodes_.push_back(NodeRef{p, e, false});
            }
        }
        int n = static_cast<int>(nodes_.size());
        parent_.assign(n, -1);
        std::vector<std::vector<int>> children(n);
        int root = -1;
        for (int v = 0; v < n; ++v) {
            NodeRef par = h_->nav_parent(nodes_[v].point, nodes_[v].level);
            if (!par.valid()) {
                root = v;
                continue;
            }
            parent_[v] = id_.at(node_key(par));
        }
        for (int v = 0; v < n; ++v)
            if (parent_[v] >= 0) children[parent_[v]].push_back(v);

        // Subtree sizes bottom-up over a DFS order.
        std::vector<int> order;
        order.reserve(n);
        order.push_back(root);
        for (std::size_t i = 0; i < order.size(); ++i)
            for (int c : children[order[i]]) order.push_back(c);
        size_.assign(n, 1);
        for (std::size_t i = order.size(); i-- > 1;) size_[parent_[order[i]]] += size_[order[i]];

        // Path membership: share the parent's path iff both sizes fall in the
        // same dyadic class.
        auto cls = [&](int v) {
            int k = 0;
            while ((2 << k) <= size_[v]) ++k;
            return k;
        };
        path_of_.assign(n, 0);
        heads_.clear();
        for (int v : order) {
            if (v == root || cls(v) != cls(parent_[v])) {
                path_of_[v] = static_cast<std::uint32_t>(heads_.size());
                heads_.push_back(v);
            } else {
                path_of_[v] = path_of_[parent_[v]];
            }
        }

        // Centroid path tree.
        int m = static_cast<int>(heads_.size());
        std::vector<int> cp_parent(m, -1);
        std::vector<std::vector<int>> cp_children(m);
        int cp_root = -1;
        for (int pi = 0; pi < m; ++pi) {
            int head = heads_[pi];
            if (parent_[head] < 0) {
                cp_root = pi;
                continue;
            }
            cp_parent[pi] = static_cast<int>(path_of_[parent_[head]]);
            cp_children[cp_parent[pi]].push_back(pi);
        }
        cp_index_.build(cp_parent, cp_children, cp_root, nullptr);

        // Path graph from the c-neighbor links.
        graph_.clear();
        const double c = h_->config().c();
        for (int v = 0; v < n; ++v) {
            const NodeRef& nv = nodes_[v];
            for (const NeighborLink& l : h_->links_at(nv.point, nv.level)) {
                if (nv.point >= l.other) continue;
                if (l.dist > c * pow5(nv.level)) continue;
                int u = id_.at(node_key(l.other, nv.level));
                add_edge(path_of_[v], path_of_[u], nv.level, nodes_[v], nodes_[u]);
            }
        }
        version_ = h_->version();
        epoch_ = h_->epoch();
    }

    void add_edge(std::uint32_t pa, std::uint32_t pb, Level lvl, NodeRef a, NodeRef b) const {
        auto key = detail::pair_key(pa, pb);
        auto it = graph_.find(key);
        if (it == graph_.end() || lvl < it->second.level) graph_[key] = PathGraphEdge{lvl, a, b};
    }

    const NetHierarchy* h_;
    mutable OpCounters counters_;
    mutable std::vector<NodeRef> nodes_;
    mutable std::unordered_map<std::uint64_t, int> id_;
    mutable std::vector<int> parent_;
    mutable std::vector<int> size_;
    mutable std::vector<std::uint32_t> path_of_;
    mutable std::vector<int> heads_;  // node id of each path's head
    mutable TreeIndex cp_index_;
    mutable std::unordered_map<std::uint64_t, PathGraphEdge> graph_;
    mutable std::uint64_t version_ = ~0ull, epoch_ = ~0ull;
};

/// Dynamic decomposition: the tree is binarized left-child/right-sibling and
/// partitioned into CT clusters of logarithmic size, each with at most two
/// child clusters; cluster roots form the skeleton tree, which carries the
/// centroid paths the nested query searches. The CT partition is maintained
/// incrementally (insertion-order dependent, replayable); the skeleton
/// indexes and the pseudo-neighbor path graph are derived lazily per version.
class CentroidDynamic {
  public:
    explicit CentroidDynamic(const NetHierarchy& h) : h_(&h) {}

    OpCounters& counters() const { return counters_; }
    std::uint64_t maintenance_touches() const { return touches_; }

    void notify(const InsertReport& rep) {
        if (epoch_ != h_->epoch() || ct_version_ + 1 != h_->version()) {
            rebuild_partition();
            return;
        }
        apply_insert(*h_, rep);
        ct_version_ = h_->version();
        index_stale_ = true;
    }

    void notify_delete() {
        if (ct_version_ + 1 == h_->version() && epoch_ == h_->epoch())
            ct_version_ = h_->version();
    }

    CentroidAnswer query(PointId x, PointId y) const {
        require_live(x);
        require_live(y);
        ensure_index();
        CentroidAnswer ans;
        if (x == y) return ans;
        const double c = h_->config().c();

        auto [px, lo_x, hi_x] = outer_search(x, y, c, ans.outer_probes, ans.inner_probes);
        auto [py, lo_y, hi_y] = outer_search(y, x, c, ans.inner_probes, ans.inner_probes);
        (void)px;
        (void)py;
        Level lo = std::max(lo_x, lo_y);
        Level hi = std::min(hi_x, hi_y);

        Level hint = extract_level(x, y, c, lo, hi, ans.inner_probes);
        PairResolver resolver(*h_, &counters_);
        ans.pair = resolver.resolve(x, y, c, hint);
        ans.estimate = ans.pair.dist;
        return ans;
    }

    // -- introspection ------------------------------------------------------

    struct PartitionStats {
        bool ok = true;
        std::string failure;
        std::size_t ct_count = 0;
        std::size_t max_ct_size = 0;
        std::size_t max_small_size = 0;
        int max_child_cts = 0;
        std::size_t ct_cap = 0, small_cap = 0;
        void fail(const std::string& w) {
            if (ok) {
                ok = false;
                failure = w;
            }
        }
    };

    PartitionStats verify_partition() const {
        PartitionStats st;
        st.ct_cap = 2 * ct_target_;
        st.small_cap = 2 * small_target_;
        std::size_t covered = 0;
        for (std::size_t ci = 0; ci < cts_.size(); ++ci) {
            const Ct& ct = cts_[ci];
            if (ct.members.empty()) continue;
            ++st.ct_count;
            st.max_ct_size = std::max(st.max_ct_size, ct.members.size());
            if (ct.members.size() > 2 * ct_target_) st.fail("CT cluster above size cap");
            int kids = 0;
            for (std::size_t cj = 0; cj < cts_.size(); ++cj) {
                if (cj == ci || cts_[cj].members.empty()) continue;
                NodeRef att = bin_parent(cts_[cj].root);
                if (att.valid() && ct_slot(att) == static_cast<int>(ci)) ++kids;
            }
            st.max_child_cts = std::max(st.max_child_cts, kids);
            if (kids > 2) st.fail("CT cluster with more than two child clusters");
            covered += ct.members.size();
            // connectivity: every non-root member's bin parent stays inside
            for (const NodeRef& m : ct.members) {
                if (m == ct.root) continue;
                NodeRef bp = bin_parent(m);
                if (!bp.valid() || ct_slot(bp) != static_cast<int>(ci))
                    st.fail("CT cluster is not connected");
            }
            std::size_t small_total = 0;
            for (const auto& chunk : ct.small_chunks) {
                st.max_small_size = std::max(st.max_small_size, chunk.size());
                if (chunk.size() > 2 * small_target_) st.fail("small-CT above size cap");
                small_total += chunk.size();
            }
            if (small_total != ct.members.size())
                st.fail("small-CT chunks do not cover the cluster");
        }
        std::size_t nodes = 0;
        for (PointId p = 0; p < h_->space().size(); ++p)
            if (h_->is_member(p)) nodes += h_->explicit_levels(p).size();
        if (covered != nodes) st.fail("CT partition does not cover the tree");
        return st;
    }

    /// Pseudo-neighbor edges as (root_a, root_b) -> level, for scratch diffs.
    std::vector<std::tuple<std::uint64_t, std::uint64_t, Level>> pseudo_edges_sorted() const {
        ensure_index();
        std::vector<std::tuple<std::uint64_t, std::uint64_t, Level>> out;
        for (const auto& [key, e] : ct_edges_) {
            out.emplace_back(node_key(cts_[key >> 32].root),
                             node_key(cts_[key & 0xffffffffu].root), e.level);
        }
        std::sort(out.begin(), out.end());
        return out;
    }

    int skeleton_paths_to_root(PointId p) const {
        ensure_index();
        int ct = ct_slot(NodeRef{p, h_->lowest_explicit(p), false});
        return hat_cp_.depth(hat_path_of_[hat_id_.at(ct)]) + 1;
    }

  private:
    struct Ct {
        NodeRef root;
        std::vector<NodeRef> members;
        std::vector<std::vector<NodeRef>> small_chunks;
    };

    struct CtEdge {
        Level level;
        NodeRef witness_a, witness_b;
    };

    void require_live(PointId p) const {
        if (!h_->contains(p)) throw lookup_error("centroid query endpoint is not live");
    }

    bool known(const NodeRef& n) const { return ct_of_.count(node_key(n)) != 0; }

    int ct_slot(const NodeRef& n) const {
        auto it = ct_of_.find(node_key(n));
        if (it == ct_of_.end()) throw epoch_error("node unknown to the CT partition");
        return it->second;
    }

    /// Targets only ever grow within an epoch, tracking the live count.
    void refresh_caps_for(std::size_t n) const {
        n = std::max<std::size_t>(2, n);
        ct_target_ = std::max(
            ct_target_,
            std::max<std::size_t>(4, static_cast<std::size_t>(ceil_log2(double(n)))));
        small_target_ = std::max(
            small_target_,
            std::max<std::size_t>(
                2, static_cast<std::size_t>(ceil_log2(std::max(2.0, std::log2(double(n)))))));
    }

    /// Left-child/right-sibling parent: the previous ordered sibling, or the
    /// tree parent for a first child.
    static NodeRef bin_parent(const NetHierarchy& t, const NodeRef& v) {
        NodeRef tp = t.nav_parent(v.point, v.level);
        if (!tp.valid()) return NodeRef{};
        auto kids = t.nav_children(tp.point, tp.level);
        for (std::size_t i = 0; i < kids.size(); ++i)
            if (kids[i] == v) return i == 0 ? tp : kids[i - 1];
        throw std::logic_error("node missing from its parent's child list");
    }
    NodeRef bin_parent(const NodeRef& v) const { return bin_parent(*h_, v); }

    void apply_insert(const NetHierarchy& t, const InsertReport& rep) const {
        refresh_caps_for(t.live_count());
        for (const NodeRef& s : rep.split_nodes) absorb_internal(t, s);
        if (rep.attach_parent.valid() && !known(rep.attach_parent))
            absorb_internal(t, rep.attach_parent);
        // The new point's chain, top-down: each node enters as a leaf.
        const auto& els = t.explicit_levels(rep.point);
        for (auto it = els.rbegin(); it != els.rend(); ++it)
            absorb_leaf(t, NodeRef{rep.point, *it, false});
    }

    void absorb_leaf(const NetHierarchy& t, const NodeRef& v) const {
        NodeRef bp = bin_parent(t, v);
        ++touches_;
        if (!bp.valid()) {  // very first node
            new_ct(t, v, {v});
            return;
        }
        int cp = ct_slot(bp);
        if (cts_[cp].members.size() < 2 * ct_target_) {
            cts_[cp].members.push_back(v);
            ct_of_[node_key(v)] = cp;
            rechunk(t, cp);
            return;
        }
        int mine = new_ct(t, v, {v});
        (void)mine;
        if (count_child_cts(t, cp) > 2) repartition(t, cp);
    }

    /// Chain split: v appears on the binarized edge between its bin parent
    /// and that parent's previous occupant; join the parent's cluster.
    void absorb_internal(const NetHierarchy& t, const NodeRef& v) const {
        if (known(v)) return;
        NodeRef bp = bin_parent(t, v);
        ++touches_;
        int cp = bp.valid() ? ct_slot(bp) : -1;
        if (cp < 0) {
            new_ct(t, v, {v});
            return;
        }
        cts_[cp].members.push_back(v);
        ct_of_[node_key(v)] = cp;
        if (cts_[cp].members.size() > 2 * ct_target_)
            repartition(t, cp);
        else
            rechunk(t, cp);
    }

    int new_ct(const NetHierarchy& t, const NodeRef& root, std::vector<NodeRef> members) const {
        int slot;
        if (!free_slots_.empty()) {
            slot = free_slots_.back();
            free_slots_.pop_back();
        } else {
            slot = static_cast<int>(cts_.size());
            cts_.emplace_back();
        }
        cts_[slot].root = root;
        cts_[slot].members = std::move(members);
        for (const NodeRef& m : cts_[slot].members) ct_of_[node_key(m)] = slot;
        rechunk(t, slot);
        return slot;
    }

    int count_child_cts(const NetHierarchy& t, int slot) const {
        int kids = 0;
        for (std::size_t cj = 0; cj < cts_.size(); ++cj) {
            if (static_cast<int>(cj) == slot || cts_[cj].members.empty()) continue;
            NodeRef att = bin_parent(t, cts_[cj].root);
            if (att.valid() && ct_of_.count(node_key(att)) &&
                ct_of_.at(node_key(att)) == slot)
                ++kids;
        }
        return kids;
    }

    /// Greedy bottom-up regrouping of one oversized or overcrowded cluster
    /// into clusters of size <= target with at most two child clusters each.
    void repartition(const NetHierarchy& t, int slot) const {
        std::vector<NodeRef> M = std::move(cts_[slot].members);
        touches_ += M.size();
        // local adjacency
        std::unordered_map<std::uint64_t, int> local;
        for (std::size_t i = 0; i < M.size(); ++i) local.emplace(node_key(M[i]), i);
        int n = static_cast<int>(M.size());
        std::vector<int> lparent(n, -1);
        std::vector<std::vector<int>> lkids(n);
        std::vector<int> ext_kids(n, 0);  // external child CTs hanging below
        int lroot = -1;
        for (int i = 0; i < n; ++i) {
            NodeRef bp = bin_parent(t, M[i]);
            auto it = bp.valid() ? local.find(node_key(bp)) : local.end();
            if (it == local.end())
                lroot = i;
            else {
                lparent[i] = it->second;
                lkids[it->second].push_back(i);
            }
        }
        for (std::size_t cj = 0; cj < cts_.size(); ++cj) {
            if (static_cast<int>(cj) == slot || cts_[cj].members.empty()) continue;
            NodeRef att = bin_parent(t, cts_[cj].root);
            if (!att.valid()) continue;
            auto it = local.find(node_key(att));
            if (it != local.end()) ext_kids[it->second]++;
        }
        // bottom-up greedy, deterministic child order by (point, level)
        for (auto& ks : lkids)
            std::sort(ks.begin(), ks.end(), [&](int a, int b) {
                if (M[a].point != M[b].point) return M[a].point < M[b].point;
                return M[a].level < M[b].level;
            });
        std::vector<int> order;  // topological, root first
        order.push_back(lroot);
        for (std::size_t i = 0; i < order.size(); ++i)
            for (int c : lkids[order[i]]) order.push_back(c);
        std::vector<int> group(n, -1);
        std::vector<std::vector<int>> group_members;
        std::vector<int> group_children;  // child-CT count of each group
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            int v = *it;
            int g = static_cast<int>(group_members.size());
            group_members.push_back({v});
            group_children.push_back(ext_kids[v]);
            group[v] = g;
            int remaining = static_cast<int>(lkids[v].size());
            for (int c : lkids[v]) {
                --remaining;
                int cg = group[c];
                std::size_t merged = group_members[g].size() + group_members[cg].size();
                int kid_total = group_children[g] + group_children[cg];
                // keep room for every remaining sibling to contribute a child
                if (merged <= ct_target_ && kid_total + remaining <= 2) {
                    for (int m : group_members[cg]) {
                        group[m] = g;
                        group_members[g].push_back(m);
                    }
                    group_members[cg].clear();
                    group_children[g] = kid_total;
                } else {
                    group_children[g] += 1;  // finalized child cluster
                    if (group_children[g] + remaining > 2)
                        throw std::logic_error("repartition violated the child bound");
                }
            }
        }
        // materialize groups; the root group reuses the slot
        bool slot_used = false;
        for (std::size_t g = 0; g < group_members.size(); ++g) {
            if (group_members[g].empty()) continue;
            std::vector<NodeRef> mem;
            mem.reserve(group_members[g].size());
            int top = group_members[g][0];  // first pushed = group seed (topmost)
            for (int m : group_members[g]) mem.push_back(M[m]);
            if (static_cast<std::size_t>(group[lroot]) == g) {
                cts_[slot].root = M[top];
                cts_[slot].members = std::move(mem);
                for (const NodeRef& m : cts_[slot].members) ct_of_[node_key(m)] = slot;
                rechunk(t, slot);
                slot_used = true;
            } else {
                new_ct(t, M[top], std::move(mem));
            }
        }
        if (!slot_used) {
            cts_[slot].members.clear();
            cts_[slot].small_chunks.clear();
            free_slots_.push_back(slot);
        }
        index_stale_ = true;
    }

    /// Small-CT chunks: the same greedy at the inner target, one level deep.
    void rechunk(const NetHierarchy& t, int slot) const {
        Ct& ct = cts_[slot];
        touches_ += ct.members.size();
        ct.small_chunks.clear();
        std::unordered_map<std::uint64_t, int> local;
        for (std::size_t i = 0; i < ct.members.size(); ++i)
            local.emplace(node_key(ct.members[i]), i);
        int n = static_cast<int>(ct.members.size());
        std::vector<int> lparent(n, -1);
        std::vector<std::vector<int>> lkids(n);
        int lroot = 0;
        for (int i = 0; i < n; ++i) {
            NodeRef bp = bin_parent(t, ct.members[i]);
            auto it = bp.valid() ? local.find(node_key(bp)) : local.end();
            if (it == local.end())
                lroot = i;
            else
                lkids[it->second].push_back(i);
        }
        std::vector<int> order;
        order.push_back(lroot);
        for (std::size_t i = 0; i < order.size(); ++i)
            for (int c : lkids[order[i]]) order.push_back(c);
        std::vector<int> group(n, -1);
        std::vector<std::vector<int>> gm;
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            int v = *it;
            int g = static_cast<int>(gm.size());
            gm.push_back({v});
            group[v] = g;
            for (int c : lkids[v]) {
                int cg = group[c];
                if (gm[g].size() + gm[cg].size() <= small_target_) {
                    for (int m : gm[cg]) {
                        group[m] = g;
                        gm[g].push_back(m);
                    }
                    gm[cg].clear();
                }
            }
        }
        for (auto& g : gm) {
            if (g.empty()) continue;
            std::vector<NodeRef> chunk;
            for (int m : g) chunk.push_back(ct.members[m]);
            ct.small_chunks.push_back(std::move(chunk));
        }
        (void)lparent;
    }

    void rebuild_partition() const {
        ct_of_.clear();
        cts_.clear();
        free_slots_.clear();
        ct_target_ = 4;
        small_target_ = 2;
        // Replay the live membership through a shadow hierarchy so every
        // cluster decision sees the tree exactly as it stood at that update.
        NetHierarchy shadow(h_->space(), h_->config());
        for (PointId p : h_->insertion_order()) {
            if (!h_->is_member(p)) continue;
            InsertReport rep = shadow.insert_point(p);
            apply_insert(shadow, rep);
        }
        ct_version_ = h_->version();
        epoch_ = h_->epoch();
        index_stale_ = true;
    }

    void ensure_index() const {
        if (epoch_ != h_->epoch() || ct_version_ != h_->version()) rebuild_partition();
        if (!index_stale_ && index_version_ == h_->version()) return;
        build_index();
    }


    void build_index() const {
        // Skeleton tree over live CT roots.
        hat_id_.clear();
        hat_nodes_.clear();
        for (std::size_t ci = 0; ci < cts_.size(); ++ci) {
            if (cts_[ci].members.empty()) continue;
            hat_id_.emplace(static_cast<int>(ci), static_cast<int>(hat_nodes_.size()));
            hat_nodes_.push_back(static_cast<int>(ci));
        }
        int m = static_cast<int>(hat_nodes_.size());
        std::vector<int> parent(m, -1);
        std::vector<std::vector<int>> children(m);
        int root = -1;
        for (int i = 0; i < m; ++i) {
            NodeRef att = bin_parent(cts_[hat_nodes_[i]].root);
            if (!att.valid()) {
                root = i;
                continue;
            }
            parent[i] = hat_id_.at(ct_slot(att));
            children[parent[i]].push_back(i);
        }
        for (auto& ch : children)
            std::sort(ch.begin(), ch.end(), [&](int a, int b) {
                return node_key(cts_[hat_nodes_[a]].root) < node_key(cts_[hat_nodes_[b]].root);
            });
        // sizes and dyadic path classes over the skeleton
        std::vector<int> order;
        order.push_back(root);
        for (std::size_t i = 0; i < order.size(); ++i)
            for (int c : children[order[i]]) order.push_back(c);
        std::vector<int> size(m, 1);
        for (std::size_t i = order.size(); i-- > 1;) size[parent[order[i]]] += size[order[i]];
        auto cls = [&](int v) {
            int k = 0;
            while ((2 << k) <= size[v]) ++k;
            return k;
        };
        hat_path_of_.assign(m, 0);
        hat_heads_.clear();
        for (int v : order) {
            if (v == root || cls(v) != cls(parent[v])) {
                hat_path_of_[v] = static_cast<std::uint32_t>(hat_heads_.size());
                hat_heads_.push_back(v);
            } else {
                hat_path_of_[v] = hat_path_of_[parent[v]];
            }
        }
        int pm = static_cast<int>(hat_heads_.size());
        std::vector<int> cpp(pm, -1);
        std::vector<std::vector<int>> cpc(pm);
        int cproot = -1;
        for (int pi = 0; pi < pm; ++pi) {
            int head = hat_heads_[pi];
            if (parent[head] < 0) {
                cproot = pi;
                continue;
            }
            cpp[pi] = static_cast<int>(hat_path_of_[parent[head]]);
            cpc[cpp[pi]].push_back(pi);
        }
        hat_cp_.build(cpp, cpc, cproot, nullptr);

        // Pseudo-neighbor edges between clusters, from the c-links.
        ct_edges_.clear();
        const double c = h_->config().c();
        for (PointId p = 0; p < h_->space().size(); ++p) {
            if (!h_->is_member(p)) continue;
            for (Level e : h_->explicit_levels(p)) {
                for (const NeighborLink& l : h_->links_at(p, e)) {
                    if (p >= l.other || l.dist > c * pow5(e)) continue;
                    std::uint32_t ca = static_cast<std::uint32_t>(ct_slot(NodeRef{p, e, false}));
                    std::uint32_t cb =
                        static_cast<std::uint32_t>(ct_slot(NodeRef{l.other, e, false}));
                    auto key = detail::pair_key(ca, cb);
                    auto it = ct_edges_.find(key);
                    if (it == ct_edges_.end() || e < it->second.level)
                        ct_edges_[key] =
                            CtEdge{e, NodeRef{p, e, false}, NodeRef{l.other, e, false}};
                }
            }
        }
        index_version_ = h_->version();
        index_stale_ = false;
    }

    /// Outer binary search over the skeleton-path heads on p's root path.
    /// Per probe, an inner binary search over the other side's heads locates
    /// the straddling counterpart path. Returns (path, window lo, window hi).
    std::tuple<std::uint32_t, Level, Level> outer_search(PointId p, PointId other, double c,
                                                         std::uint64_t& outer,
                                                         std::uint64_t& inner) const {
        int leaf_ct = ct_slot(NodeRef{p, h_->lowest_explicit(p), false});
        std::uint32_t leaf_path = hat_path_of_[hat_id_.at(leaf_ct)];
        int depth = hat_cp_.depth(static_cast<int>(leaf_path));
        auto head_level = [&](int t) {
            int pi = hat_cp_.ancestor_at_depth(static_cast<int>(leaf_path), depth - t);
            return cts_[hat_nodes_[hat_heads_[pi]]].root.level;
        };
        PairResolver r(*h_, &counters_);
        auto pred = [&](int t) {
            ++outer;
            counters_.probes++;
            Level j = head_level(t);
            inner_locate(other, j, inner);
            PointId ap = r.rep_at(p, j), ao = r.rep_at(other, j);
            if (ap == ao) return true;
            return h_->space().distance(ap, ao) <= c * pow5(j);
        };
        Level leaf_level = h_->lowest_explicit(p);
        if (pred(0)) {
            return {leaf_path, leaf_level - 1, head_level(0)};
        }
        int lo = 0, hi = depth;
        while (lo + 1 < hi) {
            int mid = lo + (hi - lo) / 2;
            if (pred(mid))
                hi = mid;
            else
                lo = mid;
        }
        std::uint32_t pid = static_cast<std::uint32_t>(
            hat_cp_.ancestor_at_depth(static_cast<int>(leaf_path), depth - hi));
        return {pid, head_level(hi - 1), head_level(hi)};
    }

    /// Inner search: lowest skeleton-path head on p's root path with level
    /// >= j (the straddle position of the counterpart).
    void inner_locate(PointId p, Level j, std::uint64_t& inner) const {
        int leaf_ct = ct_slot(NodeRef{p, h_->lowest_explicit(p), false});
        std::uint32_t leaf_path = hat_path_of_[hat_id_.at(leaf_ct)];
        int depth = hat_cp_.depth(static_cast<int>(leaf_path));
        auto head_level = [&](int t) {
            int pi = hat_cp_.ancestor_at_depth(static_cast<int>(leaf_path), depth - t);
            return cts_[hat_nodes_[hat_heads_[pi]]].root.level;
        };
        int lo = -1, hi = depth;
        if (head_level(0) >= j) return;
        lo = 0;
        while (lo + 1 < hi) {
            int mid = lo + (hi - lo) / 2;
            ++inner;
            counters_.probes++;
            if (head_level(mid) >= j)
                hi = mid;
            else
                lo = mid;
        }
    }

    /// Two-level narrowing to the lowest c-true level in [lo, hi]: binary
    /// over the window to a small-CT-sized span, then a bounded linear scan.
    Level extract_level(PointId x, PointId y, double c, Level lo, Level hi,
                        std::uint64_t& probes) const {
        PairResolver r(*h_, &counters_);
        auto pred = [&](Level j) {
            ++probes;
            counters_.probes++;
            PointId ax = r.rep_at(x, j), ay = r.rep_at(y, j);
            if (ax == ay) return true;
            return h_->space().distance(ax, ay) <= c * pow5(j);
        };
        if (lo > hi) return hi;
        if (pred(lo)) return lo;
        if (!pred(hi)) return hi + 1;
        Level a = lo, b = hi;
        Level span = static_cast<Level>(2 * small_target_);
        while (b - a > span) {
            Level mid = a + (b - a) / 2;
            if (pred(mid))
                b = mid;
            else
                a = mid;
        }
        for (Level j = a + 1; j < b; ++j)
            if (pred(j)) return j;
        return b;
    }

    const NetHierarchy* h_;
    mutable OpCounters counters_;
    mutable std::uint64_t touches_ = 0;

    // incremental CT partition
    mutable std::unordered_map<std::uint64_t, int> ct_of_;
    mutable std::vector<Ct> cts_;
    mutable std::vector<int> free_slots_;
    mutable std::size_t ct_target_ = 4, small_target_ = 2;
    mutable std::uint64_t ct_version_ = ~0ull, epoch_ = ~0ull;

    // lazily derived skeleton indexes
    mutable std::map<int, int> hat_id_;
    mutable std::vector<int> hat_nodes_;
    mutable std::vector<std::uint32_t> hat_path_of_;
    mutable std::vector<int> hat_heads_;
    mutable TreeIndex hat_cp_;
    mutable std::unordered_map<std::uint64_t, CtEdge> ct_edges_;
    mutable bool index_stale_ = true;
    mutable std::uint64_t index_version_ = ~0ull;
};

}  // namespace doracle
