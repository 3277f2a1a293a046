#pragma once

#include <algorithm>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "doracle/common.hpp"
#include "doracle/net_hierarchy.hpp"

namespace doracle {

/// Euler-tour LCA index with binary lifting, built over a parent array with
/// an explicit child order. O(1) LCA, O(log n) depth/level searches.
class TreeIndex {
  public:
    void build(const std::vector<int>& parent, const std::vector<std::vector<int>>& children,
               int root, const std::vector<Level>* levels = nullptr) {
        n_ = static_cast<int>(parent.size());
        parent_ = parent;
        levels_ = levels;
        depth_.assign(n_, 0);
        tin_.assign(n_, 0);
        tout_.assign(n_, 0);
        first_.assign(n_, -1);
        euler_.clear();
        euler_.reserve(2 * n_);

        // Iterative DFS in child order.
        std::vector<std::pair<int, std::size_t>> stack;
        stack.emplace_back(root, 0);
        int timer = 0;
        tin_[root] = timer++;
        first_[root] = static_cast<int>(euler_.size());
        euler_.push_back(root);
        while (!stack.empty()) {
            auto& [v, ci] = stack.back();
            if (ci < children[v].size()) {
                int c = children[v][ci++];
                depth_[c] = depth_[v] + 1;
                tin_[c] = timer++;
                first_[c] = static_cast<int>(euler_.size());
                euler_.push_back(c);
                stack.emplace_back(c, 0);
            } else {
                tout_[v] = timer++;
                stack.pop_back();
                if (!stack.empty()) euler_.push_back(stack.back().first);
            }
        }

        // Sparse table over the euler walk, comparing depths.
        int m = static_cast<int>(euler_.size());
        log2_.assign(m + 1, 0);
        for (int i = 2; i <= m; ++i) log2_[i] = log2_[i / 2] + 1;
        int lvls = log2_[m] + 1;
        sparse_.assign(lvls, std::vector<int>(m));
        for (int i = 0; i < m; ++i) sparse_[0][i] = euler_[i];
        for (int j = 1; j < lvls; ++j)
            for (int i = 0; i + (1 << j) <= m; ++i) {
                int a = sparse_[j - 1][i], b = sparse_[j - 1][i + (1 << (j - 1))];
                sparse_[j][i] = depth_[a] <= depth_[b] ? a : b;
            }

        // Binary lifting.
        lift_ = 1;
        while ((1 << lift_) < std::max(2, n_)) ++lift_;
        up_.assign(lift_ + 1, std::vector<int>(n_));
        for (int v = 0; v < n_; ++v) up_[0][v] = parent_[v] < 0 ? v : parent_[v];
        for (int j = 1; j <= lift_; ++j)
            for (int v = 0; v < n_; ++v) up_[j][v] = up_[j - 1][up_[j - 1][v]];
    }

    int size() const { return n_; }
    int depth(int v) const { return depth_[v]; }
    bool is_ancestor(int a, int d) const { return tin_[a] <= tin_[d] && tout_[d] <= tout_[a]; }

    int lca(int u, int v) const {
        int a = first_[u], b = first_[v];
        if (a > b) std::swap(a, b);
        int j = log2_[b - a + 1];
        int x = sparse_[j][a], y = sparse_[j][b - (1 << j) + 1];
        return depth_[x] <= depth_[y] ? x : y;
    }

    int ancestor_at_depth(int v, int d) const {
        int delta = depth_[v] - d;
        for (int j = 0; delta; ++j, delta >>= 1)
            if (delta & 1) v = up_[j][v];
        return v;
    }

    /// Lowest ancestor whose level is >= target. Requires the level array and
    /// strictly increasing levels toward the root.
    int lowest_ancestor_with_level_ge(int v, Level target) const {
        if ((*levels_)[v] >= target) return v;
        for (int j = lift_; j >= 0; --j) {
            int cand = up_[j][v];
            if ((*levels_)[cand] < target) v = cand;
        }
        return up_[0][v];
    }

  private:
    int n_ = 0, lift_ = 0;
    std::vector<int> parent_, depth_, tin_, tout_, first_, euler_, log2_;
    std::vector<std::vector<int>> sparse_;
    std::vector<std::vector<int>> up_;
    const std::vector<Level>* levels_ = nullptr;
};

struct LcaResult {
    NodeRef w;
    NodeRef u_child;  // child of w on u's side; u itself when degenerate
    NodeRef v_child;
    bool u_degenerate = false;
    bool v_degenerate = false;
};

struct LevelAncestorResult {
    NodeRef node;
    bool exact = false;  // false: target was compressed, lowest explicit ancestor returned
};

/// Navigation view over the compressed hierarchy tree T. Nodes mirror the
/// explicit occurrences; the ordered-sibling encodings T1 (left-leaning) and
/// T2 (right-leaning) provide child reporting for LCA queries. Query indexes
/// are rebuilt lazily after mutations; the k-jump row sets are maintained
/// incrementally with counted O(k) work per tree update.
class NavTree {
  public:
    explicit NavTree(const NetHierarchy& h) : h_(&h) {}

    struct Snapshot {
        std::uint64_t version = ~0ull;
    };

    const NetHierarchy& hierarchy() const { return *h_; }
    OpCounters& counters() const { return counters_; }

    void register_jump(Level k) {
        if (k < 1) k = 1;
        for (const auto& jt : jumps_)
            if (jt.k == k) return;
        jumps_.push_back(JumpSet{k, {}, 0, false, {}, {}, {}, {}, {}, {}});
        jump_dirty_ = true;
    }

    std::vector<Level> registered_jumps() const {
        std::vector<Level> ks;
        for (const auto& j : jumps_) ks.push_back(j.k);
        return ks;
    }

    /// Incremental maintenance from one hierarchy insertion. Touches O(1)
    /// jump rows per new tree node; the LCA indexes are marked stale and
    /// rebuilt on the next query.
    void notify(const InsertReport& rep) {
        sync_epoch();
        if (rows_version_ + 1 != h_->version() || jump_dirty_) {
            // Out-of-band mutations happened; fall back to full row rebuild.
            rebuild_rows();
        } else {
            for (auto& js : jumps_) {
                for (Level e : h_->explicit_levels(rep.point)) {
                    refresh_row(js, rep.point, e);
                    counters_.nodes_touched++;
                }
                for (const NodeRef& s : rep.split_nodes) {
                    refresh_row(js, s.point, s.level);
                    counters_.nodes_touched++;
                }
                if (rep.attach_parent.valid()) {
                    refresh_row(js, rep.attach_parent.point, rep.attach_parent.level);
                    counters_.nodes_touched++;
                }
            }
            rows_version_ = h_->version();
        }
        index_stale_ = true;
    }

    /// Tombstone deletions leave the tree untouched.
    void notify_delete() {
        sync_epoch();
        if (rows_version_ != ~0ull && rows_version_ + 1 == h_->version()) {
            rows_version_ = h_->version();
            index_version_ = h_->version();
        }
    }

    Snapshot snapshot() const {
        ensure_index();
        return Snapshot{h_->version()};
    }

    bool node_exists(const NodeRef& n) const {
        ensure_index();
        return id_.count(node_key(n)) != 0;
    }

    std::size_t node_count() const {
        ensure_index();
        return nodes_.size();
    }

    LcaResult lca_with_children(const NodeRef& u, const NodeRef& v) const {
        ensure_index();
        counters_.lca_queries++;
        int iu = id_of(u), iv = id_of(v);
        LcaResult r;
        int w = t_.lca(iu, iv);
        r.w = nodes_[w];
        if (w == iu || w == iv) {
            if (w == iu) {
                r.u_degenerate = true;
                r.u_child = nodes_[iu];
                r.v_child = iv == w ? nodes_[iv] : nodes_[t_.ancestor_at_depth(iv, t_.depth(w) + 1)];
                r.v_degenerate = iv == w;
            } else {
                r.v_degenerate = true;
                r.v_child = nodes_[iv];
                r.u_child = nodes_[t_.ancestor_at_depth(iu, t_.depth(w) + 1)];
            }
            return r;
        }
        // Sibling-order encodings: the T1 LCA is the earlier-ordered child of
        // w ancestral to one argument, the T2 LCA the later-ordered one.
        int early = t1_.lca(iu, iv);
        int late = t2_.lca(iu, iv);
        if (t_.is_ancestor(early, iu)) {
            r.u_child = nodes_[early];
            r.v_child = nodes_[late];
        } else {
            r.u_child = nodes_[late];
            r.v_child = nodes_[early];
        }
        return r;
    }

    /// Static-only level ancestor; the snapshot token pins the version.
    LevelAncestorResult level_ancestor(const Snapshot& snap, const NodeRef& u,
                                       Level target) const {
        if (snap.version != h_->version())
            throw epoch_error("level_ancestor: snapshot invalidated by mutation");
        counters_.level_ancestor_queries++;
        int iu = id_of(u);
        if (target < nodes_[iu].level)
            throw lookup_error("level_ancestor: target below node level");
        int v = t_.lowest_ancestor_with_level_ge(iu, target);
        if (levels_[v] < target) throw lookup_error("level_ancestor: target above root");
        return LevelAncestorResult{nodes_[v], levels_[v] == target};
    }

    /// Jump query: with m the largest multiple of k strictly below w's level,
    /// returns u's ancestor at level m, or its lowest explicit ancestor when
    /// that occurrence is compressed.
    NodeRef k_jump(const NodeRef& u, const NodeRef& w, Level k) const {
        ensure_index();
        counters_.jump_queries++;
        const JumpSet* js = find_jump(k);
        if (!js) throw config_error("k_jump: no jump tree registered for k");
        int iu = id_of(u), iw = id_of(w);
        if (!t_.is_ancestor(iw, iu)) throw lookup_error("k_jump: w is not an ancestor of u");
        Level m = multiple_below(w.level, k);
        if (m <= u.level) return u;

        int ru = jump_anchor(*js, u);
        int rw = jump_anchor(*js, w);
        if (ru < 0 || rw < 0 || ru == rw || js->rows[ru].mlevel >= js->rows[rw].mlevel)
            return definitional_jump(u, w, k);
        // Child of w's row toward u's row inside the jump tree.
        int jw = js->index.lca(ru, rw);
        if (jw != rw) return definitional_jump(u, w, k);
        int child = js->index.ancestor_at_depth(ru, js->index.depth(rw) + 1);
        const JumpRow& row = js->rows[child];
        if (row.mlevel < m) return NodeRef{w.point, w.level, false};
        if (row.proxy) return NodeRef{row.point, row.target, false};
        return NodeRef{row.point, row.mlevel, false};
    }

    /// Walks the definition directly; used for degenerate jump geometry.
    NodeRef definitional_jump(const NodeRef& u, const NodeRef& w, Level k) const {
        Level m = multiple_below(w.level, k);
        if (m <= u.level) return u;
        counters_.scan_steps++;
        NodeRef at = h_->ancestor_at(u.point, m);
        if (!at.implicit_chain) return at;
        NodeRef up = h_->nav_parent(at.point, at.level);
        return up;
    }

    /// Structural content of one jump tree, for scratch-vs-incremental diffs:
    /// (point, mlevel, proxy, target) per row, sorted.
    std::vector<std::tuple<PointId, Level, bool, Level>> jump_rows(Level k) const {
        ensure_index();
        const JumpSet* js = find_jump(k);
        if (!js) throw config_error("jump_rows: k not registered");
        std::vector<std::tuple<PointId, Level, bool, Level>> out;
        for (const JumpRow& r : js->rows)
            out.emplace_back(r.point, r.mlevel, r.proxy, r.target);
        std::sort(out.begin(), out.end());
        return out;
    }

    NodeRef leaf_of(PointId p) const { return NodeRef{p, h_->lowest_explicit(p), false}; }
    NodeRef root_node() const {
        PointId r = h_->root();
        return NodeRef{r, h_->explicit_levels(r).back(), false};
    }

  private:
    struct JumpRow {
        PointId point;
        Level mlevel;   // multiple-of-k level
        bool proxy;     // true: compressed occurrence pointing at its lowest
                        // explicit ancestor
        Level target;   // explicit level this row maps to
        int parent = -1;
    };

    struct JumpSet {
        Level k;
        std::vector<JumpRow> rows;
        std::uint64_t rows_version = ~0ull;
        bool built = false;
        std::unordered_map<std::uint64_t, int> row_id;       // (point, mlevel) -> row
        std::unordered_map<std::uint64_t, int> rows_by_pt;   // unused placeholder
        std::vector<std::vector<int>> point_rows;            // per point, sorted by mlevel
        std::vector<int> parent;
        std::vector<std::vector<int>> children;
        TreeIndex index;
    };

    void sync_epoch() const {
        if (h_->epoch() != built_epoch_) {
            built_epoch_ = h_->epoch();
            rows_version_ = ~0ull;
            index_version_ = ~0ull;
            index_stale_ = true;
            jump_dirty_ = true;
        }
    }

    void ensure_index() const {
        sync_epoch();
        if (rows_version_ != h_->version()) rebuild_rows();
        if (index_stale_ || index_version_ != h_->version()) build_index();
    }

    void rebuild_rows() const {
        for (auto& js : jumps_) {
            js.rows.clear();
            js.row_id.clear();
            for (PointId p = 0; p < h_->space().size(); ++p) {
                if (!h_->is_member(p)) continue;
                for (Level e : h_->explicit_levels(p)) refresh_row(js, p, e);
            }
        }
        rows_version_ = h_->version();
        jump_dirty_ = false;
        index_stale_ = true;
    }

    /// Installs/updates the row induced by explicit occurrence (p, e): the
    /// unique multiple of k in (e-k, e] maps to e unless a lower explicit
    /// level already claims it.
    void refresh_row(JumpSet& js, PointId p, Level e) const {
        Level m = floor_multiple(e, js.k);
        std::uint64_t key = node_key(p, m);
        auto it = js.row_id.find(key);
        if (it != js.row_id.end()) {
            JumpRow& r = js.rows[it->second];
            if (e < r.target) {
                r.target = e;
                r.proxy = (m != e);
            }
            return;
        }
        JumpRow r;
        r.point = p;
        r.mlevel = m;
        r.target = e;
        r.proxy = (m != e);
        js.row_id.emplace(key, static_cast<int>(js.rows.size()));
        js.rows.push_back(r);
        js.built = false;
    }

    void build_index() const {
        // Main tree T over explicit occurrences.
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
        levels_.resize(n);
        std::vector<int> parent(n, -1);
        std::vector<std::vector<int>> children(n);
        int root = -1;
        for (int v = 0; v < n; ++v) {
            levels_[v] = nodes_[v].level;
            NodeRef par = h_->nav_parent(nodes_[v].point, nodes_[v].level);
            if (!par.valid()) {
                root = v;
                continue;
            }
            parent[v] = id_.at(node_key(par));
        }
        for (int v = 0; v < n; ++v) {
            auto ch = h_->nav_children(nodes_[v].point, nodes_[v].level);
            for (const NodeRef& c : ch) children[v].push_back(id_.at(node_key(c)));
        }
        t_.build(parent, children, root, &levels_);

        // T1: left-leaning chain of ordered children. T2: right-leaning.
        std::vector<int> p1(n, -1), p2(n, -1);
        std::vector<std::vector<int>> c1(n), c2(n);
        for (int v = 0; v < n; ++v) {
            const auto& ch = children[v];
            for (std::size_t i = 0; i < ch.size(); ++i) {
                p1[ch[i]] = i == 0 ? v : ch[i - 1];
                p2[ch[i]] = i + 1 == ch.size() ? v : ch[i + 1];
            }
        }
        for (int v = 0; v < n; ++v) {
            if (p1[v] >= 0) c1[p1[v]].push_back(v);
            if (p2[v] >= 0) c2[p2[v]].push_back(v);
        }
        t1_.build(p1, c1, root, nullptr);
        t2_.build(p2, c2, root, nullptr);

        // Jump trees: wire row parents by ancestor walks, then index.
        for (auto& js : jumps_) build_jump_index(js);

        index_version_ = h_->version();
        index_stale_ = false;
    }

    void build_jump_index(JumpSet& js) const {
        // The topmost multiple level generally holds several nodes, so the
        // jump structure is a forest; a virtual super-root (slot n) closes it
        // for the Euler index. Queries never land on the virtual root: an LCA
        // that reaches it signals non-ancestral anchors and falls back.
        int n = static_cast<int>(js.rows.size());
        js.point_rows.assign(h_->space().size(), {});
        for (int i = 0; i < n; ++i) js.point_rows[js.rows[i].point].push_back(i);
        for (auto& pr : js.point_rows)
            std::sort(pr.begin(), pr.end(), [&](int a, int b) {
                return js.rows[a].mlevel < js.rows[b].mlevel;
            });
        js.parent.assign(n + 1, -1);
        js.children.assign(n + 1, {});
        for (int i = 0; i < n; ++i) {
            int par = jump_parent_walk(js, js.rows[i].point, js.rows[i].mlevel);
            js.parent[i] = par < 0 ? n : par;
            js.children[js.parent[i]].push_back(i);
        }
        for (auto& ch : js.children)
            std::sort(ch.begin(), ch.end(), [&](int a, int b) {
                if (js.rows[a].mlevel != js.rows[b].mlevel)
                    return js.rows[a].mlevel < js.rows[b].mlevel;
                return js.rows[a].point < js.rows[b].point;
            });
        js.index.build(js.parent, js.children, n, nullptr);
        js.built = true;
    }

    /// Next jump row strictly above (p, above_level) on the ancestor path.
    int jump_parent_walk(const JumpSet& js, PointId p, Level above_level) const {
        PointId cur = p;
        Level lvl = above_level;
        while (true) {
            const auto& pr = js.point_rows[cur];
            auto it = std::upper_bound(pr.begin(), pr.end(), lvl, [&](Level l, int idx) {
                return l < js.rows[idx].mlevel;
            });
            if (it != pr.end()) return *it;
            PointId up = h_->parent_point(cur);
            if (up == kInvalidPoint) return -1;
            lvl = h_->top_level(cur);  // continue strictly above cur's span
            cur = up;
        }
    }

    /// Lowest jump row at a multiple level >= n.level on n's ancestor path.
    int jump_anchor(const JumpSet& js, const NodeRef& n) const {
        PointId cur = n.point;
        Level from = n.level - 1;
        while (true) {
            const auto& pr = js.point_rows[cur];
            auto it = std::upper_bound(pr.begin(), pr.end(), from, [&](Level l, int idx) {
                return l < js.rows[idx].mlevel;
            });
            if (it != pr.end()) return *it;
            PointId up = h_->parent_point(cur);
            if (up == kInvalidPoint) return -1;
            from = h_->top_level(cur);
            cur = up;
        }
    }

    const JumpSet* find_jump(Level k) const {
        for (const auto& j : jumps_)
            if (j.k == k) return &j;
        return nullptr;
    }

    int id_of(const NodeRef& n) const {
        auto it = id_.find(node_key(n));
        if (it == id_.end())
            throw epoch_error("node is not an explicit occurrence of the current tree");
        return it->second;
    }

    const NetHierarchy* h_;
    mutable OpCounters counters_;
    mutable std::vector<NodeRef> nodes_;
    mutable std::unordered_map<std::uint64_t, int> id_;
    mutable std::vector<Level> levels_;
    mutable TreeIndex t_, t1_, t2_;
    mutable std::vector<JumpSet> jumps_;
    mutable std::uint64_t rows_version_ = ~0ull, index_version_ = ~0ull, built_epoch_ = ~0ull;
    mutable bool index_stale_ = true, jump_dirty_ = true;
};

}  // namespace doracle
