#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "doracle/centroid_oracle.hpp"
#include "doracle/common.hpp"
#include "doracle/embedding.hpp"
#include "doracle/forest_oracle.hpp"
#include "doracle/nav_tree.hpp"
#include "doracle/net_hierarchy.hpp"
#include "doracle/packed_vector.hpp"
#include "doracle/pair_resolve.hpp"

namespace doracle {

enum class OracleMode {
    static_O1,
    static_binary,        // centroid-path binary search
    static_loglogN,       // coarse estimate + level binary search
    static_loglogLambda,  // coarse + refined estimate + short binary search
    dynamic_O1,
    dynamic_variant9,     // refined window searched through jump trees
    backup_forest,
    backup_centroid,
};

inline const char* mode_name(OracleMode m) {
    switch (m) {
        case OracleMode::static_O1: return "static_O1";
        case OracleMode::static_binary: return "static_binary";
        case OracleMode::static_loglogN: return "static_loglogN";
        case OracleMode::static_loglogLambda: return "static_loglogLambda";
        case OracleMode::dynamic_O1: return "dynamic_O1";
        case OracleMode::dynamic_variant9: return "dynamic_variant9";
        case OracleMode::backup_forest: return "backup_forest";
        case OracleMode::backup_centroid: return "backup_centroid";
    }
    return "?";
}

inline OracleMode mode_from_name(const std::string& s) {
    for (OracleMode m :
         {OracleMode::static_O1, OracleMode::static_binary, OracleMode::static_loglogN,
          OracleMode::static_loglogLambda, OracleMode::dynamic_O1, OracleMode::dynamic_variant9,
          OracleMode::backup_forest, OracleMode::backup_centroid})
        if (s == mode_name(m)) return m;
    throw config_error("unknown oracle mode '" + s + "'");
}

struct OracleConfig {
    OracleMode mode = OracleMode::static_O1;
    double epsilon = 0.1;
    double lambda = 2.0;
    int dimension = 64;  // snowflake target dimension D
    std::uint64_t seed = 42;
    double rebuild_fraction = 1.0 / 3.0;
    int pair_table_slack = 3;        // K in the pair-table radius 38/5 * lambda^4 * 5^K
    std::size_t pair_table_cap = 32; // nearest entries kept per node
    Level neighborhood_cap = 14;     // depth cap on neighborhood windows

    bool is_dynamic() const {
        return mode == OracleMode::dynamic_O1 || mode == OracleMode::dynamic_variant9 ||
               mode == OracleMode::backup_forest || mode == OracleMode::backup_centroid;
    }

    HierarchyConfig hierarchy() const {
        HierarchyConfig c;
        c.epsilon = epsilon;
        c.lambda = lambda;
        c.rebuild_fraction = rebuild_fraction;
        c.seed = seed;
        return c;
    }
};

struct LevelWindow {
    Level lo = 0, hi = 0;
    Level width() const { return hi - lo; }
    LevelWindow clamp(Level a, Level b) const {
        return LevelWindow{std::max(lo, a), std::min(hi, b)};
    }
    LevelWindow meet(const LevelWindow& o) const {
        return LevelWindow{std::max(lo, o.lo), std::min(hi, o.hi)};
    }
};

struct QueryResult {
    double estimate = 0.0;
    ResolvedPair pair;
    QueryAudit audit;
};

/// The composite (1+eps)-oracle: a coarse tree-embedding estimate narrows the
/// candidate levels, a packed snowflake distance refines them, and a pair
/// table plus a jump-aided scan pins the lowest ancestral neighbors. Failures
/// at any step fall through to the backup oracles in expected-cost order.
class CompositeOracle {
  public:
    CompositeOracle(const CompositeOracle&) = delete;
    CompositeOracle& operator=(const CompositeOracle&) = delete;
    CompositeOracle(CompositeOracle&&) = delete;
    CompositeOracle& operator=(CompositeOracle&&) = delete;

    CompositeOracle(const MetricSpace& space, OracleConfig cfg)
        : space_(&space),
          cfg_(cfg),
          h_(space, cfg.hierarchy()),
          nav_(h_),
          forest_(h_, nav_),
          cstat_(h_),
          cdyn_(h_),
          tree_emb_(h_),
          snow_(h_, cfg.dimension) {
        register_jumps();
    }

    const NetHierarchy& hierarchy() const { return h_; }
    NavTree& nav() { return nav_; }
    const OracleConfig& config() const { return cfg_; }
    const DominantForest& forest() const { return forest_; }
    const CentroidStatic& centroid_static() const { return cstat_; }
    const CentroidDynamic& centroid_dynamic() const { return cdyn_; }
    const TreeEmbedding& tree_embedding() const { return tree_emb_; }
    const SnowflakeEmbedding& snowflake() const { return snow_; }
    OpCounters& counters() const { return counters_; }

    /// Sum of the query primitives across every component, for op-count
    /// deltas around a query regardless of the path it took.
    std::uint64_t primitives_snapshot() const {
        return counters_.query_primitives() + nav_.counters().query_primitives() +
               forest_.counters().query_primitives() + cstat_.counters().query_primitives() +
               cdyn_.counters().query_primitives();
    }

    std::size_t live_count() const { return h_.live_count(); }

    void insert(PointId p) {
        auto rep = h_.insert_point(p);
        nav_.notify(rep);
        forest_.notify(rep);
        cdyn_.notify(rep);
        structures_stale_ = true;
    }

    void erase(PointId p) {
        h_.delete_point(p);
        nav_.notify_delete();
        forest_.notify_delete();
        cdyn_.notify_delete();
        structures_stale_ = true;
    }

    /// Builds every index for the configured mode over the current contents.
    void finalize_build() { ensure_indexes(); }

    QueryResult query(PointId x, PointId y) const { return query_in_mode(cfg_.mode, x, y); }

    QueryResult query_in_mode(OracleMode mode, PointId x, PointId y) const {
        require_live(x);
        require_live(y);
        QueryResult r;
        r.audit.x = x;
        r.audit.y = y;
        r.audit.mode = mode_name(mode);
        if (x == y) {
            r.audit.path_taken = "identity";
            return r;
        }
        ensure_indexes();
        switch (mode) {
            case OracleMode::backup_forest: {
                auto a = forest_.query(x, y);
                r.estimate = a.estimate;
                r.pair = a.pair;
                r.audit.lca_level_min = a.lca_level_min;
                r.audit.path_taken = "backup_forest";
                break;
            }
            case OracleMode::backup_centroid: {
                auto a = cdyn_.query(x, y);
                r.estimate = a.estimate;
                r.pair = a.pair;
                r.audit.outer_probes = a.outer_probes;
                r.audit.inner_probes = a.inner_probes;
                r.audit.path_taken = "backup_centroid";
                break;
            }
            case OracleMode::static_binary: {
                auto a = cstat_.query(x, y);
                r.estimate = a.estimate;
                r.pair = a.pair;
                r.audit.outer_probes = a.outer_probes;
                r.audit.inner_probes = a.inner_probes;
                r.audit.path_taken = "centroid_static";
                break;
            }
            case OracleMode::static_loglogN: {
                LevelWindow w1c = step1_window(x, y, 6.0).second;
                LevelWindow wc = step1_window(x, y, cfg_c()).second;
                (void)w1c;
                resolve_by_binary(r, x, y, wc, false);
                r.audit.path_taken = "step1+binary";
                break;
            }
            case OracleMode::static_loglogLambda:
            case OracleMode::dynamic_variant9: {
                auto [est1, w16] = step1_window(x, y, 6.0);
                LevelWindow w1c = step1_window(x, y, cfg_c()).second;
                (void)est1;
                LevelWindow w2c = w1c;
                auto s2 = step2_refine(x, y, w16);
                if (s2.ok) w2c = w1c.meet(window_from_estimate(s2.est, cfg_c()));
                resolve_by_binary(r, x, y, w2c, mode == OracleMode::dynamic_variant9);
                r.audit.path_taken = s2.ok ? "step1+step2+binary" : "step1+binary";
                break;
            }
            case OracleMode::static_O1:
            case OracleMode::dynamic_O1: {
                run_fast_path(r, x, y);
                break;
            }
        }
        finish_audit(r, x, y);
        return r;
    }

  private:
    double cfg_c() const { return cfg_.hierarchy().c(); }

    void require_live(PointId p) const {
        if (!h_.contains(p)) throw lookup_error("query endpoint is not live");
    }

    void finish_audit(QueryResult& r, PointId x, PointId y) const {
        double exact = space_->exact_query(x, y);
        r.audit.exact = exact;
        r.audit.estimate = r.estimate;
        r.audit.ratio = exact > 0 ? r.estimate / exact : 1.0;
        r.audit.i = exact > 0 ? distance_level(exact) : 0;
        r.audit.pair_level = r.pair.level;
        r.audit.merged = r.pair.merged;
    }

    void register_jumps() {
        nav_.register_jump(k_c());
        nav_.register_jump(stride3());
        nav_.register_jump(stride2_static());
        nav_.register_jump(stride2_dynamic());
        for (Level k = 1; k <= 16; k <<= 1) nav_.register_jump(k);
    }

    Level k_c() const {
        return std::max<Level>(1, static_cast<Level>(std::ceil(
                                      std::log(cfg_.hierarchy().c()) / std::log(5.0))));
    }
    Level stride3() const {
        return std::max<Level>(
            1, static_cast<Level>(std::ceil(std::log(std::max(1.01, cfg_.lambda)) /
                                            std::log(5.0))));
    }
    Level stride2_static() const {
        double n = std::max<double>(4.0, static_cast<double>(h_.live_count()));
        return std::max<Level>(1, static_cast<Level>(ceil_log2(std::log2(n))));
    }
    Level stride2_dynamic() const {
        return std::max<Level>(1, static_cast<Level>(ceil_log2(static_cast<double>(p_cost()))));
    }

    /// Backup query-cost parameter: min of the forest-size proxy and the
    /// centroid's loglog-squared cost.
    int p_cost() const {
        double forest_proxy = std::pow(4.0, std::ceil(std::max(1.0, cfg_.lambda))) + 8.0;
        double n = std::max<double>(4.0, static_cast<double>(h_.live_count()));
        double ll = std::ceil(std::log2(std::max(2.0, std::log2(n))));
        return static_cast<int>(std::max(2.0, std::min(forest_proxy, ll * ll)));
    }

    // -- step 1: coarse estimate from the tree embedding --------------------

    /// Assumed distortion of the tree embedding at the configured tail
    /// parameter; failures beyond it are absorbed by the fallback path.
    double step1_distortion() const {
        double lam = RadiusSampler::effective_lambda(cfg_.lambda);
        double base = std::max(1.25, 5.0 * lam / 4.0);
        double target = cfg_.is_dynamic() ? static_cast<double>(p_cost())
                                          : std::log2(std::max(
                                                4.0, static_cast<double>(h_.live_count())));
        int tail = std::max(1, static_cast<int>(std::ceil(std::log(target) / std::log(base))));
        double l = tree_emb_.restricted().branching();
        return (32.0 / 5.0) * std::pow(4.0 * l, tail + 1);
    }

    LevelWindow window_from_range(double d_lo, double d_hi, double b) const {
        Level i_lo = distance_level(std::max(d_lo, 1e-300));
        Level i_hi = distance_level(std::max(d_hi, 1e-300));
        Level below = 1 + static_cast<Level>(std::ceil(std::log(b + 1.6) / std::log(5.0)));
        Level above = static_cast<Level>(std::floor(std::log(std::max(1.0001, b - 1.6)) /
                                                    std::log(5.0)));
        return LevelWindow{static_cast<Level>(i_lo - below), static_cast<Level>(i_hi - above)}
            .clamp(h_.i_min() - 4, h_.i_max() + 1);
    }

    LevelWindow window_from_estimate(double d_est, double b) const {
        return window_from_range(d_est / 5.0, d_est * 5.0, b);
    }

    /// Coarse estimate and the candidate window for the lowest ancestral
    /// b-neighbors it implies.
    std::pair<double, LevelWindow> step1_window(PointId x, PointId y, double b) const {
        counters_.lca_queries++;
        double est = tree_emb_.distance(x, y);  // never contracts
        double delta = step1_distortion();
        return {est, window_from_range(est / delta, est, b)};
    }

    // -- step 2: packed snowflake refinement --------------------------------

    struct Step2Result {
        bool ok = false;
        double est = 0.0;  // distance estimate after unsquashing
    };

    Step2Result step2_refine(PointId x, PointId y, const LevelWindow& w6) const {
        Step2Result out;
        if (skip_step2()) return out;
        // Anchor: the ancestor of x at the lowest stride-multiple level at or
        // above the window top, located through the jump structure.
        Level s = cfg_.is_dynamic() ? stride2_dynamic() : stride2_static();
        Level anchor_level = std::min<Level>(ceil_multiple(w6.hi, s), h_.i_max());
        NodeRef ax = snap_explicit(x, anchor_level);
        NodeRef bx = snap_explicit(x, std::max(w6.lo, h_.i_min()));
        NodeRef by = snap_explicit(y, std::max(w6.lo, h_.i_min()));
        counters_.jump_queries += 2;
        auto it = neighborhoods_.find(node_key(ax));
        if (it == neighborhoods_.end()) return out;
        const Neighborhood& nb = neighborhoods_.at(node_key(ax));
        counters_.table_lookups++;
        auto ix = nb.index.find(node_key(bx));
        auto iy = nb.index.find(node_key(by));
        if (ix == nb.index.end() || iy == nb.index.end()) return out;  // not co-resident
        std::uint64_t sq = nb.packed[ix->second].squared_distance(nb.packed[iy->second]);
        double emb = std::sqrt(static_cast<double>(sq)) * nb.quant_scale /
                     std::sqrt(static_cast<double>(cfg_.dimension));
        double snow = emb / snow_.lipschitz_bound();  // non-expansive scale
        out.est = snow * snow * calib_;
        out.ok = out.est > 0.0;
        return out;
    }

    bool skip_step2() const {
        double lam = cfg_.lambda;
        if (cfg_.is_dynamic()) return lam >= static_cast<double>(p_cost());
        double n = std::max<double>(4.0, static_cast<double>(h_.live_count()));
        return lam >= std::cbrt(std::log2(n));
    }

    /// Lowest explicit occurrence of p's ancestor at or above the level.
    NodeRef snap_explicit(PointId p, Level lvl) const {
        lvl = std::clamp(lvl, h_.lowest_explicit(p), h_.i_max());
        NodeRef n = h_.ancestor_at(p, lvl);
        if (n.implicit_chain) n = h_.nav_parent(n.point, n.level);
        counters_.scan_steps++;
        return n;
    }

    // -- step 3: pair table and the final descent ---------------------------

    struct TableEntry {
        std::uint64_t other;  // node key of v
        PointId a, b;         // precomputed lowest ancestral 6-pair
        Level level;
        double dist;
    };

    bool step3_locate(QueryResult& r, PointId x, PointId y, const LevelWindow& w6) const {
        Level lookup = std::clamp(w6.lo, h_.i_min() - 2, h_.i_max());
        NodeRef u = snap_explicit(x, lookup);
        NodeRef v = snap_explicit(y, lookup);
        if (u.level < v.level) std::swap(u, v);
        counters_.table_lookups++;
        auto it = pair_table_.find(node_key(u));
        if (it == pair_table_.end()) return false;
        const TableEntry* hit = nullptr;
        std::uint64_t want = node_key(v);
        for (const TableEntry& e : it->second)
            if (e.other == want) {
                hit = &e;
                break;
            }
        if (!hit) return false;
        // Validity: the stored pair must be the ancestors of the query points
        // with non-neighboring children (minimality re-check).
        PairResolver res(h_, &counters_);
        if (res.rep_at(x, hit->level) != hit->a || res.rep_at(y, hit->level) != hit->b)
            return false;
        PointId cx = res.rep_at(x, hit->level - 1), cy = res.rep_at(y, hit->level - 1);
        counters_.link_checks++;
        if (cx != cy && space_->distance(cx, cy) <= 6.0 * pow5(hit->level - 1)) return false;
        if (cx == cy) return false;

        // Jump-aided descent from the 6-pair toward the c-pair.
        NodeRef w6node{hit->a, hit->level, false};
        Level hint = hit->level;
        double c = cfg_c();
        if (c > 6.0) hint -= static_cast<Level>(std::ceil(std::log(c / 6.0) / std::log(5.0))) + 1;
        if (h_.is_explicit(hit->a, hit->level)) {
            NodeRef jx = nav_.k_jump(nav_.leaf_of(x), w6node, k_c());
            hint = std::min(hint, static_cast<Level>(jx.level - 1));
        }
        PairResolver resolver(h_, &counters_);
        r.pair = resolver.resolve(x, y, c, hint);
        r.estimate = r.pair.dist;
        return true;
    }

    // -- shared binary-search resolution over a level window ----------------

    void resolve_by_binary(QueryResult& r, PointId x, PointId y, LevelWindow w,
                           bool via_jump_trees) const {
        double c = cfg_c();
        PairResolver res(h_, &counters_);
        auto pred = [&](Level j) {
            r.audit.outer_probes++;
            counters_.probes++;
            if (via_jump_trees) locate_by_jumps(x, j);
            PointId ax = res.rep_at(x, j), ay = res.rep_at(y, j);
            if (ax == ay) return true;
            counters_.link_checks++;
            return space_->distance(ax, ay) <= c * pow5(j);
        };
        Level lo = w.lo, hi = std::max<Level>(w.hi, w.lo);
        Level found;
        if (pred(lo))
            found = lo;
        else if (!pred(hi))
            found = hi + 1;
        else {
            Level a = lo, b = hi;
            while (a + 1 < b) {
                Level mid = a + (b - a) / 2;
                if (pred(mid))
                    b = mid;
                else
                    a = mid;
            }
            found = b;
        }
        r.pair = res.resolve(x, y, c, found);
        r.estimate = r.pair.dist;
    }

    /// Variant 9 locates each probed ancestor through power-of-two jump
    /// trees, descending from an explicit anchor above the window.
    void locate_by_jumps(PointId x, Level target) const {
        NodeRef cur = snap_explicit(x, std::min<Level>(target + 17, h_.i_max()));
        for (Level k = 16; k >= 1; k >>= 1) {
            if (cur.level <= target) break;
            Level m = multiple_below(cur.level, k);
            if (m < target || m >= cur.level) continue;
            counters_.jump_queries++;
            NodeRef leaf = nav_.leaf_of(x);
            if (leaf.level >= cur.level) break;
            cur = nav_.k_jump(leaf, cur, k);
        }
    }

    // -- fast path -----------------------------------------------------------

    void run_fast_path(QueryResult& r, PointId x, PointId y) const {
        auto [est1, w16] = step1_window(x, y, 6.0);
        LevelWindow w1c = step1_window(x, y, cfg_c()).second;
        (void)est1;
        LevelWindow w6 = w16;
        bool refined = false;
        auto s2 = step2_refine(x, y, w16);
        if (s2.ok) {
            w6 = w16.meet(window_from_estimate(s2.est, 6.0));
            refined = true;
        }
        if (step3_locate(r, x, y, w6)) {
            r.audit.path_taken = refined ? "step1+step2+step3" : "step1+step3";
            return;
        }
        if (refined) {
            // step-2 window may have missed; retry the lookup on the coarse one
            if (step3_locate(r, x, y, w16)) {
                r.audit.path_taken = "step1+step3(coarse)";
                return;
            }
        }
        if (!refined) {
            // co-residency failed: binary-search mode inside the composite
            resolve_by_binary(r, x, y, w1c, cfg_.is_dynamic());
            r.audit.path_taken = "binary_window";
            r.audit.fallback_used = false;
            return;
        }
        // Table miss: fall through to the backups in expected-cost order.
        r.audit.fallback_used = true;
        double forest_proxy = std::pow(4.0, std::ceil(std::max(1.0, cfg_.lambda))) + 8.0;
        double n = std::max<double>(4.0, static_cast<double>(h_.live_count()));
        double ll = std::ceil(std::log2(std::max(2.0, std::log2(n))));
        bool forest_first = forest_proxy <= ll * ll;
        auto run_forest = [&] {
            auto a = forest_.query(x, y);
            r.estimate = a.estimate;
            r.pair = a.pair;
            r.audit.lca_level_min = a.lca_level_min;
            r.audit.path_taken = "fallback_forest";
        };
        auto run_centroid = [&] {
            auto a = cdyn_.query(x, y);
            r.estimate = a.estimate;
            r.pair = a.pair;
            r.audit.outer_probes += a.outer_probes;
            r.audit.inner_probes += a.inner_probes;
            r.audit.path_taken = "fallback_centroid";
        };
        if (forest_first)
            run_forest();
        else
            run_centroid();
    }

    // -- index construction --------------------------------------------------

    struct Neighborhood {
        NodeRef anchor;
        std::vector<NodeRef> members;
        std::unordered_map<std::uint64_t, std::size_t> index;
        std::vector<PackedVector> packed;
        double quant_scale = 1.0;  // distance units per quantization step
        std::vector<double> box_lo;
    };

    void ensure_indexes() const {
        if (indexes_version_ == h_.version() && indexes_epoch_ == h_.epoch() &&
            snow_marks_ == snow_.restricted().epoch_marker())
            return;
        build_neighborhoods();
        build_pair_table();
        calibrate_step2();
        indexes_version_ = h_.version();
        indexes_epoch_ = h_.epoch();
        snow_marks_ = snow_.restricted().epoch_marker();
        structures_stale_ = false;
    }

    Level window_depth() const {
        Level s = cfg_.is_dynamic() ? stride2_dynamic() : stride2_static();
        double delta = step1_distortion();
        Level r = static_cast<Level>(std::ceil(std::log(delta) / std::log(5.0)));
        return std::min<Level>(cfg_.neighborhood_cap, r + 2 * s);
    }

    int quant_bits() const {
        double n = std::max<double>(4.0, static_cast<double>(h_.live_count()));
        double lam = std::max(1.01, cfg_.lambda);
        int b = cfg_.is_dynamic()
                    ? 2 + ceil_log2(static_cast<double>(p_cost()))
                    : 2 + ceil_log2(std::log2(lam) + std::log2(std::max(2.0, std::log2(n))) + 2);
        // capped so the packed layout stays within the block budget
        return std::clamp(b, 4, 6);
    }

    void build_neighborhoods() const {
        neighborhoods_.clear();
        Level s = cfg_.is_dynamic() ? stride2_dynamic() : stride2_static();
        Level depth = window_depth();
        int bits = quant_bits();
        std::vector<NodeRef> anchors;
        for (PointId p = 0; p < space_->size(); ++p) {
            if (!h_.is_member(p)) continue;
            for (Level e : h_.explicit_levels(p))
                if (floor_multiple(e, s) == e) anchors.push_back(NodeRef{p, e, false});
        }
        // A memory budget on member slots; deeper windows are trimmed first.
        std::size_t budget = std::max<std::size_t>(20000, 8 * h_.live_count());
        while (depth > 2) {
            std::size_t projected = 0;
            for (const NodeRef& a : anchors) {
                projected += count_members(a, a.level - depth);
                if (projected > budget) break;
            }
            if (projected <= budget) break;
            --depth;
        }
        for (const NodeRef& a : anchors) {
            Neighborhood nb;
            nb.anchor = a;
            collect_members(a, a.level - depth, nb.members);
            if (!a.implicit_chain)
                for (const NeighborLink& l : h_.links_at(a.point, a.level)) {
                    if (l.dist > 6.0 * pow5(a.level)) continue;
                    if (h_.is_explicit(l.other, a.level))
                        collect_members(NodeRef{l.other, a.level, false}, a.level - depth,
                                        nb.members);
                }
            std::sort(nb.members.begin(), nb.members.end(), [](const NodeRef& m, const NodeRef& n) {
                return node_key(m) < node_key(n);
            });
            nb.members.erase(std::unique(nb.members.begin(), nb.members.end()),
                             nb.members.end());
            if (nb.members.size() < 2) continue;
            quantize_neighborhood(nb, bits);
            neighborhoods_.emplace(node_key(a), std::move(nb));
        }
    }

    void collect_members(const NodeRef& root, Level floor_level,
                         std::vector<NodeRef>& out) const {
        std::vector<NodeRef> stack{root};
        while (!stack.empty()) {
            NodeRef n = stack.back();
            stack.pop_back();
            if (n.level < floor_level) continue;
            out.push_back(n);
            for (const NodeRef& c : h_.nav_children(n.point, n.level)) stack.push_back(c);
        }
    }

    std::size_t count_members(const NodeRef& root, Level floor_level) const {
        std::size_t count = 0;
        std::vector<NodeRef> stack{root};
        while (!stack.empty()) {
            NodeRef n = stack.back();
            stack.pop_back();
            if (n.level < floor_level) continue;
            ++count;
            for (const NodeRef& c : h_.nav_children(n.point, n.level)) stack.push_back(c);
        }
        return count;
    }

    void quantize_neighborhood(Neighborhood& nb, int bits) const {
        int D = cfg_.dimension;
        std::vector<std::vector<double>> coords;
        coords.reserve(nb.members.size());
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        for (const NodeRef& m : nb.members) {
            coords.push_back(snow_coords_cached(m.point));
            for (double v : coords.back()) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        }
        double range = std::max(hi - lo, 1e-300);
        double steps = static_cast<double>((1u << bits) - 1);
        nb.quant_scale = range / steps;
        nb.box_lo.assign(1, lo);
        for (std::size_t k = 0; k < nb.members.size(); ++k) {
            std::vector<std::uint32_t> q(static_cast<std::size_t>(D));
            for (int t = 0; t < D; ++t) {
                double v = (coords[k][static_cast<std::size_t>(t)] - lo) / nb.quant_scale;
                q[static_cast<std::size_t>(t)] =
                    static_cast<std::uint32_t>(std::clamp(v, 0.0, steps));
            }
            nb.index.emplace(node_key(nb.members[k]), nb.packed.size());
            nb.packed.push_back(PackedVector::pack(q, bits));
        }
    }

    const std::vector<double>& snow_coords_cached(PointId p) const {
        auto it = snow_cache_.find(p);
        if (it != snow_cache_.end()) return it->second;
        return snow_cache_.emplace(p, snow_.raw_coords(p)).first->second;
    }

    void build_pair_table() const {
        pair_table_.clear();
        snow_cache_.clear();
        double lam = std::max(1.0, cfg_.lambda);
        double factor =
            (38.0 / 5.0) * std::pow(lam, 4.0) * pow5(static_cast<Level>(cfg_.pair_table_slack));
        Level down = stride3() + 1;
        PairResolver res(h_, nullptr);
        for (PointId p = 0; p < space_->size(); ++p) {
            if (!h_.is_member(p)) continue;
            for (Level e : h_.explicit_levels(p)) {
                NodeRef u{p, e, false};
                double radius = factor * pow5(e);
                // ring expansion over same-level links, then short descents
                std::vector<std::pair<double, NodeRef>> cands;
                std::vector<PointId> frontier{p};
                std::unordered_map<PointId, bool> seen{{p, true}};
                std::size_t scan_cap = 6 * cfg_.pair_table_cap;
                for (int hop = 0; hop < 3 && seen.size() < scan_cap; ++hop) {
                    std::vector<PointId> next;
                    for (PointId q : frontier) {
                        if (!h_.is_explicit(q, e)) continue;
                        for (const NeighborLink& l : h_.links_at(q, e)) {
                            if (seen.count(l.other)) continue;
                            seen.emplace(l.other, true);
                            if (space_->distance(p, l.other) <= radius) next.push_back(l.other);
                        }
                    }
                    if (next.empty()) break;
                    frontier = std::move(next);
                }
                for (const auto& [q, _] : seen) {
                    if (q == p) continue;
                    for (Level j = e; j >= e - down; --j) {
                        if (!h_.is_explicit(q, j)) continue;
                        double d = space_->distance(p, q);
                        if (d <= factor * pow5(e)) cands.emplace_back(d, NodeRef{q, j, false});
                    }
                }
                std::sort(cands.begin(), cands.end(), [](const auto& a, const auto& b) {
                    if (a.first != b.first) return a.first < b.first;
                    return node_key(a.second) < node_key(b.second);
                });
                if (cands.size() > cfg_.pair_table_cap) cands.resize(cfg_.pair_table_cap);
                if (cands.empty()) continue;
                auto& list = pair_table_[node_key(u)];
                for (const auto& [d, v] : cands) {
                    (void)d;
                    auto pr = res.resolve(p, v.point, 6.0, e);
                    list.push_back(TableEntry{node_key(v), pr.a, pr.b, pr.level, pr.dist});
                }
            }
        }
    }

    void calibrate_step2() const {
        calib_ = 1.0;
        std::size_t n = h_.live_count();
        if (n < 2) return;
        RngStream rng(hash_combine(cfg_.seed, 0xca11b7a7eull));
        std::vector<double> ratios;
        std::vector<PointId> live;
        for (PointId p = 0; p < space_->size(); ++p)
            if (h_.contains(p)) live.push_back(p);
        for (int t = 0; t < 400 && live.size() >= 2; ++t) {
            PointId x = live[rng.next_below(live.size())];
            PointId y = live[rng.next_below(live.size())];
            if (x == y) continue;
            double snow = snow_.scaled_distance(x, y);
            double est = snow * snow;
            if (est <= 0) continue;
            ratios.push_back(space_->distance(x, y) / est);
        }
        if (ratios.empty()) return;
        std::sort(ratios.begin(), ratios.end());
        calib_ = ratios[ratios.size() / 2];  // median rescaling
    }

  public:
    // -- persistence ----------------------------------------------------------

    /// Versioned binary snapshot: magic, format version, config section,
    /// membership section (insertion order and tombstones), summary section.
    /// Loading replays the build deterministically and cross-checks the
    /// structure summary.
    void save(std::ostream& os) const {
        auto put_u32 = [&](std::uint32_t v) { os.write(reinterpret_cast<char*>(&v), 4); };
        auto put_u64 = [&](std::uint64_t v) { os.write(reinterpret_cast<char*>(&v), 8); };
        auto put_f64 = [&](double v) { os.write(reinterpret_cast<char*>(&v), 8); };
        os.write("DORC", 4);
        put_u32(1);
        // config section
        put_u32(0x434f4e46u);  // 'CONF'
        put_u32(7 * 8);
        put_u64(static_cast<std::uint64_t>(cfg_.mode));
        put_f64(cfg_.epsilon);
        put_f64(cfg_.lambda);
        put_u64(static_cast<std::uint64_t>(cfg_.dimension));
        put_u64(cfg_.seed);
        put_f64(cfg_.rebuild_fraction);
        put_u64(static_cast<std::uint64_t>(cfg_.pair_table_slack));
        // membership section
        std::vector<PointId> order;
        std::vector<std::uint8_t> dead;
        for (PointId p : h_.insertion_order())
            if (h_.is_member(p)) {
                order.push_back(p);
                dead.push_back(h_.is_deleted(p) ? 1 : 0);
            }
        put_u32(0x4f524452u);  // 'ORDR'
        put_u32(static_cast<std::uint32_t>(order.size() * 5));
        for (std::size_t i = 0; i < order.size(); ++i) {
            put_u32(order[i]);
            os.write(reinterpret_cast<const char*>(&dead[i]), 1);
        }
        // summary section: explicit node and link counts for validation
        auto inv = h_.verify_invariants();
        put_u32(0x53554d4du);  // 'SUMM'
        put_u32(16);
        put_u64(inv.explicit_nodes);
        put_u64(inv.links);
    }

    static std::unique_ptr<CompositeOracle> load(const MetricSpace& space, std::istream& is) {
        auto get_u32 = [&] {
            std::uint32_t v = 0;
            is.read(reinterpret_cast<char*>(&v), 4);
            return v;
        };
        auto get_u64 = [&] {
            std::uint64_t v = 0;
            is.read(reinterpret_cast<char*>(&v), 8);
            return v;
        };
        auto get_f64 = [&] {
            double v = 0;
            is.read(reinterpret_cast<char*>(&v), 8);
            return v;
        };
        char magic[4];
        is.read(magic, 4);
        if (std::string(magic, 4) != "DORC") throw parse_error("snapshot: bad magic");
        if (get_u32() != 1) throw parse_error("snapshot: unsupported version");
        if (get_u32() != 0x434f4e46u) throw parse_error("snapshot: missing config section");
        get_u32();
        OracleConfig cfg;
        cfg.mode = static_cast<OracleMode>(get_u64());
        cfg.epsilon = get_f64();
        cfg.lambda = get_f64();
        cfg.dimension = static_cast<int>(get_u64());
        cfg.seed = get_u64();
        cfg.rebuild_fraction = get_f64();
        cfg.pair_table_slack = static_cast<int>(get_u64());
        if (get_u32() != 0x4f524452u) throw parse_error("snapshot: missing membership section");
        std::uint32_t bytes = get_u32();
        std::size_t count = bytes / 5;
        auto oracle = std::make_unique<CompositeOracle>(space, cfg);
        std::vector<std::pair<PointId, bool>> members(count);
        for (std::size_t i = 0; i < count; ++i) {
            PointId p = get_u32();
            char d = 0;
            is.read(&d, 1);
            members[i] = {p, d != 0};
        }
        for (auto& [p, deadf] : members) oracle->insert(p);
        for (auto& [p, deadf] : members)
            if (deadf) oracle->erase(p);
        if (get_u32() != 0x53554d4du) throw parse_error("snapshot: missing summary section");
        get_u32();
        std::uint64_t nodes = get_u64(), links = get_u64();
        auto inv = oracle->h_.verify_invariants();
        if (inv.explicit_nodes != nodes || inv.links != links)
            throw parse_error("snapshot: structure summary mismatch after replay");
        return oracle;
    }

  private:
    const MetricSpace* space_;
    OracleConfig cfg_;
    NetHierarchy h_;
    mutable NavTree nav_;
    mutable DominantForest forest_;
    mutable CentroidStatic cstat_;
    mutable CentroidDynamic cdyn_;
    TreeEmbedding tree_emb_;
    SnowflakeEmbedding snow_;

    mutable OpCounters counters_;
    mutable std::unordered_map<std::uint64_t, Neighborhood> neighborhoods_;
    mutable std::unordered_map<std::uint64_t, std::vector<TableEntry>> pair_table_;
    mutable std::unordered_map<PointId, std::vector<double>> snow_cache_;
    mutable double calib_ = 1.0;
    mutable std::uint64_t indexes_version_ = ~0ull, indexes_epoch_ = ~0ull,
                          snow_marks_ = ~0ull;
    mutable bool structures_stale_ = true;
};

}  // namespace doracle
