#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "doracle/composite_oracle.hpp"

namespace doracle::bench {

using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Dataset generation

enum class DatasetKind { uniform, clustered, grid, line, matrix_random_metric };

inline const char* kind_name(DatasetKind k) {
    switch (k) {
        case DatasetKind::uniform: return "uniform";
        case DatasetKind::clustered: return "clustered";
        case DatasetKind::grid: return "grid";
        case DatasetKind::line: return "line";
        case DatasetKind::matrix_random_metric: return "matrix-random-metric";
    }
    return "?";
}

inline DatasetKind kind_from_name(const std::string& s) {
    for (DatasetKind k : {DatasetKind::uniform, DatasetKind::clustered, DatasetKind::grid,
                          DatasetKind::line, DatasetKind::matrix_random_metric})
        if (s == kind_name(k)) return k;
    throw config_error("unknown dataset kind '" + s + "'");
}

inline void append_number(std::string& out, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out += buf;
}

/// Deterministic dataset text in the points or matrix format.
inline std::string generate_dataset(DatasetKind kind, std::size_t n, std::size_t dim,
                                    std::uint64_t seed) {
    if (n < 2) throw config_error("dataset needs at least 2 points");
    RngStream rng(hash_combine(seed, static_cast<std::uint64_t>(kind)));
    std::string out;
    out += "# kind=";
    out += kind_name(kind);
    out += " n=" + std::to_string(n) + " dim=" + std::to_string(dim) +
           " seed=" + std::to_string(seed) + "\n";
    auto emit_row = [&](const std::vector<double>& row) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out += ' ';
            append_number(out, row[i]);
        }
        out += '\n';
    };
    switch (kind) {
        case DatasetKind::uniform: {
            for (std::size_t i = 0; i < n; ++i) {
                std::vector<double> row(dim);
                for (double& c : row) c = rng.next_double();
                emit_row(row);
            }
            break;
        }
        case DatasetKind::clustered: {
            std::size_t k = std::max<std::size_t>(2, n / 50);
            std::vector<double> centers(k * dim);
            for (double& c : centers) c = rng.next_double();
            for (std::size_t i = 0; i < n; ++i) {
                std::size_t c = rng.next_below(k);
                std::vector<double> row(dim);
                for (std::size_t d = 0; d < dim; ++d) {
                    // Box-Muller jitter around the center
                    double u1 = std::max(1e-12, rng.next_double());
                    double u2 = rng.next_double();
                    double g = std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
                    row[d] = centers[c * dim + d] + 0.01 * g;
                }
                emit_row(row);
            }
            break;
        }
        case DatasetKind::grid: {
            if (dim == 1) {
                for (std::size_t i = 0; i < n; ++i) emit_row({static_cast<double>(i)});
            } else {
                std::size_t side = 1;
                while (side * side < n) ++side;
                for (std::size_t i = 0; i < n; ++i)
                    emit_row({static_cast<double>(i % side), static_cast<double>(i / side)});
            }
            break;
        }
        case DatasetKind::line: {
            std::vector<double> xs(n);
            for (double& x : xs) x = rng.next_double() * static_cast<double>(n);
            std::sort(xs.begin(), xs.end());
            for (std::size_t i = 1; i < n; ++i)
                if (xs[i] == xs[i - 1]) xs[i] = std::nextafter(xs[i], 1e308);
            for (double x : xs) emit_row({x});
            break;
        }
        case DatasetKind::matrix_random_metric: {
            if (n > 512) throw config_error("matrix-random-metric caps n at 512");
            // Random weighted complete graph, then shortest-path closure.
            std::vector<double> w(n * n, 0.0);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = i + 1; j < n; ++j)
                    w[i * n + j] = w[j * n + i] = 1.0 + rng.next_double() * 9.0;
            for (std::size_t k = 0; k < n; ++k)
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < n; ++j)
                        w[i * n + j] = std::min(w[i * n + j], w[i * n + k] + w[k * n + j]);
            out += std::to_string(n) + "\n";
            for (std::size_t i = 0; i < n; ++i) {
                std::vector<double> row(n);
                for (std::size_t j = 0; j < n; ++j) row[j] = w[i * n + j];
                emit_row(row);
            }
            break;
        }
    }
    return out;
}

/// Sniffs the matrix format: a lone integer header followed by exactly that
/// many rows of that many entries.
inline DatasetFormat detect_format(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::optional<std::size_t> header;
    std::size_t rows = 0, row_width = 0;
    while (std::getline(in, line)) {
        bool blank = true;
        for (char c : line) {
            if (c == '#') break;
            if (!std::isspace(static_cast<unsigned char>(c))) {
                blank = false;
                break;
            }
        }
        if (blank) continue;
        std::istringstream ls(line);
        std::vector<double> vals;
        double v;
        while (ls >> v) vals.push_back(v);
        if (!header) {
            if (vals.size() == 1 && vals[0] >= 2 && vals[0] == std::floor(vals[0]))
                header = static_cast<std::size_t>(vals[0]);
            else
                return DatasetFormat::points;
            continue;
        }
        ++rows;
        row_width = vals.size();
        if (row_width != *header) return DatasetFormat::points;
    }
    return (header && rows == *header) ? DatasetFormat::matrix : DatasetFormat::points;
}

inline MetricSpace load_dataset_text(const std::string& text) {
    DatasetFormat fmt = detect_format(text);
    std::istringstream in(text);
    return MetricSpace::load(in, fmt);
}

inline MetricSpace load_dataset_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw parse_error("cannot open dataset file '" + path + "'");
    std::stringstream buf;
    buf << f.rdbuf();
    return load_dataset_text(buf.str());
}

// ---------------------------------------------------------------------------
// Audits

struct RunConfig {
    std::string dataset_path;      // or the inline generator fields below
    DatasetKind kind = DatasetKind::uniform;
    std::size_t n = 2000, dim = 2;
    std::uint64_t dataset_seed = 1;
    bool inline_dataset = true;

    OracleConfig oracle;
    std::size_t queries = 10000;
    std::size_t inserts = 0, deletes = 0;
    std::uint64_t workload_seed = 7;

    json to_json() const {
        json j;
        j["dataset"] = {{"path", dataset_path},
                        {"kind", kind_name(kind)},
                        {"n", n},
                        {"dim", dim},
                        {"seed", dataset_seed},
                        {"inline", inline_dataset}};
        j["oracle"] = {{"mode", mode_name(oracle.mode)}, {"epsilon", oracle.epsilon},
                       {"lambda", oracle.lambda},        {"dimension", oracle.dimension},
                       {"seed", oracle.seed}};
        j["workload"] = {{"queries", queries},
                         {"inserts", inserts},
                         {"deletes", deletes},
                         {"seed", workload_seed}};
        return j;
    }
};

struct AuditReport {
    json config;
    std::size_t queries_run = 0;
    double pass_rate = 0.0;          // fraction within (1 +- eps)
    double provable_pass_rate = 0.0; // fraction within the provable band
    double max_ratio_error = 0.0;
    double fallback_rate = 0.0;
    double mean_primitives = 0.0;
    std::uint64_t p50_primitives = 0, p99_primitives = 0;
    bool invariants_ok = true;
    std::vector<std::pair<std::string, bool>> invariant_results;
    double build_seconds = 0.0, query_seconds = 0.0;

    json to_json(bool with_timing = true) const {
        json j;
        j["config"] = config;
        j["summary"] = {{"queries", queries_run},
                        {"pass_rate", pass_rate},
                        {"provable_pass_rate", provable_pass_rate},
                        {"max_ratio_error", max_ratio_error},
                        {"fallback_rate", fallback_rate},
                        {"mean_primitives", mean_primitives},
                        {"p50_primitives", p50_primitives},
                        {"p99_primitives", p99_primitives},
                        {"invariants_ok", invariants_ok}};
        json inv = json::object();
        for (const auto& [name, ok] : invariant_results) inv[name] = ok;
        j["invariants"] = inv;
        if (with_timing)
            j["timing"] = {{"build_seconds", build_seconds},
                           {"query_seconds", query_seconds}};
        return j;
    }
};

/// Runs every module's invariant suite against a built oracle.
inline std::vector<std::pair<std::string, bool>> run_invariant_suites(
    const CompositeOracle& o, std::uint64_t seed) {
    std::vector<std::pair<std::string, bool>> out;
    const NetHierarchy& h = o.hierarchy();
    auto hinv = h.verify_invariants();
    out.emplace_back("hierarchy_packing_covering_links", hinv.ok);
    auto finv = o.forest().verify_invariants();
    out.emplace_back("forest_dominance_and_parents", finv.ok);
    out.emplace_back("forest_ancestor_drift", o.forest().check_ancestor_drift(seed));
    auto cinv = o.centroid_dynamic().verify_partition();
    out.emplace_back("centroid_ct_partition", cinv.ok);
    // metric sanity on sampled triples
    const MetricSpace& sp = h.space();
    RngStream rng(seed ^ 0x7a1eull);
    bool metric_ok = true;
    for (int t = 0; t < 10000 && metric_ok; ++t) {
        PointId a = static_cast<PointId>(rng.next_below(sp.size()));
        PointId b = static_cast<PointId>(rng.next_below(sp.size()));
        PointId c = static_cast<PointId>(rng.next_below(sp.size()));
        if (sp.distance(a, b) != sp.distance(b, a)) metric_ok = false;
        if (sp.distance(a, c) > sp.distance(a, b) + sp.distance(b, c) +
                                    1e-9 * sp.distance(a, c))
            metric_ok = false;
    }
    out.emplace_back("metric_symmetry_triangle", metric_ok);
    // tree embedding non-contraction, sampled
    bool noncontract = true;
    for (int t = 0; t < 2000 && noncontract; ++t) {
        PointId a = static_cast<PointId>(rng.next_below(sp.size()));
        PointId b = static_cast<PointId>(rng.next_below(sp.size()));
        if (a == b || !h.contains(a) || !h.contains(b)) continue;
        if (o.tree_embedding().distance(a, b) < sp.distance(a, b) * (1 - 1e-9))
            noncontract = false;
    }
    out.emplace_back("tree_embedding_non_contraction", noncontract);
    return out;
}

/// Builds the configured oracle, drives the workload, audits every answer
/// against the exact oracle, and executes the invariant suites.
inline AuditReport run_audit(const RunConfig& rc, const MetricSpace& space,
                             std::ostream* query_records = nullptr) {
    AuditReport rep;
    rep.config = rc.to_json();
    auto t0 = std::chrono::steady_clock::now();
    CompositeOracle oracle(space, rc.oracle);

    std::size_t initial = space.size();
    if (rc.inserts > 0 && rc.inserts < space.size()) initial = space.size() - rc.inserts;
    for (PointId p = 0; p < initial; ++p) oracle.insert(p);
    oracle.finalize_build();
    auto t1 = std::chrono::steady_clock::now();

    RngStream rng(rc.workload_seed);
    std::vector<PointId> live;
    for (PointId p = 0; p < initial; ++p) live.push_back(p);
    PointId next_insert = static_cast<PointId>(initial);
    std::size_t inserts_left = rc.inserts, deletes_left = rc.deletes;

    std::size_t total_ops = rc.queries + rc.inserts + rc.deletes;
    std::size_t in_band = 0, in_provable = 0, fallbacks = 0, ran = 0;
    std::vector<std::uint64_t> prim;
    double provable = 12.5 * rc.oracle.epsilon / (8.0 - 2.5 * rc.oracle.epsilon);

    for (std::size_t op = 0; op < total_ops; ++op) {
        std::uint64_t roll = rng.next_below(total_ops - op);
        if (roll < inserts_left + deletes_left && live.size() > 4) {
            if (roll < inserts_left && next_insert < space.size()) {
                oracle.insert(next_insert);
                live.push_back(next_insert++);
                --inserts_left;
            } else if (deletes_left > 0) {
                std::size_t k = rng.next_below(live.size());
                oracle.erase(live[k]);
                live.erase(live.begin() + static_cast<long>(k));
                --deletes_left;
            }
            continue;
        }
        PointId x = live[rng.next_below(live.size())];
        PointId y = live[rng.next_below(live.size())];
        if (x == y) continue;
        std::uint64_t before = oracle.primitives_snapshot();
        auto r = oracle.query(x, y);
        prim.push_back(oracle.primitives_snapshot() - before);
        ++ran;
        double err = std::abs(r.audit.ratio - 1.0);
        if (err <= rc.oracle.epsilon + 1e-9) ++in_band;
        if (err <= provable + 1e-9) ++in_provable;
        if (r.audit.fallback_used) ++fallbacks;
        rep.max_ratio_error = std::max(rep.max_ratio_error, err);
        if (query_records) {
            json q = {{"x", r.audit.x},
                      {"y", r.audit.y},
                      {"exact", r.audit.exact},
                      {"estimate", r.audit.estimate},
                      {"ratio", r.audit.ratio},
                      {"lca_level_min", r.audit.lca_level_min == kNoLevel
                                            ? json(nullptr)
                                            : json(r.audit.lca_level_min)},
                      {"i", r.audit.i},
                      {"outer_probes", r.audit.outer_probes},
                      {"inner_probes", r.audit.inner_probes},
                      {"mode", r.audit.mode},
                      {"path_taken", r.audit.path_taken},
                      {"fallback_used", r.audit.fallback_used}};
            (*query_records) << q.dump() << '\n';
        }
    }
    auto t2 = std::chrono::steady_clock::now();

    rep.queries_run = ran;
    rep.pass_rate = ran ? static_cast<double>(in_band) / ran : 1.0;
    rep.provable_pass_rate = ran ? static_cast<double>(in_provable) / ran : 1.0;
    rep.fallback_rate = ran ? static_cast<double>(fallbacks) / ran : 0.0;
    if (!prim.empty()) {
        std::uint64_t sum = 0;
        for (auto v : prim) sum += v;
        rep.mean_primitives = static_cast<double>(sum) / prim.size();
        std::sort(prim.begin(), prim.end());
        rep.p50_primitives = prim[prim.size() / 2];
        rep.p99_primitives = prim[prim.size() * 99 / 100];
    }
    rep.invariant_results = run_invariant_suites(oracle, rc.workload_seed);
    for (const auto& [name, ok] : rep.invariant_results)
        if (!ok) rep.invariants_ok = false;
    rep.build_seconds = std::chrono::duration<double>(t1 - t0).count();
    rep.query_seconds = std::chrono::duration<double>(t2 - t1).count();
    return rep;
}

/// Side-by-side mode comparison over one dataset: per-mode audits plus the
/// characteristic operation counters of the two backup oracles.
inline json run_compare(const std::vector<RunConfig>& configs, const MetricSpace& space) {
    if (configs.empty()) throw config_error("compare needs at least one configuration");
    json rows = json::array();
    for (const RunConfig& rc : configs) {
        AuditReport rep = run_audit(rc, space);
        json row;
        row["mode"] = mode_name(rc.oracle.mode);
        row["pass_rate"] = rep.pass_rate;
        row["provable_pass_rate"] = rep.provable_pass_rate;
        row["max_ratio_error"] = rep.max_ratio_error;
        row["mean_primitives"] = rep.mean_primitives;
        row["p99_primitives"] = rep.p99_primitives;
        row["fallback_rate"] = rep.fallback_rate;
        row["invariants_ok"] = rep.invariants_ok;
        rows.push_back(row);
    }
    json out;
    out["dataset"] = configs.front().to_json()["dataset"];
    out["rows"] = rows;
    return out;
}

}  // namespace doracle::bench
