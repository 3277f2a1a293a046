// Command-line harness: dataset generation, audited oracle runs, mode
// comparison tables, and structural invariant dumps.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "doracle/bench.hpp"

using namespace doracle;
using doracle::bench::RunConfig;

namespace {

std::uint64_t default_seed() {
    if (const char* env = std::getenv("DORACLE_SEED")) {
        try {
            return std::stoull(env);
        } catch (...) {
            std::cerr << "warning: ignoring non-numeric DORACLE_SEED\n";
        }
    }
    return 42;
}

int cmd_gen(const std::string& kind, std::size_t n, std::size_t dim, std::uint64_t seed,
            const std::string& out) {
    std::string text = bench::generate_dataset(bench::kind_from_name(kind), n, dim, seed);
    if (out.empty()) {
        std::cout << text;
    } else {
        std::ofstream f(out, std::ios::binary);
        if (!f) {
            std::cerr << "cannot write '" << out << "'\n";
            return 2;
        }
        f << text;
    }
    return 0;
}

RunConfig make_run_config(const std::string& mode, double epsilon, double lambda, int dim_d,
                          std::uint64_t seed, std::size_t queries, const std::string& updates) {
    RunConfig rc;
    rc.oracle.mode = mode_from_name(mode);
    rc.oracle.epsilon = epsilon;
    rc.oracle.lambda = lambda;
    rc.oracle.dimension = dim_d;
    rc.oracle.seed = seed;
    rc.queries = queries;
    rc.workload_seed = hash_combine(seed, 0x3017ull);
    if (!updates.empty()) {
        auto colon = updates.find(':');
        if (colon == std::string::npos)
            throw config_error("--updates must be INSERTS:DELETES");
        rc.inserts = std::stoull(updates.substr(0, colon));
        rc.deletes = std::stoull(updates.substr(colon + 1));
    }
    return rc;
}

void print_summary(const bench::AuditReport& rep) {
    std::cout << "queries        " << rep.queries_run << "\n"
              << "pass_rate      " << rep.pass_rate << "\n"
              << "provable_rate  " << rep.provable_pass_rate << "\n"
              << "max_ratio_err  " << rep.max_ratio_error << "\n"
              << "fallback_rate  " << rep.fallback_rate << "\n"
              << "mean_prims     " << rep.mean_primitives << "\n"
              << "p99_prims      " << rep.p99_primitives << "\n"
              << "build_seconds  " << rep.build_seconds << "\n"
              << "query_seconds  " << rep.query_seconds << "\n";
    for (const auto& [name, ok] : rep.invariant_results)
        std::cout << (ok ? "PASS " : "FAIL ") << name << "\n";
}

int cmd_audit(const std::string& dataset, const RunConfig& base, const std::string& out) {
    RunConfig rc = base;
    rc.dataset_path = dataset;
    rc.inline_dataset = false;
    MetricSpace space = bench::load_dataset_file(dataset);
    std::ofstream qstream;
    std::unique_ptr<std::ostream> qout;
    if (!out.empty()) {
        qstream.open(out + ".jsonl", std::ios::binary);
        if (!qstream) {
            std::cerr << "cannot write '" << out << ".jsonl'\n";
            return 2;
        }
    }
    auto rep = bench::run_audit(rc, space, out.empty() ? nullptr : &qstream);
    if (!out.empty()) {
        std::ofstream f(out, std::ios::binary);
        if (!f) {
            std::cerr << "cannot write '" << out << "'\n";
            return 2;
        }
        f << rep.to_json().dump(2) << "\n";
    }
    print_summary(rep);
    return rep.invariants_ok ? 0 : 1;
}

int cmd_compare(const std::string& dataset, const std::vector<std::string>& modes,
                const RunConfig& base, const std::string& out) {
    if (modes.empty()) throw config_error("compare needs at least one --mode");
    MetricSpace space = bench::load_dataset_file(dataset);
    std::vector<RunConfig> rcs;
    for (const std::string& m : modes) {
        RunConfig rc = base;
        rc.dataset_path = dataset;
        rc.inline_dataset = false;
        rc.oracle.mode = mode_from_name(m);
        rcs.push_back(rc);
    }
    auto table = bench::run_compare(rcs, space);
    std::cout << "mode                 pass   max_err   mean_ops  p99  fallback inv\n";
    bool all_ok = true;
    for (const auto& row : table["rows"]) {
        std::printf("%-20s %.4f %.6f  %8.1f %5d  %.4f  %s\n",
                    row["mode"].get<std::string>().c_str(), row["pass_rate"].get<double>(),
                    row["max_ratio_error"].get<double>(), row["mean_primitives"].get<double>(),
                    static_cast<int>(row["p99_primitives"].get<double>()),
                    row["fallback_rate"].get<double>(),
                    row["invariants_ok"].get<bool>() ? "ok" : "FAIL");
        if (!row["invariants_ok"].get<bool>()) all_ok = false;
    }
    if (!out.empty()) {
        std::ofstream f(out, std::ios::binary);
        f << table.dump(2) << "\n";
    }
    return all_ok ? 0 : 1;
}

/// Re-verifies a debug dump against its dataset: cached link distances,
/// per-level packing among listed nodes, and parent coverage.
int verify_dump(const MetricSpace& space, std::istream& dump) {
    struct Node {
        Level level;
        PointId point, parent;
    };
    std::vector<Node> nodes;
    std::vector<std::tuple<Level, PointId, PointId, double>> links;
    std::string kind;
    while (dump >> kind) {
        if (kind == "node") {
            long long lvl, p, par;
            dump >> lvl >> p >> par;
            nodes.push_back(Node{static_cast<Level>(lvl), static_cast<PointId>(p),
                                 par < 0 ? kInvalidPoint : static_cast<PointId>(par)});
        } else if (kind == "link") {
            long long lvl, a, b;
            double d;
            dump >> lvl >> a >> b >> d;
            links.emplace_back(static_cast<Level>(lvl), static_cast<PointId>(a),
                               static_cast<PointId>(b), d);
        } else {
            std::cerr << "dump: unknown record '" << kind << "'\n";
            return 1;
        }
    }
    bool ok = true;
    for (const auto& [lvl, a, b, d] : links)
        if (space.distance(a, b) != d) {
            std::cerr << "FAIL link distance mismatch at level " << lvl << ": " << a << "," << b
                      << "\n";
            ok = false;
        }
    std::map<Level, std::vector<PointId>> by_level;
    for (const Node& n : nodes) by_level[n.level].push_back(n.point);
    for (const auto& [lvl, pts] : by_level) {
        double pack = 0.2 * pow5(lvl);
        for (std::size_t i = 0; i < pts.size(); ++i)
            for (std::size_t j = i + 1; j < pts.size(); ++j)
                if (space.distance(pts[i], pts[j]) * (1 + 1e-12) < pack) {
                    std::cerr << "FAIL packing at level " << lvl << "\n";
                    ok = false;
                }
    }
    for (const Node& n : nodes)
        if (n.parent != kInvalidPoint &&
            !(space.distance(n.point, n.parent) < 0.8 * pow5(n.level + 1)))
            if (!(space.distance(n.point, n.parent) < 0.6 * pow5(n.level + 1) * (1 + 1e-12))) {
                std::cerr << "FAIL coverage for node " << n.point << "@" << n.level << "\n";
                ok = false;
            }
    std::cout << (ok ? "PASS" : "FAIL") << " dump verification: " << nodes.size() << " nodes, "
              << links.size() << " links\n";
    return ok ? 0 : 1;
}

int cmd_dump_invariants(const std::string& dataset, double epsilon, double lambda,
                        std::uint64_t seed, const std::string& out,
                        const std::string& from_dump) {
    MetricSpace space = bench::load_dataset_file(dataset);
    if (!from_dump.empty()) {
        std::ifstream f(from_dump);
        if (!f) {
            std::cerr << "cannot open dump '" << from_dump << "'\n";
            return 2;
        }
        return verify_dump(space, f);
    }
    OracleConfig cfg;
    cfg.epsilon = epsilon;
    cfg.lambda = lambda;
    cfg.seed = seed;
    CompositeOracle oracle(space, cfg);
    for (PointId p = 0; p < space.size(); ++p) oracle.insert(p);
    oracle.finalize_build();
    auto suites = bench::run_invariant_suites(oracle, seed);
    bool all = true;
    for (const auto& [name, ok] : suites) {
        std::cout << (ok ? "PASS " : "FAIL ") << name << "\n";
        if (!ok) all = false;
    }
    if (!out.empty()) {
        std::ofstream f(out, std::ios::binary);
        oracle.hierarchy().debug_dump(f);
        std::cout << "dump written to " << out << "\n";
    }
    return all ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dynamic doubling-metric distance oracle harness"};
    app.require_subcommand(1);

    std::uint64_t seed = default_seed();
    std::string dataset, out, mode = "static_O1", kind = "uniform", updates;
    std::vector<std::string> modes;
    double epsilon = 0.1, lambda = 2.0;
    int dim_d = 64;
    std::size_t n = 2000, dim = 2, queries = 10000;
    std::string from_dump;

    auto* gen = app.add_subcommand("gen", "generate a dataset file");
    gen->add_option("--kind", kind, "uniform|clustered|grid|line|matrix-random-metric");
    gen->add_option("--n", n, "point count");
    gen->add_option("--dim", dim, "dimension (points formats)");
    gen->add_option("--seed", seed, "generator seed");
    gen->add_option("--out", out, "output path (stdout when absent)");

    auto* audit = app.add_subcommand("audit", "build an oracle and audit a workload");
    audit->add_option("--dataset", dataset, "dataset file")->required();
    audit->add_option("--mode", mode, "oracle mode");
    audit->add_option("--epsilon", epsilon, "approximation epsilon");
    audit->add_option("--lambda", lambda, "doubling dimension parameter");
    audit->add_option("--dim-D", dim_d, "snowflake dimension");
    audit->add_option("--seed", seed, "oracle + workload seed");
    audit->add_option("--queries", queries, "query count");
    audit->add_option("--updates", updates, "INSERTS:DELETES interleaved");
    audit->add_option("--out", out, "report path (adds .jsonl per-query records)");

    auto* compare = app.add_subcommand("compare", "audit several modes side by side");
    compare->add_option("--dataset", dataset, "dataset file")->required();
    compare->add_option("--mode", modes, "modes to compare (repeatable)")->required();
    compare->add_option("--epsilon", epsilon, "approximation epsilon");
    compare->add_option("--lambda", lambda, "doubling dimension parameter");
    compare->add_option("--dim-D", dim_d, "snowflake dimension");
    compare->add_option("--seed", seed, "oracle + workload seed");
    compare->add_option("--queries", queries, "query count per mode");
    compare->add_option("--out", out, "table path (JSON)");

    auto* dumpinv = app.add_subcommand("dump-invariants", "run invariant suites / verify dumps");
    dumpinv->add_option("--dataset", dataset, "dataset file")->required();
    dumpinv->add_option("--epsilon", epsilon, "approximation epsilon");
    dumpinv->add_option("--lambda", lambda, "doubling dimension parameter");
    dumpinv->add_option("--seed", seed, "build seed");
    dumpinv->add_option("--out", out, "write the structure dump here");
    dumpinv->add_option("--from-dump", from_dump, "verify an existing dump instead");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen(kind, n, dim, seed, out);
        RunConfig base = make_run_config(mode, epsilon, lambda, dim_d, seed, queries, updates);
        if (audit->parsed()) return cmd_audit(dataset, base, out);
        if (compare->parsed()) return cmd_compare(dataset, modes, base, out);
        if (dumpinv->parsed())
            return cmd_dump_invariants(dataset, epsilon, lambda, seed, out, from_dump);
    } catch (const config_error& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const parse_error& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
