#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "doracle/common.hpp"

namespace doracle {

enum class DatasetFormat { points, matrix };

/// Finite metric space: either a Euclidean point list (any dimension) or an
/// explicit symmetric distance matrix. Immutable after load; the exact
/// brute-force oracle that grounds every audit lives here.
class MetricSpace {
  public:
    static constexpr std::size_t kExactExtremesLimit = 10000;

    MetricSpace() = default;

    static MetricSpace from_points(std::vector<double> coords, std::size_t dim) {
        MetricSpace s;
        s.kind_ = Kind::euclidean;
        s.dim_ = dim;
        s.coords_ = std::move(coords);
        s.n_ = s.dim_ ? s.coords_.size() / s.dim_ : 0;
        s.finish_load();
        return s;
    }

    static MetricSpace from_matrix(std::vector<double> matrix, std::size_t n) {
        MetricSpace s;
        s.kind_ = Kind::matrix;
        s.n_ = n;
        s.matrix_ = std::move(matrix);
        s.validate_matrix();
        s.finish_load();
        return s;
    }

    /// Parses one of the two dataset formats. "points": one point per line,
    /// whitespace-separated decimal coordinates, uniform dimension.
    /// "matrix": first line n, then n rows of n decimals, symmetric with zero
    /// diagonal. Lines starting with '#' are comments in both formats.
    static MetricSpace load(std::istream& in, DatasetFormat format) {
        if (format == DatasetFormat::points) return load_points(in);
        return load_matrix(in);
    }

    std::size_t size() const { return n_; }
    std::size_t dimension() const { return dim_; }
    bool is_euclidean() const { return kind_ == Kind::euclidean; }

    double distance(PointId x, PointId y) const {
        check_id(x);
        check_id(y);
        ++distance_evals_;
        if (x == y) return 0.0;
        if (kind_ == Kind::matrix) return matrix_[static_cast<std::size_t>(x) * n_ + y];
        const double* a = &coords_[static_cast<std::size_t>(x) * dim_];
        const double* b = &coords_[static_cast<std::size_t>(y) * dim_];
        double s = 0.0;
        for (std::size_t i = 0; i < dim_; ++i) {
            double d = a[i] - b[i];
            s += d * d;
        }
        return std::sqrt(s);
    }

    /// Ground-truth oracle used as the audit reference for every approximate
    /// oracle. Identical to distance(); kept as a named entry point so audits
    /// read as intended.
    double exact_query(PointId x, PointId y) const { return distance(x, y); }

    const double* coordinates(PointId x) const {
        check_id(x);
        return &coords_[static_cast<std::size_t>(x) * dim_];
    }

    double min_distance() const { return d_min_; }
    double max_distance() const { return d_max_; }
    double aspect_ratio() const { return alpha_; }
    /// False when n exceeded the all-pairs limit and the extremes are sampled.
    bool extremes_exact() const { return extremes_exact_; }

    std::uint64_t distance_eval_count() const { return distance_evals_; }
    void reset_distance_eval_count() const { distance_evals_ = 0; }

    /// Crude doubling-dimension estimate, for reporting only: samples balls
    /// and measures how many half-radius balls are needed to cover each.
    double estimate_doubling_dimension(std::uint64_t seed = 1, int samples = 64) const {
        if (n_ < 2) return 0.0;
        RngStream rng(seed ^ 0x5eedull);
        double worst = 1.0;
        for (int s = 0; s < samples; ++s) {
            PointId c = static_cast<PointId>(rng.next_below(n_));
            double r = d_min_ + rng.next_double() * (d_max_ - d_min_);
            std::vector<PointId> ball;
            for (PointId p = 0; p < n_; ++p)
                if (distance(c, p) <= r) ball.push_back(p);
            if (ball.size() < 2) continue;
            // Greedy half-radius cover.
            std::vector<bool> covered(ball.size(), false);
            int centers = 0;
            for (std::size_t i = 0; i < ball.size(); ++i) {
                if (covered[i]) continue;
                ++centers;
                for (std::size_t j = i; j < ball.size(); ++j)
                    if (!covered[j] && distance(ball[i], ball[j]) <= r / 2.0) covered[j] = true;
            }
            worst = std::max(worst, static_cast<double>(centers));
        }
        return std::log2(worst);
    }

  private:
    enum class Kind { euclidean, matrix };

    static bool comment_or_blank(const std::string& line) {
        for (char c : line) {
            if (c == '#') return true;
            if (!std::isspace(static_cast<unsigned char>(c))) return false;
        }
        return true;
    }

    static MetricSpace load_points(std::istream& in) {
        std::vector<double> coords;
        std::size_t dim = 0, lineno = 0, npoints = 0;
        std::string line;
        while (std::getline(in, line)) {
            ++lineno;
            if (comment_or_blank(line)) continue;
            std::istringstream ls(line);
            std::vector<double> row;
            double v;
            while (ls >> v) row.push_back(v);
            if (!ls.eof()) {
                std::string tok;
                ls.clear();
                ls >> tok;
                throw parse_error("line " + std::to_string(lineno) + ": bad coordinate '" + tok +
                                  "'");
            }
            if (row.empty())
                throw parse_error("line " + std::to_string(lineno) + ": empty point");
            if (dim == 0) dim = row.size();
            if (row.size() != dim)
                throw parse_error("line " + std::to_string(lineno) + ": expected " +
                                  std::to_string(dim) + " coordinates, got " +
                                  std::to_string(row.size()));
            coords.insert(coords.end(), row.begin(), row.end());
            ++npoints;
        }
        if (npoints == 0) throw parse_error("dataset has no points");
        return from_points(std::move(coords), dim);
    }

    static MetricSpace load_matrix(std::istream& in) {
        std::string line;
        std::size_t lineno = 0;
        std::size_t n = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (comment_or_blank(line)) continue;
            std::istringstream ls(line);
            long long v = -1;
            if (!(ls >> v) || v <= 0)
                throw parse_error("line " + std::to_string(lineno) + ": expected point count");
            n = static_cast<std::size_t>(v);
            break;
        }
        if (n == 0) throw parse_error("matrix dataset has no header");
        std::vector<double> m;
        m.reserve(n * n);
        std::size_t rows = 0;
        while (rows < n && std::getline(in, line)) {
            ++lineno;
            if (comment_or_blank(line)) continue;
            std::istringstream ls(line);
            std::size_t got = 0;
            double v;
            while (ls >> v) {
                m.push_back(v);
                ++got;
            }
            if (got != n)
                throw parse_error("line " + std::to_string(lineno) + ": expected " +
                                  std::to_string(n) + " entries, got " + std::to_string(got));
            ++rows;
        }
        if (rows != n) throw parse_error("matrix dataset truncated: " + std::to_string(rows) +
                                         " of " + std::to_string(n) + " rows");
        return from_matrix(std::move(m), n);
    }

    void validate_matrix() {
        if (matrix_.size() != n_ * n_) throw parse_error("matrix size mismatch");
        for (std::size_t i = 0; i < n_; ++i) {
            if (matrix_[i * n_ + i] != 0.0)
                throw parse_error("matrix diagonal must be zero at row " + std::to_string(i));
            for (std::size_t j = i + 1; j < n_; ++j) {
                double a = matrix_[i * n_ + j], b = matrix_[j * n_ + i];
                if (a != b)
                    throw parse_error("matrix not symmetric at (" + std::to_string(i) + "," +
                                      std::to_string(j) + ")");
                if (!(a > 0.0))
                    throw parse_error("matrix off-diagonal must be positive at (" +
                                      std::to_string(i) + "," + std::to_string(j) + ")");
            }
        }
    }

    void finish_load() {
        if (n_ == 0) throw parse_error("dataset has no points");
        if (kind_ == Kind::euclidean) reject_duplicates();
        compute_extremes();
    }

    void reject_duplicates() const {
        // Exact duplicate coordinates make d_min = 0, which no hierarchy level
        // can pack. Detected exactly at any n via sorting.
        std::vector<PointId> order(n_);
        for (PointId i = 0; i < n_; ++i) order[i] = i;
        auto row = [&](PointId p) { return &coords_[static_cast<std::size_t>(p) * dim_]; };
        std::sort(order.begin(), order.end(), [&](PointId a, PointId b) {
            return std::lexicographical_compare(row(a), row(a) + dim_, row(b), row(b) + dim_);
        });
        for (std::size_t i = 1; i < n_; ++i)
            if (std::equal(row(order[i - 1]), row(order[i - 1]) + dim_, row(order[i])))
                throw parse_error("duplicate coordinates for points " +
                                  std::to_string(order[i - 1]) + " and " +
                                  std::to_string(order[i]) + " (d_min would be 0)");
    }

    void compute_extremes() {
        d_min_ = std::numeric_limits<double>::infinity();
        d_max_ = 0.0;
        if (n_ == 1) {
            d_min_ = d_max_ = 1.0;
            alpha_ = 1.0;
            extremes_exact_ = true;
            return;
        }
        if (n_ <= kExactExtremesLimit) {
            for (PointId i = 0; i < n_; ++i)
                for (PointId j = i + 1; j < n_; ++j) {
                    double d = distance(i, j);
                    if (d <= 0.0)
                        throw parse_error("zero distance between points " + std::to_string(i) +
                                          " and " + std::to_string(j));
                    d_min_ = std::min(d_min_, d);
                    d_max_ = std::max(d_max_, d);
                }
            extremes_exact_ = true;
        } else {
            RngStream rng(0xa110f7edull);
            std::size_t samples = 4 * kExactExtremesLimit;
            for (std::size_t s = 0; s < samples; ++s) {
                PointId i = static_cast<PointId>(rng.next_below(n_));
                PointId j = static_cast<PointId>(rng.next_below(n_));
                if (i == j) continue;
                double d = distance(i, j);
                d_min_ = std::min(d_min_, d);
                d_max_ = std::max(d_max_, d);
            }
            // Nearest-neighbor pass along a coordinate ordering sharpens the
            // d_min estimate for Euclidean data.
            if (kind_ == Kind::euclidean) {
                std::vector<PointId> order(n_);
                for (PointId i = 0; i < n_; ++i) order[i] = i;
                std::sort(order.begin(), order.end(), [&](PointId a, PointId b) {
                    return coords_[static_cast<std::size_t>(a) * dim_] <
                           coords_[static_cast<std::size_t>(b) * dim_];
                });
                for (std::size_t i = 0; i + 1 < n_; ++i)
                    d_min_ = std::min(d_min_, distance(order[i], order[i + 1]));
            }
            extremes_exact_ = false;
        }
        alpha_ = d_max_ / d_min_;
        distance_evals_ = 0;
    }

    void check_id(PointId x) const {
        if (x >= n_) throw lookup_error("unknown point id " + std::to_string(x));
    }

    Kind kind_ = Kind::euclidean;
    std::size_t n_ = 0;
    std::size_t dim_ = 0;
    std::vector<double> coords_;
    std::vector<double> matrix_;
    double d_min_ = 1.0, d_max_ = 1.0, alpha_ = 1.0;
    bool extremes_exact_ = true;
    mutable std::uint64_t distance_evals_ = 0;
};

}  // namespace doracle
