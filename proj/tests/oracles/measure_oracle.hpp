#pragma once

// Brute-force reference values for the three change measures, computed in
// 50-digit binary floating point straight from the definitions: plain loops,
// arccos of the clamped cosine, and for the distribution every threshold
// checked against every entry.

#include <boost/math/constants/constants.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>

#include <algorithm>
#include <cstddef>
#include <vector>

namespace oracle {

using Real = boost::multiprecision::cpp_bin_float_50;

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;  // row-major

    double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

inline double l1(const Matrix& before, const Matrix& after) {
    Real sum = 0;
    for (std::size_t i = 0; i < before.values.size(); ++i) {
        sum += abs(Real(after.values[i]) - Real(before.values[i]));
    }
    return static_cast<double>(sum / Real(before.rows * before.cols));
}

struct Angle {
    double value = 0.0;
    std::size_t zero_rows = 0;
};

inline Angle angular(const Matrix& before, const Matrix& after) {
    Real total = 0;
    std::size_t used = 0;
    Angle out;
    for (std::size_t r = 0; r < before.rows; ++r) {
        Real dot = 0, nb = 0, na = 0;
        for (std::size_t c = 0; c < before.cols; ++c) {
            const Real b = before.at(r, c);
            const Real a = after.at(r, c);
            dot += a * b;
            nb += b * b;
            na += a * a;
        }
        if (nb == 0 || na == 0) {
            ++out.zero_rows;
            continue;
        }
        Real cosine = dot / (sqrt(nb) * sqrt(na));
        cosine = std::max(Real(-1), std::min(Real(1), cosine));
        total += acos(cosine);
        ++used;
    }
    if (used == 0) return out;
    out.value = static_cast<double>(total / (Real(used) * boost::math::constants::pi<Real>()));
    return out;
}

/// Rounded |after - before| as integer multiples of `quantum`, ties away from zero.
inline std::vector<Real> rounded_changes(const Matrix& before, const Matrix& after, double quantum) {
    std::vector<Real> out;
    for (std::size_t i = 0; i < before.values.size(); ++i) {
        const Real scaled = abs(Real(after.values[i]) - Real(before.values[i])) / Real(quantum);
        out.push_back(floor(scaled + Real(0.5)));
    }
    return out;
}

struct Point {
    Real x;
    Real y;
};

inline std::vector<Point> distribution(const Matrix& before, const Matrix& after, double quantum) {
    const std::vector<Real> w = rounded_changes(before, after, quantum);
    std::vector<Real> thresholds = w;
    std::sort(thresholds.begin(), thresholds.end());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    Real mass = 0;
    for (const auto& v : w) mass += v;
    std::vector<Point> points{{Real(0), Real(0)}};
    for (const auto& t : thresholds) {
        Real count = 0, below = 0;
        for (const auto& v : w) {
            if (v <= t) {
                count += 1;
                below += v;
            }
        }
        points.push_back({count / Real(w.size()), mass == 0 ? Real(0) : below / mass});
    }
    return points;
}

inline double auc(const Matrix& before, const Matrix& after, double quantum) {
    const auto points = distribution(before, after, quantum);
    if (points.back().y == 0) return 0.5;
    Real area = 0;
    for (std::size_t i = 1; i < points.size(); ++i) {
        area += (points[i].x - points[i - 1].x) * (points[i].y + points[i - 1].y) / 2;
    }
    return static_cast<double>(area);
}

}  // namespace oracle
