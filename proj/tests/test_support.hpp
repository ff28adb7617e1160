#pragma once

#include <functional>

#include "promptfence/core.hpp"

namespace pftest {

using pfence::Mat;

inline Mat random_mat(pfence::Rng& rng, int r, int c, double scale = 1.0) {
    Mat m(r, c);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.normal() * scale;
    return m;
}

inline Mat random_unit_rows(pfence::Rng& rng, int r, int c) {
    Mat m = random_mat(rng, r, c);
    for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i) /= m.row(i).norm();
    return m;
}

// Central finite differences of a scalar function w.r.t. one entry of `at`.
inline double central_diff(const std::function<double()>& f, double& entry, double h = 1e-5) {
    const double saved = entry;
    entry = saved + h;
    double up = f();
    entry = saved - h;
    double down = f();
    entry = saved;
    return (up - down) / (2.0 * h);
}

// Gradient agreement: |a - n| <= atol + rtol * max(|a|, |n|)
inline bool grad_close(double analytic, double numeric, double rtol, double atol = 1e-8) {
    return std::abs(analytic - numeric) <=
           atol + rtol * std::max(std::abs(analytic), std::abs(numeric));
}

}  // namespace pftest
