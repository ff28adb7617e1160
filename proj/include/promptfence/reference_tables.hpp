#pragma once

#include <string>
#include <vector>

#include "promptfence/metrics.hpp"

namespace pfence::reference {

// Published Office-31 / Office-Home protection results used as a consistency
// oracle for the metric arithmetic. Every check must land within +/-0.05 of
// the published value (table rounding).

struct TargetSpecifiedRow {
    std::string authorized;
    AccuracyPair auth;
    std::vector<AccuracyPair> unauth;
    double w_ua, d_u, d_a;
};

inline std::vector<TargetSpecifiedRow> office31_target_specified() {
    return {
        {"Amazon",
         {"Amazon", 79.4, 79.4, DomainTag::authorized},
         {{"Dslr", 87.5, 7.5, DomainTag::unauthorized}, {"Webcam", 88.8, 8.8, DomainTag::unauthorized}},
         63.52, 80.00, 0.00},
        {"Dslr",
         {"Dslr", 95.7, 95.7, DomainTag::authorized},
         {{"Amazon", 83.8, 3.8, DomainTag::unauthorized}, {"Webcam", 98.8, 6.3, DomainTag::unauthorized}},
         82.54, 86.25, 0.00},
        {"Webcam",
         {"Webcam", 94.4, 94.4, DomainTag::authorized},
         {{"Amazon", 80.0, 3.8, DomainTag::unauthorized}, {"Dslr", 92.5, 2.5, DomainTag::unauthorized}},
         78.45, 83.10, 0.00},
    };
}

struct MeanRow {
    double w_ua, d_u, d_a;
};

inline MeanRow office31_target_specified_mean() { return {74.84, 83.12, 0.00}; }

struct OwnershipRow {
    std::string authorized;
    double a_u_sl;      // baseline accuracy on the patched inputs
    double a_a_method;  // protected accuracy, clean
    double a_u_method;  // protected accuracy, patched
    double o_ua;
};

inline std::vector<OwnershipRow> ownership_rows() {
    return {
        {"Office-31/Amazon", 80.0, 81.3, 3.8, 62.0},
        {"Office-31/Dslr", 97.5, 97.5, 3.8, 91.4},
        {"Office-31/Webcam", 95.0, 96.3, 1.3, 90.3},
        {"Office-Home/Art", 83.5, 87.5, 5.0, 68.9},
        {"Office-Home/Clipart", 73.8, 73.5, 5.5, 50.2},
        {"Office-Home/Product", 90.5, 92.8, 2.0, 82.2},
        {"Office-Home/RealWorld", 87.5, 92.0, 6.5, 74.8},
    };
}

struct AuthorizationRow {
    std::string authorized;
    double a_a, a_u, d_ua;
};

inline std::vector<AuthorizationRow> authorization_rows() {
    return {
        {"Office-31/Amazon", 63.00, 3.53, 37.46},
        {"Office-31/Dslr", 95.80, 9.77, 82.42},
        {"Office-31/Webcam", 83.30, 15.53, 56.45},
    };
}

inline constexpr double kTolerance = 0.05 + 1e-9;

}  // namespace pfence::reference
