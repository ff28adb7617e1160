#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

namespace pfence {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;

// Error taxonomy. The CLI maps these onto exit codes (config 2, data 3,
// numeric 4), so library code must throw the matching category.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class DomainTag { authorized, unauthorized, test };

inline const char* to_string(DomainTag t) {
    switch (t) {
        case DomainTag::authorized: return "authorized";
        case DomainTag::unauthorized: return "unauthorized";
        case DomainTag::test: return "test";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Deterministic RNG. std:: distributions are implementation-defined, so all
// sampling goes through explicit transforms of a SplitMix64 stream; outputs
// are bit-identical for a given seed on any conforming platform.
// ---------------------------------------------------------------------------
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    // standard normal via Box-Muller
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// FNV-1a content hashing. Used for dataset manifests, frozen-bank integrity
// and checkpoint identity; 64-bit is plenty for tamper/drift detection here.
// ---------------------------------------------------------------------------
inline std::uint64_t fnv1a_init() { return 1469598103934665603ULL; }

inline std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::uint64_t fnv1a(std::uint64_t h, const std::string& s) {
    return fnv1a(h, s.data(), s.size());
}

inline std::uint64_t fnv1a(std::uint64_t h, const Mat& m) {
    std::int64_t r = m.rows(), c = m.cols();
    h = fnv1a(h, &r, sizeof r);
    h = fnv1a(h, &c, sizeof c);
    return fnv1a(h, m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
}

inline std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

// ---------------------------------------------------------------------------
// Deterministic parallel map: results land in index-order slots, so the
// outcome is independent of thread count and scheduling.
// ---------------------------------------------------------------------------
inline int worker_count() {
    if (const char* env = std::getenv("PFENCE_WORKERS")) {
        int n = std::atoi(env);
        if (n >= 1) return n;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(std::min(hw, 8u));
}

inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
    int workers = worker_count();
    if (workers <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    std::size_t chunk = (n + static_cast<std::size_t>(workers) - 1) / static_cast<std::size_t>(workers);
    for (int w = 0; w < workers; ++w) {
        std::size_t lo = static_cast<std::size_t>(w) * chunk;
        std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &body] {
            for (std::size_t i = lo; i < hi; ++i) body(i);
        });
    }
    for (auto& t : pool) t.join();
}

inline bool all_finite(const Mat& m) { return m.allFinite(); }

}  // namespace pfence
