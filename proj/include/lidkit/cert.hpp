#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "lidkit/error.hpp"
#include "lidkit/interval.hpp"
#include "lidkit/nn.hpp"

namespace lidkit {

// 64-bit FNV-1a content hash; used to fingerprint datasets and boxes.
inline std::uint64_t fnv1a(std::span<const unsigned char> bytes,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fingerprint(std::span<const double> values,
                                 std::uint64_t h = 0xcbf29ce484222325ULL) {
    return fnv1a({reinterpret_cast<const unsigned char*>(values.data()),
                  values.size() * sizeof(double)},
                 h);
}

inline std::uint64_t fingerprint(const LabeledBatch& batch) {
    std::uint64_t h = fingerprint(batch.inputs);
    return fnv1a({reinterpret_cast<const unsigned char*>(batch.labels.data()),
                  batch.labels.size() * sizeof(int)},
                 h);
}

inline std::uint64_t fingerprint(const LidBox& box) {
    std::uint64_t h = fingerprint(box.lower);
    h = fingerprint(box.upper, h);
    return fingerprint(box.nominal, h);
}

enum class MarginMethod { Hoeffding, Chebyshev, Clt, None };

inline std::string to_string(MarginMethod m) {
    switch (m) {
        case MarginMethod::Hoeffding: return "hoeffding";
        case MarginMethod::Chebyshev: return "chebyshev";
        case MarginMethod::Clt: return "clt";
        case MarginMethod::None: return "none";
    }
    return "none";
}

inline void check_beta(double beta) {
    if (!(beta > 0.0 && beta < 1.0)) throw ConfigError("confidence beta must lie in (0,1)");
}

// sqrt((b-a)^2 log(1/beta) / (2N))
inline double hoeffding_margin(std::size_t n, double beta, double range_width) {
    if (n < 1) throw ConfigError("hoeffding_margin: N must be >= 1");
    check_beta(beta);
    if (range_width < 0.0) throw ConfigError("hoeffding_margin: negative range width");
    return std::sqrt(range_width * range_width * std::log(1.0 / beta) /
                     (2.0 * static_cast<double>(n)));
}

// sqrt(sigma^2 / (N beta))
inline double chebyshev_margin(std::size_t n, double beta, double sigma_sq) {
    if (n < 1) throw ConfigError("chebyshev_margin: N must be >= 1");
    check_beta(beta);
    if (sigma_sq < 0.0) throw ConfigError("chebyshev_margin: negative variance");
    return std::sqrt(sigma_sq / (static_cast<double>(n) * beta));
}

// Inverse standard-normal CDF (Acklam's rational approximation).
inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw ConfigError("normal_quantile: p must lie in (0,1)");
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425, phigh = 1.0 - plow;
    double q, r;
    if (p < plow) {
        q = std::sqrt(-2.0 * std::log(p));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    if (p > phigh) {
        q = std::sqrt(-2.0 * std::log(1.0 - p));
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    q = p - 0.5;
    r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

// z_{1-beta} * sigma_hat / sqrt(N); asymptotic only.
inline double clt_margin(std::size_t n, double beta, double sample_std) {
    if (n < 2) throw ConfigError("clt_margin: N must be >= 2");
    check_beta(beta);
    if (sample_std < 0.0) throw ConfigError("clt_margin: negative std");
    if (sample_std == 0.0) return 0.0;
    return normal_quantile(1.0 - beta) * sample_std / std::sqrt(static_cast<double>(n));
}

struct Certificate {
    std::string spec;              // spec kind tag
    double certified_bound = 0.0;  // raw bound plus finite-sample margin
    double raw_bound = 0.0;        // IBP (or point) bound before margin
    double delta = 0.0;
    double confidence_beta = 0.0;
    std::size_t n = 0;
    MarginMethod method = MarginMethod::None;
    bool asymptotic = false;     // true only for CLT margins
    bool probabilistic = true;   // false when method == None
    std::uint64_t eval_fingerprint = 0;
    std::uint64_t box_fingerprint = 0;
};

struct Rejection {
    double shortfall = 0.0;  // certified_bound - delta (> 0)
    Certificate attempted;
};

using CertifyResult = std::variant<Certificate, Rejection>;

inline bool issued(const CertifyResult& r) { return std::holds_alternative<Certificate>(r); }

struct MarginParams {
    double range_width = 1.0;                // for Hoeffding and default Chebyshev variance
    std::optional<double> sigma_sq;          // Chebyshev; defaults to Popoviciu worst case
    std::optional<double> sample_std;        // CLT
};

struct Fingerprints {
    std::uint64_t evaluation_set = 0;
    std::uint64_t box = 0;
    std::vector<std::uint64_t> optimization_batches;  // held-out discipline
};

// Point evaluation at a ParamVector or the IBP bound for a box.
inline double empirical_spec(const SpecKind& kind, const NetworkSpec& net, const ParamVector& theta,
                             const LabeledBatch& data) {
    return spec_point(kind, net, theta, data);
}
inline double empirical_spec(const SpecKind& kind, const NetworkSpec& net, const LidBox& box,
                             const LabeledBatch& data) {
    return spec_bound(kind, net, box, data);
}

// Finite-sample margin for a given method, with the same defaults
// issue_certificate applies.
inline double margin_for(MarginMethod method, std::size_t n, double beta,
                         const MarginParams& params = {}) {
    check_beta(beta);
    switch (method) {
        case MarginMethod::Hoeffding:
            return hoeffding_margin(n, beta, params.range_width);
        case MarginMethod::Chebyshev: {
            double w = params.range_width;
            return chebyshev_margin(n, beta, params.sigma_sq.value_or(w * w / 4.0));
        }
        case MarginMethod::Clt:
            return clt_margin(n, beta, params.sample_std.value_or(params.range_width / 2.0));
        case MarginMethod::None:
            return 0.0;
    }
    return 0.0;
}

inline CertifyResult issue_certificate(const std::string& spec, double raw_bound,
                                       MarginMethod method, double delta, std::size_t n,
                                       double beta, const Fingerprints& fp,
                                       const MarginParams& params = {}) {
    check_beta(beta);
    for (std::uint64_t h : fp.optimization_batches)
        if (h == fp.evaluation_set)
            throw HeldOutViolation("evaluation set matches an optimization batch fingerprint");
    double margin = margin_for(method, n, beta, params);
    bool asymptotic = method == MarginMethod::Clt;
    Certificate cert;
    cert.spec = spec;
    cert.raw_bound = raw_bound;
    cert.certified_bound = raw_bound + margin;
    cert.delta = delta;
    cert.confidence_beta = beta;
    cert.n = n;
    cert.method = method;
    cert.asymptotic = asymptotic;
    cert.probabilistic = method != MarginMethod::None;
    cert.eval_fingerprint = fp.evaluation_set;
    cert.box_fingerprint = fp.box;
    if (cert.certified_bound <= delta) return cert;
    return Rejection{cert.certified_bound - delta, cert};
}

}  // namespace lidkit
