#pragma once
#include <cmath>
#include <string>

#include "mobds/errors.hpp"

namespace mobds {

enum class Link { logit, gompertz };

inline std::string link_name(Link link) { return link == Link::logit ? "logit" : "gompertz"; }

inline Link parse_link(const std::string& s) {
    if (s == "logit") return Link::logit;
    if (s == "gompertz") return Link::gompertz;
    throw ConfigError("unknown link '" + s + "' (expected logit or gompertz)");
}

// Hazards are kept inside [mu_floor, 1 - mu_floor]; clamping acts on the linear
// predictor, which is equivalent and keeps all downstream formulas finite.
inline constexpr double kMuFloor = 1e-10;

namespace detail {
inline double softplus(double eta) {
    if (eta > 35.0) return eta;
    if (eta < -35.0) return std::exp(eta);
    return std::log1p(std::exp(eta));
}

// Linear-predictor bounds mapping to hazards kMuFloor and 1 - kMuFloor.
inline double eta_lo(Link link) {
    static const double logit_lo = std::log(kMuFloor) - std::log1p(-kMuFloor);
    static const double gomp_lo = std::log(-std::log1p(-kMuFloor));
    return link == Link::logit ? logit_lo : gomp_lo;
}
inline double eta_hi(Link link) {
    static const double logit_hi = std::log1p(-kMuFloor) - std::log(kMuFloor);
    static const double gomp_hi = std::log(-std::log(kMuFloor));
    return link == Link::logit ? logit_hi : gomp_hi;
}
}  // namespace detail

inline double clamp_eta(Link link, double eta) {
    double lo = detail::eta_lo(link);
    double hi = detail::eta_hi(link);
    if (eta < lo) return lo;
    if (eta > hi) return hi;
    return eta;
}

// Inverse link h: linear predictor -> hazard.
inline double link_h(Link link, double eta) {
    eta = clamp_eta(link, eta);
    if (link == Link::logit) {
        if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
        double e = std::exp(eta);
        return e / (1.0 + e);
    }
    return -std::expm1(-std::exp(eta));
}

// Link g: hazard -> linear predictor.
inline double link_g(Link link, double lambda) {
    if (lambda < kMuFloor) lambda = kMuFloor;
    if (lambda > 1.0 - kMuFloor) lambda = 1.0 - kMuFloor;
    if (link == Link::logit) return std::log(lambda) - std::log1p(-lambda);
    return std::log(-std::log1p(-lambda));
}

// h'(eta) > 0.
inline double link_hprime(Link link, double eta) {
    eta = clamp_eta(link, eta);
    if (link == Link::logit) {
        double mu = link_h(Link::logit, eta);
        return mu * (1.0 - mu);
    }
    double t = std::exp(eta);
    return t * std::exp(-t);
}

// Bernoulli log-likelihood term for one row.
inline double link_loglik_term(Link link, int y, double eta) {
    eta = clamp_eta(link, eta);
    if (link == Link::logit) return y * eta - detail::softplus(eta);
    double t = std::exp(eta);
    if (y == 0) return -t;
    return std::log(-std::expm1(-t));
}

// d/d(eta) of the row log-likelihood: h'(eta) (y - mu) / (mu (1 - mu)).
// Multiplying by the design row gives the score contribution.
inline double link_score_factor(Link link, int y, double eta) {
    eta = clamp_eta(link, eta);
    if (link == Link::logit) return y - link_h(Link::logit, eta);
    double t = std::exp(eta);
    if (y == 0) return -t;
    double mu = -std::expm1(-t);
    return t * std::exp(-t) / mu;
}

// Negative second derivative of the row log-likelihood w.r.t. eta (observed
// information weight). Strictly positive for both links and both y values.
inline double link_weight(Link link, int y, double eta) {
    eta = clamp_eta(link, eta);
    if (link == Link::logit) {
        double mu = link_h(Link::logit, eta);
        return mu * (1.0 - mu);
    }
    double t = std::exp(eta);
    if (y == 0) return t;
    double s = std::exp(-t);
    double mu = 1.0 - s;
    return t * s * (t - mu) / (mu * mu);
}

}  // namespace mobds
