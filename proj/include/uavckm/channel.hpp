#pragma once

#include <cmath>
#include <limits>
#include <numbers>

#include "uavckm/errors.hpp"
#include "uavckm/geometry.hpp"

namespace uavckm {

/// Channel gain in dB. Negative for attenuation: received_dBm = transmit_dBm + db.
struct ChannelGain {
    double db = 0.0;
    friend constexpr auto operator<=>(ChannelGain, ChannelGain) = default;
};

struct LinkBudgetParams {
    double carrier_hz = 2e9;
    double light_speed = 299792458.0;
    double eps_los_db = 1.0;
    double eps_nlos_db = 20.0;
    double noise_dbm = -104.0;
    double p_max_dbm = 26.0;
    double p_min_dbm = -70.0;
    double bandwidth_hz = 1e6;
    // Sigmoid LoS-probability constants for the analytic baseline.
    double los_a = 9.61;
    double los_b = 0.16;

    void validate() const {
        if (!(eps_nlos_db > eps_los_db && eps_los_db >= 0.0))
            throw Error(ErrorCategory::Config, "require eps_nlos > eps_los >= 0");
        if (!(carrier_hz > 0.0 && light_speed > 0.0 && bandwidth_hz > 0.0))
            throw Error(ErrorCategory::Config, "carrier, light speed and bandwidth must be positive");
    }
};

/// dBm value meaning "radio off".
inline constexpr double kPowerOff = -std::numeric_limits<double>::infinity();

inline double dbm_to_mw(double dbm) { return std::pow(10.0, dbm / 10.0); }
inline double mw_to_dbm(double mw) { return mw > 0.0 ? 10.0 * std::log10(mw) : kPowerOff; }

inline constexpr double kMinLinkDistance = 1.0;

/// 20 log10(4 pi f d / c), in dB.
inline double free_space_loss_db(double d, const LinkBudgetParams& p) {
    return 20.0 * std::log10(4.0 * std::numbers::pi * p.carrier_hz * d / p.light_speed);
}

inline void check_link_distance(double d) {
    if (!(d >= kMinLinkDistance))
        throw Error(ErrorCategory::Domain, "link distance below 1 m");
}

inline ChannelGain los_gain(double d, const LinkBudgetParams& p) {
    return {-(free_space_loss_db(d, p) + p.eps_los_db)};
}

inline ChannelGain nlos_gain(double d, const LinkBudgetParams& p) {
    return {-(free_space_loss_db(d, p) + p.eps_nlos_db)};
}

/// Ground-truth gain: free-space loss plus LoS or NLoS excess, decided by building occlusion.
inline ChannelGain true_gain(Vec3 uav, Vec3 gu, const World& world, const LinkBudgetParams& p) {
    const double d = distance(uav, gu);
    check_link_distance(d);
    return segment_blocked(uav, gu, world) ? nlos_gain(d, p) : los_gain(d, p);
}

/// Sigmoid LoS probability of the elevation angle (radians), 1 / (1 + a exp(-b (angle - a))).
/// The offset reuses the scale constant `a`, as in the baseline it reproduces.
inline double los_probability(Vec3 uav, Vec3 gu, double a, double b) {
    const double h = uav.z - gu.z;
    const double r = std::hypot(uav.x - gu.x, uav.y - gu.y);
    const double elevation = r > 0.0 ? std::atan(h / r) : (h >= 0.0 ? std::numbers::pi / 2 : -std::numbers::pi / 2);
    return 1.0 / (1.0 + a * std::exp(-b * (elevation - a)));
}

/// Expected gain under the LoS-probability model: -(P L_los + (1 - P) L_nlos).
inline ChannelGain expected_gain_los_model(Vec3 uav, Vec3 gu, const LinkBudgetParams& p) {
    const double d = distance(uav, gu);
    check_link_distance(d);
    const double plos = los_probability(uav, gu, p.los_a, p.los_b);
    const double fs = free_space_loss_db(d, p);
    return {-(plos * (fs + p.eps_los_db) + (1.0 - plos) * (fs + p.eps_nlos_db))};
}

inline double received_dbm(ChannelGain g, double p_t_dbm) { return p_t_dbm + g.db; }

/// Shannon rate B log2(1 + SNR) in bits/s. Radio off gives zero.
inline double rate_bps(ChannelGain g, double p_t_dbm, const LinkBudgetParams& p) {
    if (p_t_dbm == kPowerOff) return 0.0;
    const double snr = std::pow(10.0, (received_dbm(g, p_t_dbm) - p.noise_dbm) / 10.0);
    return p.bandwidth_hz * std::log2(1.0 + snr);
}

} // namespace uavckm
