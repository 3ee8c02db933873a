#pragma once

#include <random>

#include "uavckm/errors.hpp"
#include "uavckm/geometry.hpp"

namespace uavckm {

/// Positioning error parameterized by circular error probable. Each axis is Gaussian
/// with sigma = CEP / 0.6745, so the per-axis median absolute error equals the CEP.
struct CepModel {
    static constexpr double kQuantile = 0.6745;

    double cep = 0.0;

    CepModel() = default;
    explicit CepModel(double cep_m) : cep(cep_m) {
        if (!(cep_m >= 0.0)) throw Error(ErrorCategory::Config, "CEP must be non-negative");
    }

    double sigma() const { return cep / kQuantile; }
};

/// Adds i.i.d. Gaussian error to each axis. No clamping; callers bound the result if needed.
template <class Rng>
Vec3 perturb(Vec3 pos, const CepModel& model, Rng& rng) {
    if (model.cep == 0.0) return pos;
    std::normal_distribution<double> n(0.0, model.sigma());
    const double dx = n(rng);
    const double dy = n(rng);
    const double dz = n(rng);
    return {pos.x + dx, pos.y + dy, pos.z + dz};
}

} // namespace uavckm
