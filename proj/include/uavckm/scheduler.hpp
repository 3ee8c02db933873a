#pragma once

#include "uavckm/channel.hpp"
#include "uavckm/ckm.hpp"
#include "uavckm/errors.hpp"

namespace uavckm {

enum class ThresholdForm {
    LinkBudget, // p_max + median >= p_min
    Literal,    // median >= p_max - p_min; never fires for negative gains
};

struct SchedulerConfig {
    bool enabled = false;
    double width_threshold_db = 6.0;
    ThresholdForm threshold = ThresholdForm::LinkBudget;

    void validate() const {
        if (!(width_threshold_db > 0.0)) throw Error(ErrorCategory::Config, "scheduler width threshold must be positive");
    }
};

/// Bang-bang power choice from an ensemble interval: full power when the median prediction
/// closes the link and the members agree within the width threshold, radio off otherwise.
inline double schedule_power(const PredictionInterval& interval, const SchedulerConfig& cfg,
                             const LinkBudgetParams& params) {
    const bool sufficient = cfg.threshold == ThresholdForm::LinkBudget
                                ? params.p_max_dbm + interval.median >= params.p_min_dbm
                                : interval.median >= params.p_max_dbm - params.p_min_dbm;
    const bool credible = interval.width() <= cfg.width_threshold_db;
    return sufficient && credible ? params.p_max_dbm : kPowerOff;
}

} // namespace uavckm
