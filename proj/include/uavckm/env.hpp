#pragma once

// Communication-mission MDP: a UAV base station must drain every ground user's payload
// and return to its start point within the time limit.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "uavckm/channel.hpp"
#include "uavckm/ckm.hpp"
#include "uavckm/errors.hpp"
#include "uavckm/geometry.hpp"
#include "uavckm/positioning.hpp"
#include "uavckm/scheduler.hpp"

namespace uavckm {

enum class PredictorMode { TrueOracle, Ckm, CkmPec, LosModel };

inline const char* to_string(PredictorMode m) {
    switch (m) {
    case PredictorMode::TrueOracle: return "TRUE_ORACLE";
    case PredictorMode::Ckm: return "CKM";
    case PredictorMode::CkmPec: return "CKM_PEC";
    case PredictorMode::LosModel: return "LOS_MODEL";
    }
    return "?";
}

struct EnvConfig {
    double dt = 1.0;
    int t_max_steps = 160;
    double v_max = 50.0;
    double a_max = 20.0;
    double payload_bits = 26e6;
    int user_count = 15;
    double r1 = 1e-6;
    double r2 = 0.0012;
    double r3 = 0.005;
    double cep = 0.0;
    double arrival_radius = 30.0;
    // A granted slot delivers nothing if the true received power misses the threshold.
    bool gate_rate_on_true_power = true;
    PredictorMode predictor = PredictorMode::TrueOracle;
    SchedulerConfig scheduler;
    LinkBudgetParams link;

    double t_max_seconds() const { return t_max_steps * dt; }

    void validate() const {
        if (!(dt > 0.0 && t_max_steps > 0 && v_max > 0.0 && a_max > 0.0 && payload_bits > 0.0 && user_count >= 1))
            throw Error(ErrorCategory::Config, "environment limits must be positive");
        if (!(cep >= 0.0 && arrival_radius > 0.0)) throw Error(ErrorCategory::Config, "invalid cep or arrival radius");
        scheduler.validate();
        link.validate();
    }
};

/// Normalized action as produced by the policy head.
struct EnvAction {
    double accel = 0.0;     // [-1, 1], scaled by a_max
    double heading = 0.0;   // [0, 1], scaled by 2 pi
    double elevation = 0.0; // [-1, 1], scaled by pi / 2
    double power = 0.0;     // [0, 1], linear in milliwatts up to p_max

    static EnvAction from(std::span<const double> a) {
        if (a.size() != 4) throw Error(ErrorCategory::Domain, "actions have exactly 4 components");
        return {a[0], a[1], a[2], a[3]};
    }
    /// Clamps every component into its range; returns true if anything moved.
    bool clip() {
        const EnvAction before = *this;
        accel = std::clamp(accel, -1.0, 1.0);
        heading = std::clamp(heading, 0.0, 1.0);
        elevation = std::clamp(elevation, -1.0, 1.0);
        power = std::clamp(power, 0.0, 1.0);
        return before.accel != accel || before.heading != heading || before.elevation != elevation ||
               before.power != power;
    }
};

/// Transmit power for a normalized power action: linear in mW, zero means off.
inline double action_power_dbm(double power_norm, const LinkBudgetParams& link) {
    return mw_to_dbm(std::clamp(power_norm, 0.0, 1.0) * dbm_to_mw(link.p_max_dbm));
}

struct UserState {
    Vec3 true_position;
    Vec3 reported_position; // what the positioning service delivered at reset
    int alpha = 0;
    double eta = 1.0;
    double distance_norm = 0.0;
};

struct EnvState {
    Vec3 uav_pos;
    double v = 0.0;
    double theta = 0.0;
    double phi = 0.0;
    std::vector<UserState> users;
    int t = 0;
    int punishment_count = 0;

    bool all_delivered() const {
        return std::all_of(users.begin(), users.end(), [](const UserState& u) { return u.eta <= 0.0; });
    }
};

struct KinematicsResult {
    Vec3 position;
    double v = 0.0;
    double theta = 0.0;
    double phi = 0.0;
    bool clipped = false;
};

/// Accelerate, then move one slot along the commanded direction at the new speed.
/// Speed is clamped to [0, v_max] and the position to the flight box.
inline KinematicsResult kinematics_step(Vec3 position, double v, EnvAction action, const EnvConfig& cfg,
                                        const Box& flight_box) {
    KinematicsResult r;
    r.clipped = action.clip();
    const double accel = action.accel * cfg.a_max;
    r.theta = action.heading * 2.0 * std::numbers::pi;
    r.phi = action.elevation * std::numbers::pi / 2.0;

    const double v_raw = v + accel * cfg.dt;
    r.v = std::clamp(v_raw, 0.0, cfg.v_max);
    r.clipped = r.clipped || r.v != v_raw;

    const Vec3 dir{std::cos(r.theta) * std::cos(r.phi), std::sin(r.theta) * std::cos(r.phi), std::sin(r.phi)};
    const Vec3 raw = position + dir * (r.v * cfg.dt);
    r.position = flight_box.clamp(raw);
    r.clipped = r.clipped || !(r.position == raw);
    return r;
}

struct RewardTerms {
    double r1 = 0.0;
    double r2 = 0.0;
    double r3 = 0.0;
    double total() const { return r1 + r2 + r3; }
};

/// Boundary penalty (cumulative punishment count, on offending steps), time-weighted bonus per
/// newly completed user, and time-weighted mission bonus once everything is delivered and the
/// UAV is back home. `after.t` is the slot index reached by the step.
inline RewardTerms reward(const EnvState& before, const EnvState& after, bool clipped, bool returned,
                          const EnvConfig& cfg) {
    RewardTerms r;
    const double remaining = (cfg.t_max_steps - after.t) * cfg.dt;
    if (clipped) r.r1 = -cfg.r1 * after.punishment_count;
    int newly_done = 0;
    for (std::size_t i = 0; i < after.users.size(); ++i) {
        if (before.users[i].eta > 0.0 && after.users[i].eta <= 0.0) ++newly_done;
    }
    r.r2 = cfg.r2 * newly_done * remaining;
    if (after.all_delivered() && returned) r.r3 = cfg.r3 * remaining;
    return r;
}

// ---- channel predictors -----------------------------------------------------

struct GainPrediction {
    double mean_db = 0.0;
    PredictionInterval interval;
};

/// Estimates the channel to each (reported) user position. Instances are immutable and
/// shareable across environments.
class ChannelPredictor {
public:
    virtual ~ChannelPredictor() = default;
    virtual std::vector<GainPrediction> query(Vec3 uav, std::span<const Vec3> users) const = 0;
    virtual PredictorMode mode() const = 0;
};

namespace detail {

/// Moves `gu` away from `uav` along the joining line until the 1 m guard holds.
inline Vec3 respect_min_distance(Vec3 uav, Vec3 gu) {
    const double d = distance(uav, gu);
    if (d >= kMinLinkDistance) return gu;
    if (d == 0.0) return gu - Vec3{0.0, 0.0, kMinLinkDistance};
    return uav + (gu - uav) * (kMinLinkDistance / d);
}

inline GainPrediction point_prediction(double db) { return {db, {db, db, db}}; }

} // namespace detail

class OraclePredictor final : public ChannelPredictor {
public:
    OraclePredictor(std::shared_ptr<const World> world, LinkBudgetParams link)
        : world_(std::move(world)), link_(link) {}

    std::vector<GainPrediction> query(Vec3 uav, std::span<const Vec3> users) const override {
        std::vector<GainPrediction> out;
        out.reserve(users.size());
        for (Vec3 gu : users)
            out.push_back(detail::point_prediction(true_gain(uav, detail::respect_min_distance(uav, gu), *world_, link_).db));
        return out;
    }
    PredictorMode mode() const override { return PredictorMode::TrueOracle; }

private:
    std::shared_ptr<const World> world_;
    LinkBudgetParams link_;
};

class LosModelPredictor final : public ChannelPredictor {
public:
    explicit LosModelPredictor(LinkBudgetParams link) : link_(link) {}

    std::vector<GainPrediction> query(Vec3 uav, std::span<const Vec3> users) const override {
        std::vector<GainPrediction> out;
        out.reserve(users.size());
        for (Vec3 gu : users)
            out.push_back(detail::point_prediction(
                expected_gain_los_model(uav, detail::respect_min_distance(uav, gu), link_).db));
        return out;
    }
    PredictorMode mode() const override { return PredictorMode::LosModel; }

private:
    LinkBudgetParams link_;
};

/// Channel map lookup. The noise flag is fixed per predictor: 1 for the error-aware
/// selection path, 0 for the ordinary map.
class CkmPredictor final : public ChannelPredictor {
public:
    CkmPredictor(std::shared_ptr<const CkmModel> model, std::vector<double> env_features, int flag)
        : model_(std::move(model)), env_(std::move(env_features)), flag_(flag) {
        if (model_->hyper.use_env_features && static_cast<int>(7 + env_.size()) != model_->norm.raw_dim)
            throw Error(ErrorCategory::Config, "environment feature length does not match the channel map");
    }

    std::vector<GainPrediction> query(Vec3 uav, std::span<const Vec3> users) const override {
        std::vector<GainPrediction> out;
        if (users.empty()) return out;
        nn::Matrix x(static_cast<Eigen::Index>(model_->norm.kept.size()), static_cast<Eigen::Index>(users.size()));
        for (std::size_t j = 0; j < users.size(); ++j) {
            x.col(static_cast<Eigen::Index>(j)) =
                model_->norm.normalize(raw_input(uav, users[j], flag_, env_, model_->hyper.use_env_features));
        }
        const nn::Matrix preds = member_predictions(*model_, x);
        out.reserve(users.size());
        for (Eigen::Index j = 0; j < preds.cols(); ++j) {
            std::vector<double> m(preds.col(j).data(), preds.col(j).data() + preds.rows());
            GainPrediction g;
            g.mean_db = preds.col(j).mean();
            g.interval = interval_from_members(m);
            out.push_back(g);
        }
        return out;
    }
    PredictorMode mode() const override { return flag_ ? PredictorMode::CkmPec : PredictorMode::Ckm; }
    const CkmModel& model() const { return *model_; }

private:
    std::shared_ptr<const CkmModel> model_;
    std::vector<double> env_;
    int flag_;
};

// ---- association and transmission ------------------------------------------

struct LinkDecision {
    std::vector<int> alpha;
    std::vector<double> predicted_db;  // selection-phase estimate (NaN for inactive users)
    std::vector<double> rate_bps;
};

/// Selection phase: each user with payload left is looked up at a freshly perturbed position.
template <class Rng>
std::vector<GainPrediction> selection_predictions(Vec3 uav, std::span<const UserState> users,
                                                  const ChannelPredictor& predictor, const World& world,
                                                  const CepModel& cep, Rng& rng) {
    std::vector<Vec3> noisy;
    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < users.size(); ++i) {
        if (users[i].eta <= 0.0) continue;
        active.push_back(i);
        noisy.push_back(world.bounds.clamp(perturb(users[i].true_position, cep, rng)));
    }
    const auto preds = predictor.query(uav, noisy);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    std::vector<GainPrediction> out(users.size(), GainPrediction{nan, {nan, nan, nan}});
    for (std::size_t k = 0; k < active.size(); ++k) out[active[k]] = preds[k];
    return out;
}

/// Rate phase on the physical channel at the true user positions.
inline std::vector<double> transmit(Vec3 uav, std::span<const UserState> users, std::span<const int> alpha,
                                    double p_t_dbm, const World& world, const EnvConfig& cfg) {
    std::vector<double> rates(users.size(), 0.0);
    for (std::size_t i = 0; i < users.size(); ++i) {
        if (!alpha[i]) continue;
        const ChannelGain g = true_gain(uav, detail::respect_min_distance(uav, users[i].true_position), world, cfg.link);
        if (cfg.gate_rate_on_true_power && received_dbm(g, p_t_dbm) < cfg.link.p_min_dbm) continue;
        rates[i] = rate_bps(g, p_t_dbm, cfg.link);
    }
    return rates;
}

/// alpha_i = 1 iff the user still needs data and the predicted received power meets p_min.
template <class Rng>
LinkDecision associate_and_transmit(Vec3 uav, std::span<const UserState> users, double p_t_dbm,
                                    const ChannelPredictor& predictor, const World& world, const EnvConfig& cfg,
                                    Rng& rng) {
    const auto preds = selection_predictions(uav, users, predictor, world, CepModel(cfg.cep), rng);
    LinkDecision d;
    d.alpha.assign(users.size(), 0);
    d.predicted_db.resize(users.size());
    for (std::size_t i = 0; i < users.size(); ++i) {
        d.predicted_db[i] = preds[i].mean_db;
        d.alpha[i] = users[i].eta > 0.0 && p_t_dbm != kPowerOff &&
                     received_dbm({preds[i].mean_db}, p_t_dbm) >= cfg.link.p_min_dbm;
    }
    d.rate_bps = transmit(uav, users, d.alpha, p_t_dbm, world, cfg);
    return d;
}

// ---- environment ------------------------------------------------------------

/// One logged slot.
struct TrajectoryRow {
    int t = 0;
    Vec3 position;
    double v = 0.0;
    double theta = 0.0;
    double phi = 0.0;
    double p_t_dbm = kPowerOff;
    std::vector<int> alpha;
    std::vector<double> eta;
    std::vector<double> rate_bps;
    RewardTerms terms;
    bool clipped = false;
};

struct StepResult {
    std::vector<double> observation;
    double reward = 0.0;
    bool terminated = false;
    bool success = false;
    TrajectoryRow info;
};

class CommEnv {
public:
    static constexpr int kActionDim = 4;

    CommEnv(std::shared_ptr<const World> world, EnvConfig cfg, std::shared_ptr<const ChannelPredictor> predictor)
        : world_(std::move(world)), cfg_(cfg), predictor_(std::move(predictor)) {
        cfg_.validate();
        if (!world_ || !predictor_) throw Error(ErrorCategory::Config, "environment needs a world and a predictor");
    }

    int observation_dim() const { return 6 + 6 * cfg_.user_count; }
    const EnvConfig& config() const { return cfg_; }
    const World& world() const { return *world_; }
    const EnvState& state() const { return state_; }
    bool terminated() const { return done_; }
    const ChannelPredictor& predictor() const { return *predictor_; }

    /// Swaps the channel predictor between episodes (e.g. after a map update).
    void set_predictor(std::shared_ptr<const ChannelPredictor> p) { predictor_ = std::move(p); }

    std::vector<double> reset(std::uint64_t seed) {
        rng_.seed(seed);
        const auto users = sample_users(*world_, cfg_.user_count, cfg_.payload_bits, rng_);
        state_ = EnvState{};
        state_.uav_pos = world_->uav_start;
        const CepModel cep(cfg_.cep);
        for (const auto& u : users) {
            UserState s;
            s.true_position = u.position;
            s.reported_position = world_->bounds.clamp(perturb(u.position, cep, rng_));
            state_.users.push_back(s);
        }
        refresh_distances();
        done_ = false;
        return observation();
    }

    StepResult step(const EnvAction& action) {
        if (done_) throw Error(ErrorCategory::State, "step called on a terminated episode");
        const EnvState before = state_;

        const auto kin = kinematics_step(state_.uav_pos, state_.v, action, cfg_, world_->flight_box());
        state_.uav_pos = kin.position;
        state_.v = kin.v;
        state_.theta = kin.theta;
        state_.phi = kin.phi;
        state_.t += 1;
        if (kin.clipped) state_.punishment_count += 1;

        EnvAction a = action;
        a.clip();
        double p_t = action_power_dbm(a.power, cfg_.link);
        LinkDecision link;
        if (cfg_.scheduler.enabled) {
            const auto preds = selection_predictions(state_.uav_pos, state_.users, *predictor_, *world_,
                                                     CepModel(cfg_.cep), rng_);
            link.alpha.assign(state_.users.size(), 0);
            link.predicted_db.resize(state_.users.size());
            bool any = false;
            for (std::size_t i = 0; i < state_.users.size(); ++i) {
                link.predicted_db[i] = preds[i].interval.median;
                if (state_.users[i].eta <= 0.0) continue;
                if (schedule_power(preds[i].interval, cfg_.scheduler, cfg_.link) != kPowerOff) {
                    link.alpha[i] = 1;
                    any = true;
                }
            }
            p_t = any ? cfg_.link.p_max_dbm : kPowerOff;
            link.rate_bps = transmit(state_.uav_pos, state_.users, link.alpha, p_t, *world_, cfg_);
        } else {
            link = associate_and_transmit(state_.uav_pos, state_.users, p_t, *predictor_, *world_, cfg_, rng_);
        }

        for (std::size_t i = 0; i < state_.users.size(); ++i) {
            auto& u = state_.users[i];
            u.alpha = link.alpha[i];
            if (u.eta > 0.0) u.eta = std::max(0.0, u.eta - link.rate_bps[i] * cfg_.dt / cfg_.payload_bits);
        }
        refresh_distances();

        const bool returned = distance(state_.uav_pos, world_->uav_start) <= cfg_.arrival_radius;
        const bool success = state_.all_delivered() && returned;
        const RewardTerms terms = reward(before, state_, kin.clipped, returned, cfg_);
        done_ = success || state_.t >= cfg_.t_max_steps;

        StepResult r;
        r.reward = terms.total();
        r.terminated = done_;
        r.success = success;
        r.info.t = state_.t;
        r.info.position = state_.uav_pos;
        r.info.v = state_.v;
        r.info.theta = state_.theta;
        r.info.phi = state_.phi;
        r.info.p_t_dbm = p_t;
        r.info.alpha = link.alpha;
        r.info.rate_bps = link.rate_bps;
        for (const auto& u : state_.users) r.info.eta.push_back(u.eta);
        r.info.terms = terms;
        r.info.clipped = kin.clipped;
        r.observation = observation();
        return r;
    }

    /// [uav xyz, v, theta, phi] then per user [reported xyz, alpha, eta, distance], all scaled
    /// into [0, 1] except phi in [-1, 1].
    std::vector<double> observation() const {
        std::vector<double> o;
        o.reserve(static_cast<std::size_t>(observation_dim()));
        const Vec3 lo = world_->bounds.min_corner;
        const Vec3 ext = world_->bounds.extent();
        auto push_pos = [&](Vec3 p) {
            for (int a = 0; a < 3; ++a) o.push_back(std::clamp((p[a] - lo[a]) / ext[a], 0.0, 1.0));
        };
        push_pos(state_.uav_pos);
        o.push_back(state_.v / cfg_.v_max);
        o.push_back(state_.theta / (2.0 * std::numbers::pi));
        o.push_back(state_.phi / (std::numbers::pi / 2.0));
        for (const auto& u : state_.users) {
            push_pos(u.reported_position);
            o.push_back(static_cast<double>(u.alpha));
            o.push_back(u.eta);
            o.push_back(u.distance_norm);
        }
        return o;
    }

private:
    void refresh_distances() {
        const double diag = world_->diagonal();
        for (auto& u : state_.users) u.distance_norm = std::min(1.0, distance(state_.uav_pos, u.true_position) / diag);
    }

    std::shared_ptr<const World> world_;
    EnvConfig cfg_;
    std::shared_ptr<const ChannelPredictor> predictor_;
    EnvState state_;
    std::mt19937_64 rng_;
    bool done_ = true;
};

} // namespace uavckm
