#include <gtest/gtest.h>

#include <memory>
#include <numbers>
#include <random>

#include "uavckm.hpp"

using namespace uavckm;

namespace {

std::shared_ptr<const World> desk_world() {
    return std::make_shared<const World>(generate_world(7, desk_profile().world));
}

CommEnv oracle_env(std::shared_ptr<const World> w, EnvConfig cfg = desk_profile().env) {
    auto pred = std::make_shared<OraclePredictor>(w, cfg.link);
    return CommEnv(w, cfg, pred);
}

} // namespace

TEST(Kinematics, StraightLines) {
    EnvConfig cfg;
    const Box fb{{0, 0, 250}, {1000, 1000, 750}};
    const auto k1 = kinematics_step({0, 0, 250}, 0.0, {0.5, 0.0, 0.0, 1.0}, cfg, fb);
    EXPECT_EQ(k1.position, (Vec3{10, 0, 250}));
    EXPECT_DOUBLE_EQ(k1.v, 10.0);
    EXPECT_FALSE(k1.clipped);

    const auto up = kinematics_step({0, 0, 250}, 0.0, {0.5, 0.0, 1.0, 1.0}, cfg, fb);
    EXPECT_NEAR(up.position.x, 0.0, 1e-12);
    EXPECT_EQ(up.position.z, 260.0);
    EXPECT_DOUBLE_EQ(up.phi, std::numbers::pi / 2.0);

    const auto west = kinematics_step({500, 500, 500}, 10.0, {0.0, 0.5, 0.0, 0.0}, cfg, fb);
    EXPECT_NEAR(west.position.x, 490.0, 1e-9);
    EXPECT_NEAR(west.position.y, 500.0, 1e-9);
}

TEST(Kinematics, ClampsSpeedPositionAndActions) {
    EnvConfig cfg;
    const Box fb{{0, 0, 250}, {1000, 1000, 750}};
    const auto fast = kinematics_step({500, 500, 500}, 50.0, {1.0, 0.0, 0.0, 1.0}, cfg, fb);
    EXPECT_EQ(fast.v, 50.0);
    EXPECT_TRUE(fast.clipped);

    const auto stop = kinematics_step({500, 500, 500}, 5.0, {-1.0, 0.0, 0.0, 1.0}, cfg, fb);
    EXPECT_EQ(stop.v, 0.0);
    EXPECT_TRUE(stop.clipped);

    const auto wall = kinematics_step({5, 5, 250}, 20.0, {0.0, 0.5, -1.0, 1.0}, cfg, fb);
    EXPECT_TRUE(fb.contains_closed(wall.position));
    EXPECT_TRUE(wall.clipped);

    const auto bad = kinematics_step({500, 500, 500}, 0.0, {2.0, 0.0, 0.0, 1.0}, cfg, fb);
    EXPECT_TRUE(bad.clipped);
    EXPECT_EQ(bad.v, 20.0);
}

TEST(Rewards, TermArithmetic) {
    EnvConfig cfg;
    EnvState before, after;
    before.users.resize(3);
    after.users.resize(3);
    for (auto& u : before.users) u.eta = 0.5;
    after.users[0].eta = 0.0;
    after.users[1].eta = 0.0;
    after.users[2].eta = 0.5;
    after.t = cfg.t_max_steps - 60;
    const auto a = reward(before, after, false, false, cfg);
    EXPECT_NEAR(a.r2, 0.144, 1e-12);
    EXPECT_EQ(a.r1, 0.0);
    EXPECT_EQ(a.r3, 0.0);

    EnvState done = after;
    done.users[2].eta = 0.0;
    done.t = cfg.t_max_steps - 110;
    EXPECT_NEAR(reward(done, done, false, true, cfg).r3, 0.55, 1e-12);
    EXPECT_EQ(reward(done, done, false, false, cfg).r3, 0.0);

    done.punishment_count = 3;
    EXPECT_NEAR(reward(done, done, true, true, cfg).r1, -3e-6, 1e-18);
    EXPECT_EQ(reward(done, done, false, true, cfg).r1, 0.0);
}

TEST(Power, ActionMapping) {
    const LinkBudgetParams link;
    EXPECT_EQ(action_power_dbm(0.0, link), kPowerOff);
    EXPECT_DOUBLE_EQ(action_power_dbm(1.0, link), 26.0);
    EXPECT_NEAR(action_power_dbm(0.5, link), 26.0 - 10.0 * std::log10(2.0), 1e-12);
    EXPECT_DOUBLE_EQ(action_power_dbm(3.0, link), 26.0);
}

TEST(Env, ObservationLayout) {
    auto w = desk_world();
    auto env = oracle_env(w);
    const auto o = env.reset(3);
    ASSERT_EQ(static_cast<int>(o.size()), env.observation_dim());
    EXPECT_EQ(env.observation_dim(), 6 + 6 * env.config().user_count);
    // Start corner, at rest.
    EXPECT_EQ(o[0], 0.0);
    EXPECT_EQ(o[1], 0.0);
    EXPECT_EQ(o[3], 0.0);
    for (int i = 0; i < env.config().user_count; ++i) EXPECT_EQ(o[6 + 6 * i + 4], 1.0);
}

TEST(Env, RandomEpisodeInvariants) {
    auto w = desk_world();
    auto env = oracle_env(w);
    const Box fb = w->flight_box();
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(-1.2, 1.2);
    int violations = 0;
    for (int ep = 0; ep < 1000; ++ep) {
        env.reset(1000 + ep);
        std::vector<double> eta(env.state().users.size(), 1.0);
        int steps = 0;
        while (!env.terminated()) {
            const auto r = env.step({u(rng), u(rng), u(rng), u(rng)});
            ++steps;
            const auto& s = env.state();
            violations += !fb.contains_closed(s.uav_pos);
            violations += s.v < 0.0 || s.v > env.config().v_max;
            for (std::size_t i = 0; i < eta.size(); ++i) {
                violations += s.users[i].eta > eta[i] || s.users[i].eta < 0.0;
                violations += r.info.rate_bps[i] < 0.0;
                eta[i] = s.users[i].eta;
            }
            for (std::size_t k = 0; k < r.observation.size(); ++k) {
                const double lo = k == 5 ? -1.0 : 0.0;
                violations += r.observation[k] < lo || r.observation[k] > 1.0;
            }
            violations += r.terminated != (r.success || s.t >= env.config().t_max_steps);
        }
        violations += steps > env.config().t_max_steps;
    }
    EXPECT_EQ(violations, 0);
}

TEST(Env, DeliveredBitsMatchIntegratedRates) {
    auto w = desk_world();
    auto env = oracle_env(w);
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int ep = 0; ep < 20; ++ep) {
        env.reset(500 + ep);
        std::vector<double> bits(env.state().users.size(), 0.0);
        while (!env.terminated()) {
            const auto r = env.step({u(rng) * 2 - 1, u(rng), u(rng) * 2 - 1, u(rng)});
            for (std::size_t i = 0; i < bits.size(); ++i)
                bits[i] += std::min(r.info.rate_bps[i] * env.config().dt, env.config().payload_bits - bits[i]);
        }
        for (std::size_t i = 0; i < bits.size(); ++i) {
            const double delivered = env.config().payload_bits * (1.0 - env.state().users[i].eta);
            EXPECT_NEAR(delivered, bits[i], 1e-6 * env.config().payload_bits);
        }
    }
}

TEST(Env, StepAfterTerminationThrows) {
    auto w = desk_world();
    EnvConfig cfg = desk_profile().env;
    cfg.t_max_steps = 2;
    auto env = oracle_env(w, cfg);
    EXPECT_THROW(env.step({}), Error);  // never reset
    env.reset(1);
    env.step({});
    EXPECT_TRUE(env.step({}).terminated);
    try {
        env.step({});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.category(), ErrorCategory::State);
    }
}

TEST(Env, NoPowerNoDelivery) {
    auto w = desk_world();
    auto env = oracle_env(w);
    env.reset(4);
    for (int t = 0; t < 10; ++t) {
        const auto r = env.step({0.0, 0.0, 0.0, 0.0});
        EXPECT_EQ(r.info.p_t_dbm, kPowerOff);
        for (double rate : r.info.rate_bps) EXPECT_EQ(rate, 0.0);
        for (double e : r.info.eta) EXPECT_EQ(e, 1.0);
    }
}

TEST(Env, HoverDeliversWithFullPower) {
    auto w = desk_world();
    auto env = oracle_env(w);
    env.reset(5);
    double total_rate = 0.0;
    for (int t = 0; t < 20 && !env.terminated(); ++t) {
        const auto r = env.step({0.0, 0.0, 0.0, 1.0});
        EXPECT_EQ(r.info.p_t_dbm, 26.0);
        for (double rate : r.info.rate_bps) total_rate += rate;
    }
    EXPECT_GT(total_rate, 0.0);
}

TEST(Env, ResetIsDeterministic) {
    auto w = desk_world();
    auto a = oracle_env(w);
    auto b = oracle_env(w);
    EXPECT_EQ(a.reset(11), b.reset(11));
    EXPECT_NE(a.reset(11), a.reset(12));
}

TEST(Env, RejectsBadSetup) {
    auto w = desk_world();
    EnvConfig cfg;
    EXPECT_THROW(CommEnv(w, cfg, nullptr), Error);
    cfg.dt = 0.0;
    EXPECT_THROW(oracle_env(w, cfg), Error);
    const std::vector<double> three{0.0, 0.0, 0.0};
    EXPECT_THROW(EnvAction::from(three), Error);
}

TEST(Predictors, OracleMatchesTruth) {
    auto w = desk_world();
    const LinkBudgetParams link;
    OraclePredictor p(w, link);
    const Vec3 uav{100, 100, 150};
    std::vector<Vec3> users;
    for (const auto& u : w->users) users.push_back(u.position);
    const auto preds = p.query(uav, users);
    ASSERT_EQ(preds.size(), users.size());
    for (std::size_t i = 0; i < users.size(); ++i) {
        EXPECT_EQ(preds[i].mean_db, true_gain(uav, users[i], *w, link).db);
        EXPECT_EQ(preds[i].interval.width(), 0.0);
    }
    LosModelPredictor los(link);
    EXPECT_EQ(los.query(uav, users).size(), users.size());
}
