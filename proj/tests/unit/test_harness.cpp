#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "uavckm.hpp"

using namespace uavckm;

namespace {

std::string tmp_dir(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p.string();
}

/// A policy with non-trivial weights so episodes actually move.
PolicyNet busy_policy(int obs_dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    PolicyNet p(obs_dim, 16, rng);
    std::normal_distribution<double> n(0.0, 0.8);
    for (auto& ref : p.params()) {
        for (Eigen::Index i = 0; i < ref.value->size(); ++i) ref.value->data()[i] = n(rng);
    }
    return p;
}

struct Fixture : ::testing::Test {
    ExperimentConfig c = desk_profile();
    std::shared_ptr<const World> world = std::make_shared<const World>(build_world(c));
    int obs_dim = 6 + 6 * c.env.user_count;
};

std::shared_ptr<const CkmModel> tiny_map(const World& w, const ExperimentConfig& c) {
    std::mt19937_64 rng(3);
    const auto rows = collect_dataset(w, c.env.link, CepModel(5.0), 800, rng);
    CkmHyper h = c.ckm;
    h.epochs = 3;
    h.ensemble = 3;
    h.width = 16;
    h.blocks = 1;
    return std::make_shared<const CkmModel>(train(rows, h));
}

} // namespace

TEST(Config, RoundTripAndPatch) {
    const auto desk = desk_profile();
    const nlohmann::json j = desk;
    EXPECT_EQ(nlohmann::json(j.get<ExperimentConfig>()), j);

    const auto patched = config_from_json({{"ppo", {{"lr", 0.01}}}, {"cep", 10.0}, {"scheme", "LOS_PPO"}});
    EXPECT_EQ(patched.ppo.lr, 0.01);
    EXPECT_EQ(patched.ppo.hidden, desk.ppo.hidden);
    EXPECT_EQ(patched.cep, 10.0);
    EXPECT_EQ(patched.scheme, Scheme::LosPpo);

    const auto full = config_from_json({{"profile", "full"}});
    EXPECT_EQ(full.profile, "full");
    EXPECT_EQ(full.eval_episodes, 500);
    EXPECT_EQ(full.ppo.hidden, 256);
}

TEST(Config, BadInputIsAConfigError) {
    for (const nlohmann::json& bad : {nlohmann::json{{"profile", "nope"}}, nlohmann::json{{"ppo", {{"lr", "fast"}}}},
                                      nlohmann::json{{"scheme", "MAGIC"}}}) {
        try {
            config_from_json(bad);
            ADD_FAILURE() << bad.dump();
        } catch (const Error& e) {
            EXPECT_EQ(e.category(), ErrorCategory::Config) << bad.dump();
        }
    }
    try {
        load_config("/nonexistent/config.json");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.category(), ErrorCategory::Io);
    }
}

TEST(Schemes, WiringMatrix) {
    EXPECT_EQ(wiring(Scheme::PecPpo).predictor, PredictorMode::CkmPec);
    EXPECT_TRUE(wiring(Scheme::PecPpo).scheduler);
    EXPECT_TRUE(wiring(Scheme::PecPpo).online_update);
    EXPECT_EQ(wiring(Scheme::CkmPpo).predictor, PredictorMode::Ckm);
    EXPECT_EQ(wiring(Scheme::CkmPpo).map, MapKind::Ordinary);
    EXPECT_FALSE(wiring(Scheme::CkmPpo).scheduler);
    EXPECT_EQ(wiring(Scheme::LosPpo).map, MapKind::None);
    EXPECT_EQ(wiring(Scheme::OsPpo).map, MapKind::Robust);
    EXPECT_FALSE(wiring(Scheme::OsPpo).scheduler);
    EXPECT_FALSE(wiring(Scheme::OsPpo).online_update);
    for (auto s : {Scheme::PecPpo, Scheme::CkmPpo, Scheme::LosPpo, Scheme::OsPpo, Scheme::OraclePpo})
        EXPECT_EQ(scheme_from_string(to_string(s)), s);
    EXPECT_THROW(scheme_from_string("PPO"), Error);
}

TEST_F(Fixture, MapSchemesNeedAMap) {
    EXPECT_THROW(make_predictor(Scheme::PecPpo, world, c, nullptr), Error);
    EXPECT_THROW(make_predictor(Scheme::CkmPpo, world, c, nullptr), Error);
    EXPECT_EQ(make_predictor(Scheme::LosPpo, world, c, nullptr)->mode(), PredictorMode::LosModel);
    EXPECT_EQ(make_predictor(Scheme::OraclePpo, world, c, nullptr)->mode(), PredictorMode::TrueOracle);
}

TEST_F(Fixture, DamageRemovesOnlyTheTallest) {
    const World d = damage_tallest(*world, 0.25);
    ASSERT_EQ(d.buildings.size(), world->buildings.size() - 3);
    double kept_max = 0.0;
    for (const auto& b : d.buildings) kept_max = std::max(kept_max, b.max_corner.z);
    int removed = 0;
    for (const auto& b : world->buildings) {
        const bool kept = std::any_of(d.buildings.begin(), d.buildings.end(),
                                      [&](const Building& k) { return k.min_corner == b.min_corner && k.max_corner == b.max_corner; });
        if (!kept) {
            ++removed;
            EXPECT_GE(b.max_corner.z, kept_max);
        }
    }
    EXPECT_EQ(removed, 3);
    EXPECT_EQ(d.users.size(), world->users.size());
    EXPECT_EQ(damage_tallest(*world, 0.0).buildings.size(), world->buildings.size());
}

TEST_F(Fixture, LosSchemeRunsWithoutAMap) {
    const auto policy = busy_policy(obs_dim, 1);
    const auto rep = evaluate_scheme(c, Scheme::LosPpo, world, nullptr, policy, 5.0, 3);
    EXPECT_EQ(rep.episodes.size(), 3u);
}

TEST_F(Fixture, SingleEpisodeReportEqualsItsRow) {
    const auto policy = busy_policy(obs_dim, 2);
    const auto rep = evaluate_scheme(c, Scheme::OraclePpo, world, nullptr, policy, 0.0, 1);
    ASSERT_EQ(rep.episodes.size(), 1u);
    const auto& e = rep.episodes[0];
    EXPECT_EQ(rep.mean_completion_time, e.completion_time);
    EXPECT_EQ(rep.mean_return, e.episode_return);
    EXPECT_EQ(rep.mean_energy_mj, e.energy_mj);
    EXPECT_EQ(rep.success_rate, e.success ? 1.0 : 0.0);
    EXPECT_EQ(rep.completion_time_stderr, 0.0);
    EXPECT_THROW(evaluate_scheme(c, Scheme::OraclePpo, world, nullptr, policy, 0.0, 0), Error);
}

TEST_F(Fixture, EvaluationIsDeterministicAndReplayable) {
    const auto policy = busy_policy(obs_dim, 3);
    const auto a = evaluate_scheme(c, Scheme::OraclePpo, world, nullptr, policy, 5.0, 4, true);
    const auto b = evaluate_scheme(c, Scheme::OraclePpo, world, nullptr, policy, 5.0, 4, true);
    CommEnv env(world, env_config_for(c, Scheme::OraclePpo, 5.0), make_predictor(Scheme::OraclePpo, world, c, nullptr));
    for (std::size_t i = 0; i < a.episodes.size(); ++i) {
        EXPECT_EQ(a.episodes[i].episode_return, b.episodes[i].episode_return);
        EXPECT_EQ(a.episodes[i].actions, b.episodes[i].actions);
        const auto again = replay_episode(env, a.episodes[i].seed, a.episodes[i].actions);
        EXPECT_EQ(again.episode_return, a.episodes[i].episode_return);
        EXPECT_EQ(again.completion_time, a.episodes[i].completion_time);
    }
}

TEST_F(Fixture, SchedulerPowerIsTwoValued) {
    const auto map = tiny_map(*world, c);
    const auto policy = busy_policy(obs_dim, 4);
    const auto rep = evaluate_scheme(c, Scheme::PecPpo, world, map, policy, 5.0, 3, true);
    for (const auto& e : rep.episodes) {
        for (const auto& r : e.rows) EXPECT_TRUE(r.p_t_dbm == kPowerOff || r.p_t_dbm == c.env.link.p_max_dbm);
    }
    const auto off = evaluate_scheme(c, Scheme::PecPpo, world, map, policy, 5.0, 1, true, false);
    bool any_between = false;
    for (const auto& r : off.episodes[0].rows) any_between |= r.p_t_dbm != kPowerOff && r.p_t_dbm != c.env.link.p_max_dbm;
    EXPECT_TRUE(any_between);
}

TEST_F(Fixture, CsvOutputsParseBack) {
    const auto policy = busy_policy(obs_dim, 5);
    const auto rep = evaluate_scheme(c, Scheme::OraclePpo, world, nullptr, policy, 5.0, 3, true);
    const auto dir = tmp_dir("uavckm_csv");
    emit_plot_data(rep, dir, "oracle");
    const auto* best = rep.best();
    ASSERT_NE(best, nullptr);

    const auto traj = csv::read(dir + "/oracle_best_trajectory.csv");
    ASSERT_EQ(traj.rows.size(), best->rows.size());
    EXPECT_EQ(traj.header.size(), 8u + 3u * c.env.user_count + 3u);
    for (std::size_t t = 0; t < traj.rows.size(); ++t) {
        const auto& r = best->rows[t];
        EXPECT_EQ(traj.value(t, "x"), r.position.x);
        EXPECT_EQ(traj.value(t, "z"), r.position.z);
        EXPECT_EQ(traj.value(t, "theta"), r.theta);
        EXPECT_EQ(traj.value(t, "p_t_dbm"), r.p_t_dbm);
        EXPECT_EQ(traj.value(t, "eta_0"), r.eta[0]);
        EXPECT_EQ(traj.value(t, "rate_1"), r.rate_bps[1]);
        EXPECT_EQ(traj.value(t, "r2"), r.terms.r2);
    }

    const auto pp = csv::read(dir + "/oracle_power_payload.csv");
    for (int i = 0; i < c.env.user_count; ++i) {
        const std::string col = "eta_" + std::to_string(i);
        for (std::size_t t = 1; t < pp.rows.size(); ++t) EXPECT_LE(pp.value(t, col), pp.value(t - 1, col));
    }

    const auto eps = csv::read(dir + "/oracle_episodes.csv");
    ASSERT_EQ(eps.rows.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(eps.value(i, "return"), rep.episodes[i].episode_return);
        EXPECT_EQ(eps.value(i, "energy_mj"), rep.episodes[i].energy_mj);
    }

    std::vector<EpisodeStats> curve(4);
    for (int i = 0; i < 4; ++i) curve[i] = {i, -0.1 * i, 80.0 - i, i % 2 == 0, i};
    write_learning_curve(curve, dir + "/curve.csv");
    const auto lc = csv::read(dir + "/curve.csv");
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(lc.value(i, "return"), curve[i].episode_return);
    EXPECT_THROW(lc.column("missing"), Error);
    std::filesystem::remove_all(dir);
}

TEST_F(Fixture, ManifestRecordsConfigAndSeeds) {
    const auto dir = tmp_dir("uavckm_manifest");
    write_manifest(c, "rl train", dir);
    std::ifstream in(dir + "/manifest.json");
    const auto j = nlohmann::json::parse(in);
    EXPECT_EQ(j.at("version"), kVersion);
    EXPECT_EQ(j.at("command"), "rl train");
    EXPECT_EQ(j.at("seeds").at("world"), c.world_seed);
    EXPECT_EQ(nlohmann::json(j.at("config").get<ExperimentConfig>()), nlohmann::json(c));
    std::filesystem::remove_all(dir);
}
