#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "uavckm.hpp"

using namespace uavckm;

namespace {

WorldConfig desk_world() { return desk_profile().world; }

CkmHyper quick_hyper() {
    CkmHyper h;
    h.width = 32;
    h.blocks = 2;
    h.epochs = 30;
    h.ensemble = 3;
    h.batch = 128;
    h.lr = 3e-3;
    h.update_epochs = 10;
    return h;
}

std::string tmp(const std::string& name) { return (std::filesystem::temp_directory_path() / name).string(); }

} // namespace

TEST(Features, FixedLengthAndPadding) {
    const World w = generate_world(7, desk_world());
    const auto f = environment_features(w, 20);
    ASSERT_EQ(f.size(), 24u * 20u);
    // 12 buildings: slots 12..19 are zero.
    for (std::size_t i = 24 * 12; i < f.size(); ++i) EXPECT_EQ(f[i], 0.0);
    for (std::size_t i = 0; i < 24 * 12; ++i) {
        EXPECT_GE(f[i], 0.0);
        EXPECT_LE(f[i], 1.0);
    }
    EXPECT_EQ(environment_features(w, 4).size(), 96u);
    EXPECT_EQ(features_hash(f), features_hash(environment_features(w, 20)));
}

TEST(Collect, FlagsLabelsAndReportedPositions) {
    const World w = generate_world(7, desk_world());
    const LinkBudgetParams link;
    std::mt19937_64 rng(3);
    const auto rows = collect_dataset(w, link, CepModel(5.0), 1001, rng);
    ASSERT_EQ(rows.size(), 1001u);
    int flagged = 0;
    for (const auto& s : rows) {
        flagged += s.noise_flag;
        EXPECT_DOUBLE_EQ(s.label_db, true_gain(s.uav, s.gu_true, w, link).db);
        if (!s.noise_flag) {
            EXPECT_EQ(s.gu_reported, s.gu_true);
        }
        EXPECT_TRUE(w.bounds.contains_closed(s.gu_reported));
        EXPECT_TRUE(w.flight_box().contains_closed(s.uav));
    }
    EXPECT_EQ(flagged, 501);
}

TEST(Percentiles, EnsembleInterval) {
    const std::vector<double> m{-80, -81, -82, -83, -84};
    const auto iv = interval_from_members(m);
    EXPECT_DOUBLE_EQ(iv.median, -82.0);
    EXPECT_NEAR(iv.lo, -83.8, 1e-12);
    EXPECT_NEAR(iv.hi, -80.2, 1e-12);
    EXPECT_NEAR(iv.width(), 3.6, 1e-12);
    EXPECT_DOUBLE_EQ(percentile({3.0}, 0.95), 3.0);
    EXPECT_THROW(percentile({}, 0.5), Error);
}

TEST(CkmTraining, IdenticalSamplesGiveTheirLabel) {
    const World w = generate_world(7, desk_world());
    std::mt19937_64 rng(5);
    auto one = collect_dataset(w, LinkBudgetParams{}, CepModel(0.0), 1, rng);
    one.front().label_db = -85.0;
    const std::vector<ChannelSample> rows(600, one.front());
    const auto model = train(rows, quick_hyper());
    EXPECT_TRUE(model.norm.kept.empty());
    const auto& s = rows.front();
    EXPECT_NEAR(predict(model, s.uav, s.gu_reported, s.noise_flag, *s.env).db, -85.0, 0.1);
}

TEST(CkmTraining, OpenFieldIsNearlyExact) {
    // Without buildings the gain is a smooth function of distance.
    auto cfg = desk_world();
    cfg.building_count = 0;
    const World w = generate_world(9, cfg);
    std::mt19937_64 rng(6);
    const auto rows = collect_dataset(w, LinkBudgetParams{}, CepModel(0.0), 4000, rng);
    auto h = quick_hyper();
    h.epochs = 60;
    const auto model = train(rows, h);
    std::mt19937_64 test_rng(7);
    const auto test = collect_dataset(w, LinkBudgetParams{}, CepModel(0.0), 1000, test_rng);
    EXPECT_LE(rmse_db(model, test), 1.0);
}

TEST(CkmTraining, SeedReproducible) {
    const World w = generate_world(7, desk_world());
    std::mt19937_64 rng(8);
    const auto rows = collect_dataset(w, LinkBudgetParams{}, CepModel(5.0), 500, rng);
    auto h = quick_hyper();
    h.epochs = 5;
    const auto a = train(rows, h);
    const auto b = train(rows, h);
    EXPECT_EQ(predict_batch(a, rows), predict_batch(b, rows));
    h.seed = 2;
    const auto c = train(rows, h);
    EXPECT_NE(predict_batch(a, rows), predict_batch(c, rows));
}

TEST(CkmTraining, IntervalsNeedThreeMembers) {
    const World w = generate_world(7, desk_world());
    std::mt19937_64 rng(9);
    const auto rows = collect_dataset(w, LinkBudgetParams{}, CepModel(0.0), 200, rng);
    auto h = quick_hyper();
    h.epochs = 2;
    h.ensemble = 2;
    const auto model = train(rows, h);
    EXPECT_THROW(predict_interval(model, rows[0].uav, rows[0].gu_reported, 0, *rows[0].env), Error);
    h.ensemble = 3;
    const auto m3 = train(rows, h);
    const auto iv = predict_interval(m3, rows[0].uav, rows[0].gu_reported, 0, *rows[0].env);
    EXPECT_LE(iv.lo, iv.median);
    EXPECT_LE(iv.median, iv.hi);
}

TEST(CkmTraining, RejectsBadInput) {
    EXPECT_THROW(train({}, quick_hyper()), Error);
    auto h = quick_hyper();
    h.holdout_fraction = 1.0;
    EXPECT_THROW(validate(h), Error);
    const World w = generate_world(7, desk_world());
    std::mt19937_64 rng(1);
    const auto rows = collect_dataset(w, LinkBudgetParams{}, CepModel(0.0), 50, rng);
    const auto m = train(rows, [] { auto x = quick_hyper(); x.epochs = 1; return x; }());
    const std::vector<double> short_env(5, 0.0);
    EXPECT_THROW(predict(m, rows[0].uav, rows[0].gu_reported, 0, short_env), Error);
}

TEST(CkmUpdate, EmptyUpdateKeepsModel) {
    const World w = generate_world(7, desk_world());
    std::mt19937_64 rng(10);
    const auto rows = collect_dataset(w, LinkBudgetParams{}, CepModel(0.0), 300, rng);
    auto h = quick_hyper();
    h.epochs = 3;
    const auto m = train(rows, h);
    const auto same = update_incremental(m, {}, h, rows);
    EXPECT_EQ(predict_batch(m, rows), predict_batch(same, rows));
}

TEST(CkmUpdate, TracksChangedScene) {
    const World w = generate_world(7, desk_world());
    const World changed = damage_tallest(w, 0.25);
    const LinkBudgetParams link;
    std::mt19937_64 rng(11);
    const auto before = collect_dataset(w, link, CepModel(0.0), 4000, rng);
    const auto after = collect_dataset(changed, link, CepModel(0.0), 4000, rng);
    const auto test = collect_dataset(changed, link, CepModel(0.0), 1000, rng);
    auto h = quick_hyper();
    h.use_env_features = false;  // same inputs before and after; only the labels move
    const auto m = train(before, h);
    const auto updated = update_incremental(m, after, h, before);
    EXPECT_LT(rmse_db(updated, test), rmse_db(m, test));
    EXPECT_EQ(updated.training_meta.value("incremental_updates", 0), 1);
}

TEST(CkmIo, ModelRoundTrip) {
    const World w = generate_world(7, desk_world());
    std::mt19937_64 rng(12);
    const auto rows = collect_dataset(w, LinkBudgetParams{}, CepModel(5.0), 300, rng);
    auto h = quick_hyper();
    h.epochs = 3;
    const auto m = train(rows, h);
    const auto path = tmp("uavckm_model.bin");
    save_model(m, path);
    const auto back = load_model(path);
    EXPECT_EQ(predict_batch(m, rows), predict_batch(back, rows));
    EXPECT_EQ(back.hyper.width, h.width);
    std::filesystem::resize_file(path, std::filesystem::file_size(path) / 2);
    EXPECT_THROW(load_model(path), Error);
    std::filesystem::remove(path);
    try {
        load_model(path);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.category(), ErrorCategory::Io);
    }
}

TEST(CkmIo, DatasetCsvRoundTrip) {
    const World w = generate_world(7, desk_world());
    std::mt19937_64 rng(13);
    const auto rows = collect_dataset(w, LinkBudgetParams{}, CepModel(5.0), 200, rng);
    const auto path = tmp("uavckm_data.csv");
    save_dataset_csv(rows, path);
    const auto back = load_dataset_csv(path, w, 10);
    ASSERT_EQ(back.size(), rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        EXPECT_EQ(back[i].uav, rows[i].uav);
        EXPECT_EQ(back[i].gu_reported, rows[i].gu_reported);
        EXPECT_EQ(back[i].noise_flag, rows[i].noise_flag);
        EXPECT_EQ(back[i].label_db, rows[i].label_db);
        EXPECT_EQ(*back[i].env, *rows[i].env);
    }
    // Rows collected in another scene are refused.
    const World other = generate_world(8, desk_world());
    try {
        load_dataset_csv(path, other, 10);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.category(), ErrorCategory::Format);
    }
    std::filesystem::remove(path);
}

TEST(CkmConfig, JsonRoundTrip) {
    CkmHyper h = quick_hyper();
    h.use_env_features = false;
    h.seed = 99;
    const auto back = nlohmann::json(h).get<CkmHyper>();
    EXPECT_EQ(nlohmann::json(back), nlohmann::json(h));
}

TEST(CkmTraining, FlagIsALiveFeature) {
    const World w = generate_world(7, desk_world());
    std::mt19937_64 rng(14);
    const auto rows = collect_dataset(w, LinkBudgetParams{}, CepModel(5.0), 2000, rng);
    auto h = quick_hyper();
    h.epochs = 10;
    const auto m = train(rows, h);
    int differ = 0;
    for (std::size_t i = 0; i < 100; ++i) {
        const auto& s = rows[i];
        differ += predict(m, s.uav, s.gu_true, 0, *s.env).db != predict(m, s.uav, s.gu_true, 1, *s.env).db;
    }
    EXPECT_EQ(differ, 100);
}

TEST(CkmTraining, IntervalsWidenOutsideTheTrainingRegion) {
    const World w = generate_world(7, desk_world());
    std::mt19937_64 rng(15);
    const auto rows = collect_dataset(w, LinkBudgetParams{}, CepModel(0.0), 3000, rng);
    auto h = quick_hyper();
    h.ensemble = 5;
    const auto m = train(rows, h);
    double inside = 0.0, outside = 0.0;
    const Vec3 far{2.0 * w.bounds.max_corner.x, 2.0 * w.bounds.max_corner.y, 2.0 * w.bounds.max_corner.z};
    for (std::size_t i = 0; i < 200; ++i) {
        const auto& s = rows[i];
        inside += predict_interval(m, s.uav, s.gu_reported, 0, *s.env).width();
        outside += predict_interval(m, s.uav + far, s.gu_reported + far, 0, *s.env).width();
    }
    EXPECT_GT(outside, inside);
}

TEST(CkmNorm, ConstantFeaturesAreDropped) {
    // Single-scene data: every environment feature is constant and must not be kept, or a
    // changed scene would be amplified by a round-off standard deviation.
    const World w = generate_world(7, desk_world());
    std::mt19937_64 rng(16);
    const auto rows = collect_dataset(w, LinkBudgetParams{}, CepModel(5.0), 500, rng);
    const auto st = fit_norm_stats(rows, true);
    EXPECT_EQ(st.kept.size(), 7u);
    EXPECT_EQ(st.raw_dim, 7 + 240);
    const auto x = st.normalize(raw_input(rows[0], true));
    for (int k = 0; k < 7; ++k) EXPECT_EQ(st.kept[static_cast<std::size_t>(k)], k);
    EXPECT_TRUE(x.allFinite());
}
