#pragma once

// Experiment orchestration: channel-map pipeline, scheme wiring, training, evaluation,
// the environment-change experiment and CSV outputs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uavckm/channel.hpp"
#include "uavckm/ckm.hpp"
#include "uavckm/env.hpp"
#include "uavckm/errors.hpp"
#include "uavckm/geometry.hpp"
#include "uavckm/positioning.hpp"
#include "uavckm/ppo.hpp"
#include "uavckm/scheduler.hpp"
#include "uavckm/world_io.hpp"

namespace uavckm {

inline constexpr const char* kVersion = "1.0.0";

// ---- schemes ----------------------------------------------------------------------

enum class Scheme {
    PecPpo,    // error-aware map (flag 1 selection), power scheduler, online map updates
    CkmPpo,    // ordinary map trained on clean data, no correction
    LosPpo,    // analytic LoS-probability model
    OsPpo,     // error-aware map, never updated, policy-controlled power
    OraclePpo, // ground-truth channel for selection (reference runs)
};

enum class MapKind { None, Robust, Ordinary };

struct SchemeWiring {
    PredictorMode predictor;
    MapKind map;
    bool scheduler;
    bool online_update;
};

inline SchemeWiring wiring(Scheme s) {
    switch (s) {
    case Scheme::PecPpo: return {PredictorMode::CkmPec, MapKind::Robust, true, true};
    case Scheme::CkmPpo: return {PredictorMode::Ckm, MapKind::Ordinary, false, false};
    case Scheme::LosPpo: return {PredictorMode::LosModel, MapKind::None, false, false};
    case Scheme::OsPpo: return {PredictorMode::CkmPec, MapKind::Robust, false, false};
    case Scheme::OraclePpo: return {PredictorMode::TrueOracle, MapKind::None, false, false};
    }
    throw Error(ErrorCategory::Config, "unknown scheme");
}

inline std::string to_string(Scheme s) {
    switch (s) {
    case Scheme::PecPpo: return "PEC_PPO";
    case Scheme::CkmPpo: return "CKM_PPO";
    case Scheme::LosPpo: return "LOS_PPO";
    case Scheme::OsPpo: return "OS_PPO";
    case Scheme::OraclePpo: return "ORACLE_PPO";
    }
    return "?";
}

inline Scheme scheme_from_string(const std::string& s) {
    for (Scheme k : {Scheme::PecPpo, Scheme::CkmPpo, Scheme::LosPpo, Scheme::OsPpo, Scheme::OraclePpo}) {
        if (to_string(k) == s) return k;
    }
    throw Error(ErrorCategory::Config, "unknown scheme '" + s + "'");
}

// ---- configuration ------------------------------------------------------------------

struct ExperimentConfig {
    std::string profile = "desk";
    WorldConfig world;
    std::uint64_t world_seed = 7;
    std::string world_path; // optional; overrides generation
    Scheme scheme = Scheme::PecPpo;
    double cep = 5.0;
    std::vector<double> cep_list{0.0, 5.0, 10.0};
    std::uint64_t seed = 1;
    EnvConfig env;
    CkmHyper ckm;
    int ckm_samples = 20000;
    int ckm_eval_samples = 4000;
    double ckm_train_cep = 5.0;
    std::vector<double> transfer_ceps{10.0, 25.0};
    int feature_buildings = 10;
    PpoConfig ppo;
    int eval_episodes = 500;
    std::uint64_t eval_seed = 1000003;
    double damage_fraction = 0.25;
    std::string output_dir = "out";
};

/// Reduced scene and schedule that train within minutes on one core.
inline ExperimentConfig desk_profile() {
    ExperimentConfig c;
    c.profile = "desk";
    c.world.size = {300.0, 300.0, 200.0};
    c.world.uav_min_height = 60.0;
    c.world.uav_max_height = 200.0;
    c.world.building_count = 12;
    c.world.footprint_min = 20.0;
    c.world.footprint_max = 60.0;
    c.world.building_height_min = 20.0;
    c.world.building_height_max = 60.0;
    c.world.user_count = 3;
    c.world.user_max_height = 50.0;
    c.world.payload_bits = 5e6;
    c.env.t_max_steps = 80;
    c.env.user_count = 3;
    c.env.payload_bits = 5e6;
    // Desk ensembles spread wider: 90th-percentile interval width is about 8 dB.
    c.env.scheduler.width_threshold_db = 9.0;
    c.ckm.width = 64;
    c.ckm.blocks = 3;
    c.ckm.epochs = 40;
    c.ckm.lr = 2e-3;
    c.ckm.update_epochs = 20;
    c.ckm_samples = 20000;
    c.ppo.lr = 5e-4;
    c.ppo.gamma = 0.9;
    c.ppo.hidden = 64;
    c.ppo.rollout_len = 1024;
    c.ppo.minibatch = 64;
    c.ppo.max_episodes = 2000;
    c.ppo.init_log_std = -0.5;
    c.eval_episodes = 200;
    return c;
}

/// Full-size scene with the published training schedule.
inline ExperimentConfig full_profile() {
    ExperimentConfig c;
    c.profile = "full";
    c.eval_episodes = 500;
    c.ckm_samples = 100000;
    c.ckm_eval_samples = 10000;
    return c;
}

inline void to_json(nlohmann::json& j, const WorldConfig& w) {
    j = {{"size", w.size}, {"uav_min_height", w.uav_min_height}, {"uav_max_height", w.uav_max_height},
         {"building_count", w.building_count}, {"footprint_min", w.footprint_min},
         {"footprint_max", w.footprint_max}, {"building_height_min", w.building_height_min},
         {"building_height_max", w.building_height_max}, {"user_count", w.user_count},
         {"user_max_height", w.user_max_height}, {"payload_bits", w.payload_bits},
         {"max_placement_attempts", w.max_placement_attempts}};
}

inline void from_json(const nlohmann::json& j, WorldConfig& w) {
    w.size = j.at("size").get<Vec3>();
    w.uav_min_height = j.at("uav_min_height").get<double>();
    w.uav_max_height = j.at("uav_max_height").get<double>();
    w.building_count = j.at("building_count").get<int>();
    w.footprint_min = j.at("footprint_min").get<double>();
    w.footprint_max = j.at("footprint_max").get<double>();
    w.building_height_min = j.at("building_height_min").get<double>();
    w.building_height_max = j.at("building_height_max").get<double>();
    w.user_count = j.at("user_count").get<int>();
    w.user_max_height = j.at("user_max_height").get<double>();
    w.payload_bits = j.at("payload_bits").get<double>();
    w.max_placement_attempts = j.at("max_placement_attempts").get<int>();
}

inline void to_json(nlohmann::json& j, const LinkBudgetParams& p) {
    j = {{"carrier_hz", p.carrier_hz}, {"light_speed", p.light_speed}, {"eps_los_db", p.eps_los_db},
         {"eps_nlos_db", p.eps_nlos_db}, {"noise_dbm", p.noise_dbm}, {"p_max_dbm", p.p_max_dbm},
         {"p_min_dbm", p.p_min_dbm}, {"bandwidth_hz", p.bandwidth_hz}, {"los_a", p.los_a}, {"los_b", p.los_b}};
}

inline void from_json(const nlohmann::json& j, LinkBudgetParams& p) {
    p.carrier_hz = j.at("carrier_hz").get<double>();
    p.light_speed = j.at("light_speed").get<double>();
    p.eps_los_db = j.at("eps_los_db").get<double>();
    p.eps_nlos_db = j.at("eps_nlos_db").get<double>();
    p.noise_dbm = j.at("noise_dbm").get<double>();
    p.p_max_dbm = j.at("p_max_dbm").get<double>();
    p.p_min_dbm = j.at("p_min_dbm").get<double>();
    p.bandwidth_hz = j.at("bandwidth_hz").get<double>();
    p.los_a = j.at("los_a").get<double>();
    p.los_b = j.at("los_b").get<double>();
}

inline void to_json(nlohmann::json& j, const EnvConfig& e) {
    j = {{"dt", e.dt}, {"t_max_steps", e.t_max_steps}, {"v_max", e.v_max}, {"a_max", e.a_max},
         {"payload_bits", e.payload_bits}, {"user_count", e.user_count}, {"r1", e.r1}, {"r2", e.r2}, {"r3", e.r3},
         {"arrival_radius", e.arrival_radius}, {"gate_rate_on_true_power", e.gate_rate_on_true_power},
         {"scheduler_width_threshold_db", e.scheduler.width_threshold_db},
         {"scheduler_literal_threshold", e.scheduler.threshold == ThresholdForm::Literal}, {"link", e.link}};
}

inline void from_json(const nlohmann::json& j, EnvConfig& e) {
    e.dt = j.at("dt").get<double>();
    e.t_max_steps = j.at("t_max_steps").get<int>();
    e.v_max = j.at("v_max").get<double>();
    e.a_max = j.at("a_max").get<double>();
    e.payload_bits = j.at("payload_bits").get<double>();
    e.user_count = j.at("user_count").get<int>();
    e.r1 = j.at("r1").get<double>();
    e.r2 = j.at("r2").get<double>();
    e.r3 = j.at("r3").get<double>();
    e.arrival_radius = j.at("arrival_radius").get<double>();
    e.gate_rate_on_true_power = j.at("gate_rate_on_true_power").get<bool>();
    e.scheduler.width_threshold_db = j.at("scheduler_width_threshold_db").get<double>();
    e.scheduler.threshold =
        j.at("scheduler_literal_threshold").get<bool>() ? ThresholdForm::Literal : ThresholdForm::LinkBudget;
    e.link = j.at("link").get<LinkBudgetParams>();
}

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    j = {{"profile", c.profile}, {"world", c.world}, {"world_seed", c.world_seed}, {"world_path", c.world_path},
         {"scheme", to_string(c.scheme)}, {"cep", c.cep}, {"cep_list", c.cep_list}, {"seed", c.seed},
         {"env", c.env}, {"ckm", c.ckm}, {"ckm_samples", c.ckm_samples}, {"ckm_eval_samples", c.ckm_eval_samples},
         {"ckm_train_cep", c.ckm_train_cep}, {"transfer_ceps", c.transfer_ceps},
         {"feature_buildings", c.feature_buildings}, {"ppo", c.ppo}, {"eval_episodes", c.eval_episodes},
         {"eval_seed", c.eval_seed}, {"damage_fraction", c.damage_fraction}, {"output_dir", c.output_dir}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
    c.profile = j.at("profile").get<std::string>();
    c.world = j.at("world").get<WorldConfig>();
    c.world_seed = j.at("world_seed").get<std::uint64_t>();
    c.world_path = j.at("world_path").get<std::string>();
    c.scheme = scheme_from_string(j.at("scheme").get<std::string>());
    c.cep = j.at("cep").get<double>();
    c.cep_list = j.at("cep_list").get<std::vector<double>>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.env = j.at("env").get<EnvConfig>();
    c.ckm = j.at("ckm").get<CkmHyper>();
    c.ckm_samples = j.at("ckm_samples").get<int>();
    c.ckm_eval_samples = j.at("ckm_eval_samples").get<int>();
    c.ckm_train_cep = j.at("ckm_train_cep").get<double>();
    c.transfer_ceps = j.at("transfer_ceps").get<std::vector<double>>();
    c.feature_buildings = j.at("feature_buildings").get<int>();
    c.ppo = j.at("ppo").get<PpoConfig>();
    c.eval_episodes = j.at("eval_episodes").get<int>();
    c.eval_seed = j.at("eval_seed").get<std::uint64_t>();
    c.damage_fraction = j.at("damage_fraction").get<double>();
    c.output_dir = j.at("output_dir").get<std::string>();
}

/// Profile defaults with a JSON merge-patch applied on top. The "profile" key of the patch
/// selects the base ("desk" or "full").
inline ExperimentConfig config_from_json(const nlohmann::json& patch) {
    const std::string profile = patch.value("profile", std::string("desk"));
    ExperimentConfig base;
    if (profile == "desk") {
        base = desk_profile();
    } else if (profile == "full") {
        base = full_profile();
    } else {
        throw Error(ErrorCategory::Config, "unknown profile '" + profile + "'");
    }
    nlohmann::json merged = base;
    merged.merge_patch(patch);
    try {
        return merged.get<ExperimentConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCategory::Config, std::string("bad config: ") + e.what());
    }
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCategory::Io, "cannot open " + path);
    try {
        return config_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorCategory::Config, path + ": " + e.what());
    }
}

/// Environment settings for a scheme at a given CEP.
inline EnvConfig env_config_for(const ExperimentConfig& c, Scheme s, double cep) {
    EnvConfig e = c.env;
    const auto w = wiring(s);
    e.cep = cep;
    e.predictor = w.predictor;
    e.scheduler.enabled = w.scheduler;
    return e;
}

inline World build_world(const ExperimentConfig& c) {
    return c.world_path.empty() ? generate_world(c.world_seed, c.world) : load_world(c.world_path);
}

// ---- channel-map pipeline ------------------------------------------------------------

/// Test rows with every reported position perturbed at `cep` (flag 1), or clean (flag 0).
template <class Rng>
std::vector<ChannelSample> evaluation_set(const World& world, const LinkBudgetParams& link, double cep, bool noisy,
                                          int n, Rng& rng, int feature_buildings) {
    auto rows = collect_dataset(world, link, CepModel(noisy ? cep : 0.0), n, rng,
                                {GuSampling::UniformScene, feature_buildings});
    for (auto& r : rows) {
        r.noise_flag = noisy ? 1 : 0;
        r.gu_reported = noisy ? world.bounds.clamp(perturb(r.gu_true, CepModel(cep), rng)) : r.gu_true;
    }
    return rows;
}

struct TransferResult {
    double cep = 0.0;
    double rmse_db = 0.0;
    double fraction_within_2x_clean = 0.0;
};

struct CkmReport {
    double holdout_rmse_db = 0.0;
    double clean_rmse_db = 0.0;
    double noisy_rmse_db = 0.0; // at the training CEP
    std::vector<TransferResult> transfer;
};

inline void to_json(nlohmann::json& j, const CkmReport& r) {
    nlohmann::json t = nlohmann::json::array();
    for (const auto& x : r.transfer)
        t.push_back({{"cep", x.cep}, {"rmse_db", x.rmse_db}, {"fraction_within_2x_clean", x.fraction_within_2x_clean}});
    j = {{"holdout_rmse_db", r.holdout_rmse_db}, {"clean_rmse_db", r.clean_rmse_db},
         {"noisy_rmse_db", r.noisy_rmse_db}, {"transfer", t}};
}

inline double fraction_within(const CkmModel& m, std::span<const ChannelSample> rows, double tol_db) {
    if (rows.empty()) return 0.0;
    const auto pred = predict_batch(m, rows);
    std::size_t ok = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) ok += std::abs(pred[i] - rows[i].label_db) <= tol_db;
    return static_cast<double>(ok) / static_cast<double>(rows.size());
}

/// Clean, noisy and transfer accuracy against true-position gains.
inline CkmReport evaluate_map(const CkmModel& model, const World& world, const ExperimentConfig& c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    CkmReport r;
    r.holdout_rmse_db = model.training_meta.value("holdout_rmse_db", 0.0);
    const auto clean = evaluation_set(world, c.env.link, 0.0, false, c.ckm_eval_samples, rng, c.feature_buildings);
    r.clean_rmse_db = rmse_db(model, clean);
    const auto noisy = evaluation_set(world, c.env.link, c.ckm_train_cep, true, c.ckm_eval_samples, rng, c.feature_buildings);
    r.noisy_rmse_db = rmse_db(model, noisy);
    for (double cep : c.transfer_ceps) {
        const auto rows = evaluation_set(world, c.env.link, cep, true, c.ckm_eval_samples, rng, c.feature_buildings);
        r.transfer.push_back({cep, rmse_db(model, rows), fraction_within(model, rows, 2.0 * r.clean_rmse_db)});
    }
    return r;
}

struct CkmPipelineResult {
    CkmModel model;
    std::vector<ChannelSample> dataset;
    CkmReport report;
};

/// Collects a dataset at `collect_cep` (half the rows perturbed and flagged), trains, evaluates.
inline CkmPipelineResult run_ckm_pipeline(const ExperimentConfig& c, const World& world, double collect_cep,
                                          std::uint64_t seed) {
    CkmPipelineResult out;
    std::mt19937_64 rng(seed);
    out.dataset = collect_dataset(world, c.env.link, CepModel(collect_cep), c.ckm_samples, rng,
                                  {GuSampling::UniformScene, c.feature_buildings});
    CkmHyper h = c.ckm;
    h.seed = seed;
    out.model = train(out.dataset, h);
    out.report = evaluate_map(out.model, world, c, seed + 101);
    return out;
}

inline std::shared_ptr<const ChannelPredictor> make_predictor(Scheme s, std::shared_ptr<const World> world,
                                                              const ExperimentConfig& c,
                                                              std::shared_ptr<const CkmModel> map) {
    const auto w = wiring(s);
    switch (w.predictor) {
    case PredictorMode::TrueOracle: return std::make_shared<OraclePredictor>(world, c.env.link);
    case PredictorMode::LosModel: return std::make_shared<LosModelPredictor>(c.env.link);
    case PredictorMode::Ckm:
    case PredictorMode::CkmPec:
        if (!map) throw Error(ErrorCategory::Config, to_string(s) + " needs a channel map");
        return std::make_shared<CkmPredictor>(map, environment_features(*world, c.feature_buildings),
                                              w.predictor == PredictorMode::CkmPec ? 1 : 0);
    }
    throw Error(ErrorCategory::Config, "unknown predictor");
}

// ---- training and evaluation -----------------------------------------------------------

inline TrainResult run_training(const ExperimentConfig& c, Scheme s, std::shared_ptr<const World> world,
                                std::shared_ptr<const CkmModel> map, double cep, const TrainHooks& hooks = {}) {
    const auto w = wiring(s);
    if (w.map == MapKind::None) map = nullptr;
    CommEnv env(world, env_config_for(c, s, cep), make_predictor(s, world, c, map));
    PpoConfig p = c.ppo;
    p.seed = c.seed;
    return train_loop(env, p, hooks);
}

struct EpisodeRecord {
    int episode = 0;
    std::uint64_t seed = 0;
    double episode_return = 0.0;
    double completion_time = 0.0;
    bool success = false;
    int punishment_count = 0;
    double energy_mj = 0.0; // sum of linear transmit power x dt
    std::vector<std::vector<double>> actions;
    std::vector<TrajectoryRow> rows;
};

struct EvalReport {
    double mean_completion_time = 0.0;
    double completion_time_stderr = 0.0;
    double success_rate = 0.0;
    double mean_return = 0.0;
    double mean_energy_mj = 0.0;
    std::vector<EpisodeRecord> episodes;

    /// Shortest successful episode, or the shortest overall when none succeeded.
    const EpisodeRecord* best() const {
        const EpisodeRecord* b = nullptr;
        for (const auto& e : episodes) {
            if (!b || (e.success && !b->success) ||
                (e.success == b->success && e.completion_time < b->completion_time))
                b = &e;
        }
        return b;
    }
};

/// Runs one evaluation episode with the policy mean. Actions are logged so the episode can be replayed.
inline EpisodeRecord run_episode(CommEnv& env, const PolicyNet& policy, std::uint64_t seed, bool keep_rows) {
    EpisodeRecord rec;
    rec.seed = seed;
    auto obs = env.reset(seed);
    bool done = false;
    while (!done) {
        const auto a = deterministic_action(policy, obs);
        const auto r = env.step(EnvAction::from(a));
        rec.actions.push_back(a);
        rec.episode_return += r.reward;
        rec.energy_mj += (r.info.p_t_dbm == kPowerOff ? 0.0 : dbm_to_mw(r.info.p_t_dbm)) * env.config().dt;
        if (keep_rows) rec.rows.push_back(r.info);
        obs = r.observation;
        done = r.terminated;
        if (done) {
            rec.completion_time = r.info.t * env.config().dt;
            rec.success = r.success;
            rec.punishment_count = env.state().punishment_count;
        }
    }
    return rec;
}

/// Re-executes logged actions from the logged seed.
inline EpisodeRecord replay_episode(CommEnv& env, std::uint64_t seed, const std::vector<std::vector<double>>& actions) {
    EpisodeRecord rec;
    rec.seed = seed;
    env.reset(seed);
    for (const auto& a : actions) {
        if (env.terminated()) throw Error(ErrorCategory::State, "replay has more actions than the episode");
        const auto r = env.step(EnvAction::from(a));
        rec.actions.push_back(a);
        rec.episode_return += r.reward;
        rec.energy_mj += (r.info.p_t_dbm == kPowerOff ? 0.0 : dbm_to_mw(r.info.p_t_dbm)) * env.config().dt;
        rec.rows.push_back(r.info);
        if (r.terminated) {
            rec.completion_time = r.info.t * env.config().dt;
            rec.success = r.success;
            rec.punishment_count = env.state().punishment_count;
        }
    }
    return rec;
}

inline std::uint64_t eval_episode_seed(std::uint64_t base, int i) { return base + static_cast<std::uint64_t>(i) * 7919ULL; }

/// Evaluates `episodes` episodes on seeds derived from `seed_base`; identical bases give matched layouts.
inline EvalReport run_eval(CommEnv& env, const PolicyNet& policy, int episodes, std::uint64_t seed_base,
                           bool keep_rows = false) {
    if (episodes < 1) throw Error(ErrorCategory::Config, "episodes must be >= 1");
    EvalReport rep;
    for (int i = 0; i < episodes; ++i) {
        auto rec = run_episode(env, policy, eval_episode_seed(seed_base, i), keep_rows);
        rec.episode = i;
        rep.episodes.push_back(std::move(rec));
    }
    const double n = static_cast<double>(episodes);
    for (const auto& e : rep.episodes) {
        rep.mean_completion_time += e.completion_time / n;
        rep.success_rate += (e.success ? 1.0 : 0.0) / n;
        rep.mean_return += e.episode_return / n;
        rep.mean_energy_mj += e.energy_mj / n;
    }
    double var = 0.0;
    for (const auto& e : rep.episodes) var += (e.completion_time - rep.mean_completion_time) * (e.completion_time - rep.mean_completion_time);
    rep.completion_time_stderr = episodes > 1 ? std::sqrt(var / (n - 1.0) / n) : 0.0;
    return rep;
}

/// Convenience: builds the scheme's environment and evaluates a policy in it.
inline EvalReport evaluate_scheme(const ExperimentConfig& c, Scheme s, std::shared_ptr<const World> world,
                                  std::shared_ptr<const CkmModel> map, const PolicyNet& policy, double cep,
                                  int episodes, bool keep_rows = false, std::optional<bool> scheduler_override = {}) {
    EnvConfig e = env_config_for(c, s, cep);
    if (scheduler_override) e.scheduler.enabled = *scheduler_override;
    if (wiring(s).map == MapKind::None) map = nullptr;
    CommEnv env(world, e, make_predictor(s, world, c, map));
    return run_eval(env, policy, episodes, c.eval_seed, keep_rows);
}

// ---- environment change ------------------------------------------------------------

/// Removes the tallest ceil(fraction * N) buildings. Everything else is kept as is.
inline World damage_tallest(const World& w, double fraction) {
    World out = w;
    const auto n = w.buildings.size();
    const auto remove = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n)));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return w.buildings[a].max_corner.z > w.buildings[b].max_corner.z; });
    std::vector<bool> drop(n, false);
    for (std::size_t k = 0; k < std::min(remove, n); ++k) drop[order[k]] = true;
    out.buildings.clear();
    for (std::size_t i = 0; i < n; ++i) {
        if (!drop[i]) out.buildings.push_back(w.buildings[i]);
    }
    return out;
}

struct DynamicReport {
    double stale_rmse_db = 0.0;
    double updated_rmse_db = 0.0;
    EvalReport pec_before, os_before, pec_after, os_after;
    World changed_world;
    CkmModel updated_map;
};

/// Damages the scene, recollects, updates the PEC map incrementally (the OS map stays stale)
/// and re-evaluates both policies before and after the change.
inline DynamicReport run_dynamic_update(const ExperimentConfig& c, std::shared_ptr<const World> world,
                                        const CkmPipelineResult& robust, const PolicyNet& pec_policy,
                                        const PolicyNet& os_policy) {
    DynamicReport r;
    auto map = std::make_shared<const CkmModel>(robust.model);
    r.pec_before = evaluate_scheme(c, Scheme::PecPpo, world, map, pec_policy, c.cep, c.eval_episodes);
    r.os_before = evaluate_scheme(c, Scheme::OsPpo, world, map, os_policy, c.cep, c.eval_episodes);

    r.changed_world = damage_tallest(*world, c.damage_fraction);
    auto changed = std::make_shared<const World>(r.changed_world);
    std::mt19937_64 rng(c.seed + 555);
    const auto fresh = collect_dataset(*changed, c.env.link, CepModel(c.ckm_train_cep), c.ckm_samples, rng,
                                       {GuSampling::UniformScene, c.feature_buildings});
    CkmHyper h = c.ckm;
    h.seed = c.seed + 556;
    r.updated_map = update_incremental(robust.model, fresh, h, robust.dataset);

    std::mt19937_64 test_rng(c.seed + 557);
    const auto test = evaluation_set(*changed, c.env.link, 0.0, false, c.ckm_eval_samples, test_rng, c.feature_buildings);
    r.stale_rmse_db = rmse_db(robust.model, test);
    r.updated_rmse_db = rmse_db(r.updated_map, test);

    auto updated = std::make_shared<const CkmModel>(r.updated_map);
    r.pec_after = evaluate_scheme(c, Scheme::PecPpo, changed, updated, pec_policy, c.cep, c.eval_episodes);
    r.os_after = evaluate_scheme(c, Scheme::OsPpo, changed, map, os_policy, c.cep, c.eval_episodes);
    return r;
}

// ---- CSV outputs -------------------------------------------------------------------------

namespace csv {

inline std::string num(double v) {
    if (v == kPowerOff) return "OFF";
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

inline std::ofstream open(const std::string& path) {
    if (const auto parent = std::filesystem::path(path).parent_path(); !parent.empty())
        std::filesystem::create_directories(parent);
    std::ofstream out(path);
    if (!out) throw Error(ErrorCategory::Io, "cannot write " + path);
    return out;
}

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == name) return i;
        }
        throw Error(ErrorCategory::Format, "missing column " + name);
    }
    /// Numeric cell; "OFF" reads back as the radio-off sentinel.
    double value(std::size_t row, const std::string& name) const {
        const std::string& cell = rows.at(row).at(column(name));
        return cell == "OFF" ? kPowerOff : std::stod(cell);
    }
};

inline Table read(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCategory::Io, "cannot open " + path);
    auto split = [](const std::string& line) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        return cells;
    };
    Table t;
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCategory::Format, path + " is empty");
    t.header = split(line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto cells = split(line);
        if (cells.size() != t.header.size()) throw Error(ErrorCategory::Format, path + ": ragged row");
        t.rows.push_back(std::move(cells));
    }
    return t;
}

} // namespace csv

/// episode,return,completion_time,success,punishment_count
inline void write_learning_curve(const std::vector<EpisodeStats>& curve, const std::string& path) {
    auto out = csv::open(path);
    out << "episode,return,completion_time,success,punishment_count\n";
    for (const auto& e : curve) {
        out << e.episode << ',' << csv::num(e.episode_return) << ',' << csv::num(e.completion_time) << ','
            << (e.success ? 1 : 0) << ',' << e.punishment_count << '\n';
    }
}

/// t,x,y,z,v,theta,phi,p_t_dbm, alpha_i..., eta_i..., rate_i..., r1,r2,r3
inline void write_trajectory(const std::vector<TrajectoryRow>& rows, const std::string& path) {
    auto out = csv::open(path);
    const std::size_t n = rows.empty() ? 0 : rows.front().alpha.size();
    out << "t,x,y,z,v,theta,phi,p_t_dbm";
    for (const char* k : {"alpha", "eta", "rate"})
        for (std::size_t i = 0; i < n; ++i) out << ',' << k << '_' << i;
    out << ",r1,r2,r3\n";
    for (const auto& r : rows) {
        out << r.t << ',' << csv::num(r.position.x) << ',' << csv::num(r.position.y) << ',' << csv::num(r.position.z)
            << ',' << csv::num(r.v) << ',' << csv::num(r.theta) << ',' << csv::num(r.phi) << ','
            << csv::num(r.p_t_dbm);
        for (int a : r.alpha) out << ',' << a;
        for (double e : r.eta) out << ',' << csv::num(e);
        for (double x : r.rate_bps) out << ',' << csv::num(x);
        out << ',' << csv::num(r.terms.r1) << ',' << csv::num(r.terms.r2) << ',' << csv::num(r.terms.r3) << '\n';
    }
}

/// Transmit power and remaining payload per slot: t,p_t_dbm,p_t_mw,eta_i...
inline void write_power_payload(const std::vector<TrajectoryRow>& rows, const std::string& path) {
    auto out = csv::open(path);
    const std::size_t n = rows.empty() ? 0 : rows.front().eta.size();
    out << "t,p_t_dbm,p_t_mw";
    for (std::size_t i = 0; i < n; ++i) out << ",eta_" << i;
    out << '\n';
    for (const auto& r : rows) {
        out << r.t << ',' << csv::num(r.p_t_dbm) << ',' << csv::num(r.p_t_dbm == kPowerOff ? 0.0 : dbm_to_mw(r.p_t_dbm));
        for (double e : r.eta) out << ',' << csv::num(e);
        out << '\n';
    }
}

/// episode,seed,return,completion_time,success,punishment_count,energy_mj
inline void write_eval_episodes(const EvalReport& rep, const std::string& path) {
    auto out = csv::open(path);
    out << "episode,seed,return,completion_time,success,punishment_count,energy_mj\n";
    for (const auto& e : rep.episodes) {
        out << e.episode << ',' << e.seed << ',' << csv::num(e.episode_return) << ',' << csv::num(e.completion_time)
            << ',' << (e.success ? 1 : 0) << ',' << e.punishment_count << ',' << csv::num(e.energy_mj) << '\n';
    }
}

inline nlohmann::json summary_json(const EvalReport& r) {
    return {{"episodes", r.episodes.size()},
            {"mean_completion_time", r.mean_completion_time},
            {"completion_time_stderr", r.completion_time_stderr},
            {"success_rate", r.success_rate},
            {"mean_return", r.mean_return},
            {"mean_energy_mj", r.mean_energy_mj}};
}

/// Writes the evaluation bundle: per-episode table, best trajectory and its power/payload trace.
inline void emit_plot_data(const EvalReport& rep, const std::string& dir, const std::string& stem) {
    write_eval_episodes(rep, dir + "/" + stem + "_episodes.csv");
    if (const auto* b = rep.best(); b && !b->rows.empty()) {
        write_trajectory(b->rows, dir + "/" + stem + "_best_trajectory.csv");
        write_power_payload(b->rows, dir + "/" + stem + "_power_payload.csv");
    }
}

inline void write_json(const nlohmann::json& j, const std::string& path) {
    auto out = csv::open(path);
    out << j.dump(2) << '\n';
}

/// Run manifest: resolved configuration, seeds, version and command.
inline void write_manifest(const ExperimentConfig& c, const std::string& command, const std::string& dir) {
    write_json({{"tool", "uavckm"},
                {"version", kVersion},
                {"command", command},
                {"config", c},
                {"seeds", {{"world", c.world_seed}, {"run", c.seed}, {"eval", c.eval_seed}}}},
               dir + "/manifest.json");
}

} // namespace uavckm
