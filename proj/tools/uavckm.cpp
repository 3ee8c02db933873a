// uavckm: command-line front end for channel-map construction, policy training and experiments.
//
//   uavckm [--config FILE] [--set key.path=value ...] [--out DIR] <group> <verb> [options]
//
// Exit status is 0 on success and the error category code otherwise (see errors.hpp).

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "uavckm.hpp"

namespace fs = std::filesystem;
using namespace uavckm;

namespace {

struct Globals {
    std::string config_path;
    std::vector<std::string> sets;
    std::string out;
    std::string world;
    std::string profile;
    bool quiet = false;
};

// "ppo.lr=1e-4" -> {"ppo": {"lr": 1e-4}}; values that are not JSON are taken as strings.
void apply_set(nlohmann::json& patch, const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw Error(ErrorCategory::Config, "override '" + kv + "' is not key=value");
    std::string ptr = "/" + kv.substr(0, eq);
    for (auto& c : ptr) {
        if (c == '.') c = '/';
    }
    const std::string raw = kv.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    patch[nlohmann::json::json_pointer(ptr)] = value;
}

ExperimentConfig resolve(const Globals& g) {
    nlohmann::json patch = nlohmann::json::object();
    if (!g.config_path.empty()) {
        std::ifstream in(g.config_path);
        if (!in) throw Error(ErrorCategory::Io, "cannot open " + g.config_path);
        patch = nlohmann::json::parse(in, nullptr, false);
        if (patch.is_discarded() || !patch.is_object()) throw Error(ErrorCategory::Config, g.config_path + ": not a JSON object");
    }
    if (!g.profile.empty()) patch["profile"] = g.profile;
    for (const auto& s : g.sets) apply_set(patch, s);
    if (!g.out.empty()) patch["output_dir"] = g.out;
    if (!g.world.empty()) patch["world_path"] = g.world;
    auto c = config_from_json(patch);
    c.env.validate();
    validate(c.ckm);
    c.ppo.validate();
    return c;
}

std::string out_path(const ExperimentConfig& c, const std::string& name) {
    fs::create_directories(c.output_dir);
    return (fs::path(c.output_dir) / name).string();
}

std::shared_ptr<const World> world_for(const ExperimentConfig& c) {
    auto w = std::make_shared<const World>(build_world(c));
    save_world(*w, out_path(c, "world.json"));
    return w;
}

void log(const Globals& g, const std::string& msg) {
    if (!g.quiet) std::cerr << msg << '\n';
}

std::string argv_line(int argc, char** argv) {
    std::string s;
    for (int i = 0; i < argc; ++i) s += (i ? " " : "") + std::string(argv[i]);
    return s;
}

TrainHooks progress_hooks(const Globals& g, int every) {
    TrainHooks h;
    if (g.quiet) return h;
    auto window = std::make_shared<std::vector<EpisodeStats>>();
    h.on_episode = [window, every](const EpisodeStats& e) {
        window->push_back(e);
        if (static_cast<int>(window->size()) < every) return;
        double t = 0, s = 0, r = 0;
        for (const auto& x : *window) {
            t += x.completion_time;
            s += x.success;
            r += x.episode_return;
        }
        const double n = static_cast<double>(window->size());
        std::cerr << "episode " << e.episode + 1 << "  time " << t / n << "  success " << s / n << "  return " << r / n
                  << '\n';
        window->clear();
    };
    return h;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"UAV trajectory and channel-map toolkit"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config_path, "JSON configuration (merged over the profile defaults)");
    app.add_option("--set", g.sets, "Override a config value, e.g. --set ppo.lr=1e-4")->take_all();
    app.add_option("--profile", g.profile, "desk or full");
    app.add_option("--out", g.out, "Output directory");
    app.add_option("--world", g.world, "World JSON to use instead of generating one");
    app.add_flag("-q,--quiet", g.quiet, "No progress output");

    // ---- ckm ----
    auto* ckm = app.add_subcommand("ckm", "Channel knowledge map");
    ckm->require_subcommand(1);

    std::string data_path, model_path, replay_path, replay_world, updated_path;
    double collect_cep = -1.0;
    int samples = 0;

    auto* collect = ckm->add_subcommand("collect", "Sample channel measurements");
    collect->add_option("--cep", collect_cep, "Positioning error (m) for the flagged half; default ckm_train_cep");
    collect->add_option("--samples", samples, "Number of rows; default ckm_samples");
    collect->add_option("--data", data_path, "Output CSV")->required();

    auto* ckm_train = ckm->add_subcommand("train", "Train the ensemble map");
    ckm_train->add_option("--data", data_path, "Dataset CSV")->required();
    ckm_train->add_option("--model", model_path, "Output model file")->required();

    auto* ckm_eval = ckm->add_subcommand("eval", "Clean, noisy and transfer accuracy");
    ckm_eval->add_option("--model", model_path, "Model file")->required();

    auto* ckm_update = ckm->add_subcommand("update", "Incremental update on new data");
    ckm_update->add_option("--model", model_path, "Model file")->required();
    ckm_update->add_option("--data", data_path, "New dataset CSV")->required();
    ckm_update->add_option("--replay", replay_path, "Previous dataset CSV used as replay pool");
    ckm_update->add_option("--replay-world", replay_world, "World the replay rows were collected in (default: --world)");
    ckm_update->add_option("--output", updated_path, "Updated model file")->required();

    // ---- rl ----
    auto* rl = app.add_subcommand("rl", "Trajectory policy");
    rl->require_subcommand(1);
    std::string scheme_name, checkpoint;
    double cep = -1.0;
    int episodes = 0;
    auto* rl_train = rl->add_subcommand("train", "Train a policy for one scheme");
    auto* rl_eval = rl->add_subcommand("eval", "Evaluate a checkpoint");
    for (auto* sc : {rl_train, rl_eval}) {
        sc->add_option("--scheme", scheme_name, "PEC_PPO, CKM_PPO, LOS_PPO, OS_PPO or ORACLE_PPO");
        sc->add_option("--model", model_path, "Channel map (schemes that use one)");
        sc->add_option("--cep", cep, "Positioning error (m); default cep");
        sc->add_option("--checkpoint", checkpoint, "Policy checkpoint")->required();
    }
    rl_eval->add_option("--episodes", episodes, "Evaluation episodes; default eval_episodes");

    // ---- exp ----
    auto* exp = app.add_subcommand("exp", "Experiments");
    exp->require_subcommand(1);
    auto* dynamic = exp->add_subcommand("dynamic", "Building damage and online map update");
    auto* sweep = exp->add_subcommand("cep-sweep", "Evaluate one policy across positioning errors");
    sweep->add_option("--scheme", scheme_name, "Scheme to train and sweep (default CKM_PPO)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : static_cast<int>(ErrorCategory::Config);
    }

    try {
        const ExperimentConfig c = resolve(g);
        write_manifest(c, argv_line(argc, argv), c.output_dir);

        if (*collect) {
            const auto world = world_for(c);
            std::mt19937_64 rng(c.seed);
            const double e = collect_cep >= 0.0 ? collect_cep : c.ckm_train_cep;
            const auto rows = collect_dataset(*world, c.env.link, CepModel(e), samples > 0 ? samples : c.ckm_samples, rng,
                                              {GuSampling::UniformScene, c.feature_buildings});
            save_dataset_csv(rows, data_path);
            log(g, "wrote " + std::to_string(rows.size()) + " rows to " + data_path);
        } else if (*ckm_train) {
            const auto world = world_for(c);
            const auto rows = load_dataset_csv(data_path, *world, c.feature_buildings);
            TrainReport rep;
            const auto model = train(rows, c.ckm, &rep);
            save_model(model, model_path);
            write_json(model.training_meta, out_path(c, "ckm_train.json"));
            log(g, "holdout RMSE " + std::to_string(model.training_meta.value("holdout_rmse_db", 0.0)) + " dB");
        } else if (*ckm_eval) {
            const auto world = world_for(c);
            const auto report = evaluate_map(load_model(model_path), *world, c, c.seed + 101);
            write_json(report, out_path(c, "ckm_eval.json"));
            std::cout << nlohmann::json(report).dump(2) << '\n';
        } else if (*ckm_update) {
            const auto world = world_for(c);
            const auto model = load_model(model_path);
            const auto fresh = load_dataset_csv(data_path, *world, c.feature_buildings);
            std::vector<ChannelSample> replay;
            if (!replay_path.empty()) {
                const World old = replay_world.empty() ? *world : load_world(replay_world);
                replay = load_dataset_csv(replay_path, old, c.feature_buildings);
            }
            const auto updated = update_incremental(model, fresh, c.ckm, replay);
            save_model(updated, updated_path);
            log(g, "updated map written to " + updated_path);
        } else if (*rl_train || *rl_eval) {
            const Scheme s = scheme_from_string(scheme_name.empty() ? to_string(c.scheme) : scheme_name);
            const double e = cep >= 0.0 ? cep : c.cep;
            const auto world = world_for(c);
            std::shared_ptr<const CkmModel> map;
            if (wiring(s).map != MapKind::None) {
                if (model_path.empty()) throw Error(ErrorCategory::Config, to_string(s) + " needs --model");
                map = std::make_shared<const CkmModel>(load_model(model_path));
            }
            if (*rl_train) {
                const auto result = run_training(c, s, world, map, e, progress_hooks(g, 100));
                save_checkpoint(result.learner, checkpoint, {{"scheme", to_string(s)}, {"cep", e}});
                write_learning_curve(result.curve, out_path(c, "learning_curve.csv"));
            } else {
                const PpoLearner learner = load_checkpoint(checkpoint);
                const auto rep = evaluate_scheme(c, s, world, map, learner.policy, e,
                                                 episodes > 0 ? episodes : c.eval_episodes, true);
                emit_plot_data(rep, c.output_dir, "eval");
                write_json(summary_json(rep), out_path(c, "eval_summary.json"));
                std::cout << summary_json(rep).dump(2) << '\n';
            }
        } else if (*dynamic) {
            const auto world = world_for(c);
            log(g, "training error-aware map");
            const auto robust = run_ckm_pipeline(c, *world, c.ckm_train_cep, c.seed);
            auto map = std::make_shared<const CkmModel>(robust.model);
            log(g, "training PEC_PPO");
            const auto pec = run_training(c, Scheme::PecPpo, world, map, c.cep, progress_hooks(g, 200));
            log(g, "training OS_PPO");
            const auto os = run_training(c, Scheme::OsPpo, world, map, c.cep, progress_hooks(g, 200));
            const auto r = run_dynamic_update(c, world, robust, pec.learner.policy, os.learner.policy);
            save_world(r.changed_world, out_path(c, "world_changed.json"));
            const nlohmann::json summary = {{"stale_rmse_db", r.stale_rmse_db},
                                            {"updated_rmse_db", r.updated_rmse_db},
                                            {"pec_before", summary_json(r.pec_before)},
                                            {"os_before", summary_json(r.os_before)},
                                            {"pec_after", summary_json(r.pec_after)},
                                            {"os_after", summary_json(r.os_after)}};
            write_json(summary, out_path(c, "dynamic.json"));
            std::cout << summary.dump(2) << '\n';
        } else if (*sweep) {
            const Scheme s = scheme_from_string(scheme_name.empty() ? "CKM_PPO" : scheme_name);
            const auto world = world_for(c);
            std::shared_ptr<const CkmModel> map;
            if (wiring(s).map != MapKind::None) {
                const double train_cep = wiring(s).map == MapKind::Robust ? c.ckm_train_cep : 0.0;
                map = std::make_shared<const CkmModel>(run_ckm_pipeline(c, *world, train_cep, c.seed).model);
            }
            const auto trained = run_training(c, s, world, map, c.cep, progress_hooks(g, 200));
            write_learning_curve(trained.curve, out_path(c, "learning_curve.csv"));
            nlohmann::json rows = nlohmann::json::array();
            for (double e : c.cep_list) {
                const auto rep = evaluate_scheme(c, s, world, map, trained.learner.policy, e, c.eval_episodes, true);
                std::ostringstream stem;
                stem << "cep_" << e;
                emit_plot_data(rep, c.output_dir, stem.str());
                auto j = summary_json(rep);
                j["cep"] = e;
                rows.push_back(j);
            }
            write_json(rows, out_path(c, "cep_sweep.json"));
            std::cout << rows.dump(2) << '\n';
        }
    } catch (const Error& e) {
        std::cerr << "error (" << category_name(e.category()) << "): " << e.what() << '\n';
        return static_cast<int>(e.category());
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error (config): " << e.what() << '\n';
        return static_cast<int>(ErrorCategory::Config);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
