#pragma once

// Channel knowledge map: a residual-MLP ensemble regressing channel gain from
// (UAV position, reported GU position, noise flag, environment features).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <memory>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uavckm/channel.hpp"
#include "uavckm/errors.hpp"
#include "uavckm/geometry.hpp"
#include "uavckm/nn.hpp"
#include "uavckm/positioning.hpp"
#include "uavckm/weights_io.hpp"

namespace uavckm {

using EnvFeatures = std::shared_ptr<const std::vector<double>>;

/// Corners of the `max_buildings` largest buildings (by volume), normalized by the world
/// extent and flattened; absent buildings are zero-padded. Length is always 24 * max_buildings.
inline std::vector<double> environment_features(const World& world, int max_buildings) {
    std::vector<std::size_t> order(world.buildings.size());
    std::iota(order.begin(), order.end(), 0);
    auto volume = [&](std::size_t i) {
        const Vec3 e = world.buildings[i].extent();
        return e.x * e.y * e.z;
    };
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return volume(a) > volume(b); });

    std::vector<double> out(static_cast<std::size_t>(24 * max_buildings), 0.0);
    const Vec3 lo = world.bounds.min_corner;
    const Vec3 ext = world.bounds.extent();
    const std::size_t used = std::min(order.size(), static_cast<std::size_t>(max_buildings));
    for (std::size_t k = 0; k < used; ++k) {
        const Building& b = world.buildings[order[k]];
        for (int c = 0; c < 8; ++c) {
            const Vec3 corner{(c & 1) ? b.max_corner.x : b.min_corner.x, (c & 2) ? b.max_corner.y : b.min_corner.y,
                              (c & 4) ? b.max_corner.z : b.min_corner.z};
            for (int a = 0; a < 3; ++a) out[k * 24 + static_cast<std::size_t>(c * 3 + a)] = (corner[a] - lo[a]) / ext[a];
        }
    }
    return out;
}

inline std::string features_hash(const std::vector<double>& f) {
    std::string bytes(reinterpret_cast<const char*>(f.data()), f.size() * sizeof(double));
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << detail::fnv1a(bytes);
    return os.str();
}

/// One training row. Noise corrupts the reported position only; the label is always
/// the gain at the true position.
struct ChannelSample {
    Vec3 uav;
    Vec3 gu_reported;
    Vec3 gu_true;
    int noise_flag = 0;
    double label_db = 0.0;
    EnvFeatures env;
};

enum class GuSampling {
    WorldUsers,   // pick among the world's ground users
    UniformScene, // anywhere below the user height ceiling, outside buildings
};

struct CollectOptions {
    GuSampling gu_sampling = GuSampling::UniformScene;
    int feature_buildings = 10;
};

template <class Rng>
std::vector<ChannelSample> collect_dataset(const World& world, const LinkBudgetParams& params, const CepModel& cep,
                                           int n, Rng& rng, const CollectOptions& opt = {}) {
    if (n < 1) throw Error(ErrorCategory::Config, "dataset size must be >= 1");
    if (opt.gu_sampling == GuSampling::WorldUsers && world.users.empty())
        throw Error(ErrorCategory::Config, "world has no users to sample from");
    auto env = std::make_shared<const std::vector<double>>(environment_features(world, opt.feature_buildings));
    const Box fly = world.flight_box();
    std::uniform_real_distribution<double> ux(fly.min_corner.x, fly.max_corner.x);
    std::uniform_real_distribution<double> uy(fly.min_corner.y, fly.max_corner.y);
    std::uniform_real_distribution<double> uz(fly.min_corner.z, fly.max_corner.z);
    std::uniform_int_distribution<std::size_t> pick(0, world.users.empty() ? 0 : world.users.size() - 1);

    const int flagged = (n + 1) / 2;
    std::vector<ChannelSample> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        ChannelSample s;
        s.env = env;
        do {
            s.uav = {ux(rng), uy(rng), uz(rng)};
            s.gu_true = opt.gu_sampling == GuSampling::WorldUsers ? world.users[pick(rng)].position
                                                                  : detail::draw_user_position(world, rng, 10000);
        } while (distance(s.uav, s.gu_true) < kMinLinkDistance);
        s.noise_flag = i < flagged ? 1 : 0;
        s.gu_reported = s.noise_flag ? world.bounds.clamp(perturb(s.gu_true, cep, rng)) : s.gu_true;
        s.label_db = true_gain(s.uav, s.gu_true, world, params).db;
        out.push_back(std::move(s));
    }
    std::shuffle(out.begin(), out.end(), rng);
    return out;
}

struct CkmHyper {
    int epochs = 200;
    int batch = 256;
    double lr = 1e-3;
    double lr_final_fraction = 0.1; // cosine decay floor
    int ensemble = 5;
    int blocks = 3;
    int width = 128;
    double holdout_fraction = 0.1;
    double replay_ratio = 0.3;
    int update_epochs = 50;
    bool use_env_features = true; // false: positions + flag only (7 inputs)
    std::uint64_t seed = 1;
};

inline void to_json(nlohmann::json& j, const CkmHyper& h) {
    j = {{"epochs", h.epochs}, {"batch", h.batch}, {"lr", h.lr}, {"lr_final_fraction", h.lr_final_fraction},
         {"ensemble", h.ensemble}, {"blocks", h.blocks}, {"width", h.width},
         {"holdout_fraction", h.holdout_fraction}, {"replay_ratio", h.replay_ratio},
         {"update_epochs", h.update_epochs}, {"use_env_features", h.use_env_features}, {"seed", h.seed}};
}

inline void from_json(const nlohmann::json& j, CkmHyper& h) {
    const CkmHyper d;
    h.epochs = j.value("epochs", d.epochs);
    h.batch = j.value("batch", d.batch);
    h.lr = j.value("lr", d.lr);
    h.lr_final_fraction = j.value("lr_final_fraction", d.lr_final_fraction);
    h.ensemble = j.value("ensemble", d.ensemble);
    h.blocks = j.value("blocks", d.blocks);
    h.width = j.value("width", d.width);
    h.holdout_fraction = j.value("holdout_fraction", d.holdout_fraction);
    h.replay_ratio = j.value("replay_ratio", d.replay_ratio);
    h.update_epochs = j.value("update_epochs", d.update_epochs);
    h.use_env_features = j.value("use_env_features", d.use_env_features);
    h.seed = j.value("seed", d.seed);
}

/// Z-score statistics. Features that are constant in the fitting data are dropped.
struct NormStats {
    std::vector<int> kept;    // indices into the raw input vector
    nn::Vector mean, stdev;   // over kept features
    double label_mean = 0.0;
    double label_std = 1.0;
    int raw_dim = 0;

    nn::Vector normalize(std::span<const double> raw) const {
        nn::Vector x(static_cast<Eigen::Index>(kept.size()));
        for (std::size_t i = 0; i < kept.size(); ++i) {
            const auto k = static_cast<Eigen::Index>(i);
            x(k) = (raw[static_cast<std::size_t>(kept[i])] - mean(k)) / stdev(k);
        }
        return x;
    }
    double normalize_label(double y) const { return (y - label_mean) / label_std; }
    double denormalize_label(double z) const { return z * label_std + label_mean; }
};

/// Raw input vector: [uav(3), gu_reported(3), flag(1), env features...].
inline std::vector<double> raw_input(Vec3 uav, Vec3 gu_reported, int flag, std::span<const double> env,
                                     bool use_env) {
    std::vector<double> v{uav.x, uav.y, uav.z, gu_reported.x, gu_reported.y, gu_reported.z, static_cast<double>(flag)};
    if (use_env) v.insert(v.end(), env.begin(), env.end());
    return v;
}

inline std::vector<double> raw_input(const ChannelSample& s, bool use_env) {
    static const std::vector<double> kEmpty;
    return raw_input(s.uav, s.gu_reported, s.noise_flag, s.env ? std::span<const double>(*s.env) : kEmpty, use_env);
}

inline NormStats fit_norm_stats(std::span<const ChannelSample> data, bool use_env) {
    if (data.empty()) throw Error(ErrorCategory::Config, "cannot fit normalization on an empty dataset");
    const std::size_t dim = raw_input(data.front(), use_env).size();
    const auto first = raw_input(data.front(), use_env);
    std::vector<double> sum(dim, 0.0), lo(first), hi(first);
    double ls = 0.0;
    for (const auto& s : data) {
        const auto r = raw_input(s, use_env);
        if (r.size() != dim) throw Error(ErrorCategory::Config, "inconsistent environment feature length");
        for (std::size_t i = 0; i < dim; ++i) {
            sum[i] += r[i];
            lo[i] = std::min(lo[i], r[i]);
            hi[i] = std::max(hi[i], r[i]);
        }
        ls += s.label_db;
    }
    const double n = static_cast<double>(data.size());
    std::vector<double> sq(dim, 0.0);
    double lsq = 0.0;
    for (const auto& s : data) {
        const auto r = raw_input(s, use_env);
        for (std::size_t i = 0; i < dim; ++i) sq[i] += (r[i] - sum[i] / n) * (r[i] - sum[i] / n);
        lsq += (s.label_db - ls / n) * (s.label_db - ls / n);
    }
    NormStats st;
    st.raw_dim = static_cast<int>(dim);
    std::vector<double> means, stds;
    for (std::size_t i = 0; i < dim; ++i) {
        if (hi[i] == lo[i]) continue; // constant in the fitting data: carries no information
        means.push_back(sum[i] / n);
        stds.push_back(std::sqrt(sq[i] / n));
        st.kept.push_back(static_cast<int>(i));
    }
    st.mean = Eigen::Map<nn::Vector>(means.data(), static_cast<Eigen::Index>(means.size()));
    st.stdev = Eigen::Map<nn::Vector>(stds.data(), static_cast<Eigen::Index>(stds.size()));
    st.label_mean = ls / n;
    const double lsd = std::sqrt(lsq / n);
    st.label_std = lsd > 1e-9 ? lsd : 1.0;
    return st;
}

struct CkmModel {
    std::vector<nn::ResMlp> members;
    NormStats norm;
    CkmHyper hyper;
    nlohmann::json training_meta = nlohmann::json::object();

    int ensemble_size() const { return static_cast<int>(members.size()); }
};

struct TrainReport {
    double holdout_rmse_db = 0.0;
    std::size_t train_size = 0;
    std::size_t holdout_size = 0;
    std::vector<double> member_final_loss;
};

/// Assembles normalized inputs (columns) for a set of samples.
inline nn::Matrix input_matrix(const NormStats& norm, std::span<const ChannelSample> data, bool use_env) {
    nn::Matrix x(static_cast<Eigen::Index>(norm.kept.size()), static_cast<Eigen::Index>(data.size()));
    for (std::size_t j = 0; j < data.size(); ++j) x.col(static_cast<Eigen::Index>(j)) = norm.normalize(raw_input(data[j], use_env));
    return x;
}

/// K x n matrix of per-member predictions in dB.
inline nn::Matrix member_predictions(const CkmModel& model, const nn::Matrix& normalized_inputs) {
    nn::Matrix out(model.ensemble_size(), normalized_inputs.cols());
    for (int k = 0; k < model.ensemble_size(); ++k) {
        out.row(k) = model.members[static_cast<std::size_t>(k)].infer(normalized_inputs).row(0);
    }
    return (out.array() * model.norm.label_std + model.norm.label_mean).matrix();
}

inline std::vector<double> predict_batch(const CkmModel& model, std::span<const ChannelSample> data) {
    const nn::Matrix preds = member_predictions(model, input_matrix(model.norm, data, model.hyper.use_env_features));
    const nn::Vector mean = preds.colwise().mean();
    return {mean.data(), mean.data() + mean.size()};
}

inline double rmse_db(const CkmModel& model, std::span<const ChannelSample> data) {
    if (data.empty()) return 0.0;
    const auto pred = predict_batch(model, data);
    double s = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) s += (pred[i] - data[i].label_db) * (pred[i] - data[i].label_db);
    return std::sqrt(s / static_cast<double>(data.size()));
}

namespace detail {

/// Trains one member in place on `rows` (indices into `x`/`y` columns).
inline double fit_member(nn::ResMlp& net, const nn::Matrix& x, const nn::Vector& y, std::vector<std::size_t> rows,
                         int epochs, int batch, double lr, double lr_floor_fraction, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    nn::Adam opt(lr);
    const auto params = net.params();
    double last = 0.0;
    const std::size_t bs = static_cast<std::size_t>(std::max(2, batch));
    for (int e = 0; e < epochs; ++e) {
        const double progress = epochs > 1 ? static_cast<double>(e) / (epochs - 1) : 1.0;
        const double cosine = 0.5 * (1.0 + std::cos(progress * std::numbers::pi));
        opt.set_lr(lr * (lr_floor_fraction + (1.0 - lr_floor_fraction) * cosine));
        std::shuffle(rows.begin(), rows.end(), rng);
        double epoch_loss = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < rows.size(); start += bs) {
            std::size_t end = std::min(rows.size(), start + bs);
            // A trailing single-row batch has no batch variance; fold it into the previous one.
            if (rows.size() - end == 1) end = rows.size();
            if (end - start < 2 && rows.size() >= 2) continue;
            const auto cols = static_cast<Eigen::Index>(end - start);
            nn::Matrix xb(x.rows(), cols);
            nn::Matrix yb(1, cols);
            for (Eigen::Index c = 0; c < cols; ++c) {
                const auto r = static_cast<Eigen::Index>(rows[start + static_cast<std::size_t>(c)]);
                xb.col(c) = x.col(r);
                yb(0, c) = y(r);
            }
            nn::zero_grad(params);
            const nn::Matrix pred = net.forward(xb, true);
            const nn::Matrix diff = pred - yb;
            const double loss = diff.squaredNorm() / static_cast<double>(cols);
            if (!std::isfinite(loss))
                throw Error(ErrorCategory::Numeric, "channel map training diverged (non-finite loss)");
            net.backward(2.0 * diff / static_cast<double>(cols));
            opt.step(params);
            epoch_loss += loss * static_cast<double>(cols);
            seen += static_cast<std::size_t>(cols);
            if (end == rows.size()) break;
        }
        if (seen > 0) last = epoch_loss / static_cast<double>(seen);
    }
    if (epochs > 0 && rows.size() >= 2) {
        nn::Matrix xa(x.rows(), static_cast<Eigen::Index>(rows.size()));
        for (std::size_t c = 0; c < rows.size(); ++c) xa.col(static_cast<Eigen::Index>(c)) = x.col(static_cast<Eigen::Index>(rows[c]));
        net.recalibrate(xa);
    }
    return last;
}

} // namespace detail

inline void validate(const CkmHyper& h) {
    if (h.epochs < 0 || h.batch < 1 || !(h.lr > 0.0) || h.ensemble < 1 || h.blocks < 0 || h.width < 1)
        throw Error(ErrorCategory::Config, "invalid channel map hyperparameters");
    if (!(h.holdout_fraction >= 0.0 && h.holdout_fraction < 1.0))
        throw Error(ErrorCategory::Config, "holdout_fraction must lie in [0, 1)");
    if (!(h.replay_ratio >= 0.0 && h.replay_ratio < 1.0))
        throw Error(ErrorCategory::Config, "replay_ratio must lie in [0, 1)");
}

/// Trains a K-member ensemble; each member sees a bootstrap resample of the training split
/// and its own initialization seed.
inline CkmModel train(std::span<const ChannelSample> dataset, const CkmHyper& hyper, TrainReport* report = nullptr) {
    validate(hyper);
    if (dataset.empty()) throw Error(ErrorCategory::Config, "cannot train on an empty dataset");

    std::mt19937_64 split_rng(hyper.seed);
    std::vector<std::size_t> idx(dataset.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), split_rng);
    std::size_t n_hold = static_cast<std::size_t>(hyper.holdout_fraction * static_cast<double>(dataset.size()));
    if (n_hold >= dataset.size()) n_hold = 0;
    std::vector<ChannelSample> train_set, hold_set;
    for (std::size_t i = 0; i < idx.size(); ++i) (i < n_hold ? hold_set : train_set).push_back(dataset[idx[i]]);

    CkmModel model;
    model.hyper = hyper;
    model.norm = fit_norm_stats(train_set, hyper.use_env_features);
    const nn::Matrix x = input_matrix(model.norm, train_set, hyper.use_env_features);
    nn::Vector y(static_cast<Eigen::Index>(train_set.size()));
    for (std::size_t i = 0; i < train_set.size(); ++i) y(static_cast<Eigen::Index>(i)) = model.norm.normalize_label(train_set[i].label_db);

    TrainReport rep;
    const int in_dim = static_cast<int>(model.norm.kept.size());
    for (int k = 0; k < hyper.ensemble; ++k) {
        const std::uint64_t member_seed = hyper.seed * 1000003ULL + static_cast<std::uint64_t>(k) * 7919ULL + 17ULL;
        std::mt19937_64 rng(member_seed);
        nn::ResMlp net(in_dim, hyper.width, hyper.blocks, rng);
        std::vector<std::size_t> rows(train_set.size());
        if (hyper.ensemble > 1) {
            std::uniform_int_distribution<std::size_t> draw(0, train_set.size() - 1);
            for (auto& r : rows) r = draw(rng);
        } else {
            std::iota(rows.begin(), rows.end(), 0);
        }
        rep.member_final_loss.push_back(detail::fit_member(net, x, y, std::move(rows), hyper.epochs, hyper.batch,
                                                           hyper.lr, hyper.lr_final_fraction, member_seed + 1));
        model.members.push_back(std::move(net));
    }
    rep.train_size = train_set.size();
    rep.holdout_size = hold_set.size();
    rep.holdout_rmse_db = rmse_db(model, hold_set);
    model.training_meta = {{"seed", hyper.seed},
                           {"epochs", hyper.epochs},
                           {"train_size", rep.train_size},
                           {"holdout_size", rep.holdout_size},
                           {"holdout_rmse_db", rep.holdout_rmse_db}};
    if (report) *report = rep;
    return model;
}

/// Continues training every member on the new data mixed with a replay draw from `replay_pool`
/// (fraction `replay_ratio` of the mixture). Normalization statistics are kept.
inline CkmModel update_incremental(const CkmModel& model, std::span<const ChannelSample> new_data,
                                   const CkmHyper& hyper, std::span<const ChannelSample> replay_pool = {}) {
    validate(hyper);
    if (new_data.empty()) return model;
    CkmModel out = model;
    std::mt19937_64 rng(hyper.seed ^ 0x5bd1e995ULL);

    std::vector<ChannelSample> mix(new_data.begin(), new_data.end());
    if (!replay_pool.empty() && hyper.replay_ratio > 0.0) {
        const auto n_replay = static_cast<std::size_t>(
            std::llround(hyper.replay_ratio / (1.0 - hyper.replay_ratio) * static_cast<double>(new_data.size())));
        std::uniform_int_distribution<std::size_t> draw(0, replay_pool.size() - 1);
        for (std::size_t i = 0; i < n_replay; ++i) mix.push_back(replay_pool[draw(rng)]);
    }
    const bool use_env = out.hyper.use_env_features;
    const nn::Matrix x = input_matrix(out.norm, mix, use_env);
    nn::Vector y(static_cast<Eigen::Index>(mix.size()));
    for (std::size_t i = 0; i < mix.size(); ++i) y(static_cast<Eigen::Index>(i)) = out.norm.normalize_label(mix[i].label_db);

    for (int k = 0; k < out.ensemble_size(); ++k) {
        std::vector<std::size_t> rows(mix.size());
        std::uniform_int_distribution<std::size_t> draw(0, mix.size() - 1);
        if (out.ensemble_size() > 1) {
            for (auto& r : rows) r = draw(rng);
        } else {
            std::iota(rows.begin(), rows.end(), 0);
        }
        detail::fit_member(out.members[static_cast<std::size_t>(k)], x, y, std::move(rows), hyper.update_epochs,
                           hyper.batch, hyper.lr, hyper.lr_final_fraction, hyper.seed + 31ULL * static_cast<std::uint64_t>(k));
    }
    auto updates = out.training_meta.value("incremental_updates", 0);
    out.training_meta["incremental_updates"] = updates + 1;
    return out;
}

/// Ensemble-mean prediction in dB.
inline ChannelGain predict(const CkmModel& model, Vec3 uav, Vec3 gu_reported, int flag, std::span<const double> env) {
    const auto raw = raw_input(uav, gu_reported, flag, env, model.hyper.use_env_features);
    if (static_cast<int>(raw.size()) != model.norm.raw_dim)
        throw Error(ErrorCategory::Config, "environment feature length does not match the model");
    const nn::Matrix x = model.norm.normalize(raw);
    return {member_predictions(model, x).mean()};
}

struct PredictionInterval {
    double median = 0.0;
    double lo = 0.0;
    double hi = 0.0;
    double width() const { return hi - lo; }
};

/// Linear-interpolated percentile (q in [0, 1]) of a non-empty sample.
inline double percentile(std::vector<double> v, double q) {
    if (v.empty()) throw Error(ErrorCategory::Domain, "percentile of an empty sample");
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// 5th / 50th / 95th percentiles of the member predictions.
inline PredictionInterval interval_from_members(std::span<const double> members) {
    std::vector<double> v(members.begin(), members.end());
    return {percentile(v, 0.5), percentile(v, 0.05), percentile(v, 0.95)};
}

inline PredictionInterval predict_interval(const CkmModel& model, Vec3 uav, Vec3 gu_reported, int flag,
                                           std::span<const double> env) {
    if (model.ensemble_size() < 3) throw Error(ErrorCategory::Config, "prediction intervals need at least 3 members");
    const auto raw = raw_input(uav, gu_reported, flag, env, model.hyper.use_env_features);
    if (static_cast<int>(raw.size()) != model.norm.raw_dim)
        throw Error(ErrorCategory::Config, "environment feature length does not match the model");
    const nn::Matrix p = member_predictions(model, model.norm.normalize(raw));
    std::vector<double> v(p.data(), p.data() + p.size());
    return interval_from_members(v);
}

// ---- persistence ----------------------------------------------------------

inline void save_model(const CkmModel& model, const std::string& path) {
    TensorArchive a;
    a.kind = "ckm";
    a.meta = {{"hyper", model.hyper},
              {"ensemble", model.ensemble_size()},
              {"in_dim", model.norm.kept.size()},
              {"raw_dim", model.norm.raw_dim},
              {"kept", model.norm.kept},
              {"label_mean", model.norm.label_mean},
              {"label_std", model.norm.label_std},
              {"training", model.training_meta}};
    a.tensors.emplace_back("norm.mean", model.norm.mean);
    a.tensors.emplace_back("norm.std", model.norm.stdev);
    for (int k = 0; k < model.ensemble_size(); ++k) {
        nn::ResMlp m = model.members[static_cast<std::size_t>(k)];
        a.add("member" + std::to_string(k) + ".", m.state());
    }
    save_archive(a, path);
}

inline CkmModel load_model(const std::string& path) {
    const TensorArchive a = load_archive(path, "ckm");
    CkmModel model;
    try {
        model.hyper = a.meta.at("hyper").get<CkmHyper>();
        model.norm.kept = a.meta.at("kept").get<std::vector<int>>();
        model.norm.raw_dim = a.meta.at("raw_dim").get<int>();
        model.norm.label_mean = a.meta.at("label_mean").get<double>();
        model.norm.label_std = a.meta.at("label_std").get<double>();
        model.training_meta = a.meta.value("training", nlohmann::json::object());
        const int k_members = a.meta.at("ensemble").get<int>();
        model.norm.mean = a.find("norm.mean");
        model.norm.stdev = a.find("norm.std");
        const int in_dim = static_cast<int>(model.norm.kept.size());
        std::mt19937_64 rng(0);
        for (int k = 0; k < k_members; ++k) {
            nn::ResMlp net(in_dim, model.hyper.width, model.hyper.blocks, rng);
            a.restore("member" + std::to_string(k) + ".", net.state());
            model.members.push_back(std::move(net));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCategory::Format, path + ": " + e.what());
    }
    return model;
}

// ---- dataset CSV ----------------------------------------------------------
// Header: uav_x,uav_y,uav_z,gu_x,gu_y,gu_z,flag,env_hash,gain_db
// gu_* is the reported position. env_hash identifies the environment features the row was
// collected with; loading requires the matching world.

inline void save_dataset_csv(std::span<const ChannelSample> data, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCategory::Io, "cannot write " + path);
    out << "uav_x,uav_y,uav_z,gu_x,gu_y,gu_z,flag,env_hash,gain_db\n";
    out << std::setprecision(17);
    for (const auto& s : data) {
        out << s.uav.x << ',' << s.uav.y << ',' << s.uav.z << ',' << s.gu_reported.x << ',' << s.gu_reported.y << ','
            << s.gu_reported.z << ',' << s.noise_flag << ',' << (s.env ? features_hash(*s.env) : std::string("none"))
            << ',' << s.label_db << '\n';
    }
}

inline std::vector<ChannelSample> load_dataset_csv(const std::string& path, const World& world,
                                                   int feature_buildings) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCategory::Io, "cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != "uav_x,uav_y,uav_z,gu_x,gu_y,gu_z,flag,env_hash,gain_db")
        throw Error(ErrorCategory::Format, path + ": unexpected dataset header");
    auto env = std::make_shared<const std::vector<double>>(environment_features(world, feature_buildings));
    const std::string hash = features_hash(*env);
    std::vector<ChannelSample> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != 9) throw Error(ErrorCategory::Format, path + ":" + std::to_string(lineno) + ": expected 9 columns");
        try {
            ChannelSample s;
            s.uav = {std::stod(cells[0]), std::stod(cells[1]), std::stod(cells[2])};
            s.gu_reported = {std::stod(cells[3]), std::stod(cells[4]), std::stod(cells[5])};
            s.noise_flag = std::stoi(cells[6]);
            if (cells[7] != hash)
                throw Error(ErrorCategory::Format, path + ":" + std::to_string(lineno) + ": environment hash does not match the world");
            s.label_db = std::stod(cells[8]);
            s.gu_true = s.noise_flag ? Vec3{std::nan(""), std::nan(""), std::nan("")} : s.gu_reported;
            s.env = env;
            out.push_back(std::move(s));
        } catch (const std::logic_error&) {
            throw Error(ErrorCategory::Format, path + ":" + std::to_string(lineno) + ": malformed number");
        }
    }
    return out;
}

} // namespace uavckm
