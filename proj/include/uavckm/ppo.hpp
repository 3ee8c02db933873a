#pragma once

// PPO with a clipped surrogate objective over a squashed diagonal Gaussian policy.
// Actor and critic are separate networks with separate optimizers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uavckm/env.hpp"
#include "uavckm/errors.hpp"
#include "uavckm/nn.hpp"
#include "uavckm/weights_io.hpp"

namespace uavckm {

struct PpoConfig {
    double gamma = 0.99;
    double lr = 1e-5;
    double clip = 0.2;
    double gae_lambda = 0.95;
    int rollout_len = 2048;
    int epochs = 10;
    int minibatch = 256;
    int max_episodes = 40000;
    double entropy_coef = 0.0;
    double max_grad_norm = 0.5;
    double init_log_std = 0.0;
    int hidden = 256;
    std::uint64_t seed = 1;

    void validate() const {
        if (!(clip > 0.0 && clip < 1.0)) throw Error(ErrorCategory::Config, "clip range must lie in (0, 1)");
        if (!(gamma > 0.0 && gamma <= 1.0)) throw Error(ErrorCategory::Config, "gamma must lie in (0, 1]");
        if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw Error(ErrorCategory::Config, "gae_lambda must lie in [0, 1]");
        if (!(lr > 0.0) || rollout_len < 1 || epochs < 1 || minibatch < 1 || max_episodes < 0 || hidden < 1)
            throw Error(ErrorCategory::Config, "invalid PPO schedule");
    }
};

inline void to_json(nlohmann::json& j, const PpoConfig& c) {
    j = {{"gamma", c.gamma}, {"lr", c.lr}, {"clip", c.clip}, {"gae_lambda", c.gae_lambda},
         {"rollout_len", c.rollout_len}, {"epochs", c.epochs}, {"minibatch", c.minibatch},
         {"max_episodes", c.max_episodes}, {"entropy_coef", c.entropy_coef}, {"max_grad_norm", c.max_grad_norm},
         {"init_log_std", c.init_log_std}, {"hidden", c.hidden}, {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, PpoConfig& c) {
    const PpoConfig d;
    c.gamma = j.value("gamma", d.gamma);
    c.lr = j.value("lr", d.lr);
    c.clip = j.value("clip", d.clip);
    c.gae_lambda = j.value("gae_lambda", d.gae_lambda);
    c.rollout_len = j.value("rollout_len", d.rollout_len);
    c.epochs = j.value("epochs", d.epochs);
    c.minibatch = j.value("minibatch", d.minibatch);
    c.max_episodes = j.value("max_episodes", d.max_episodes);
    c.entropy_coef = j.value("entropy_coef", d.entropy_coef);
    c.max_grad_norm = j.value("max_grad_norm", d.max_grad_norm);
    c.init_log_std = j.value("init_log_std", d.init_log_std);
    c.hidden = j.value("hidden", d.hidden);
    c.seed = j.value("seed", d.seed);
}

// ---- action squashing ---------------------------------------------------------
// Components 0 and 2 map tanh(u) to [-1, 1]; components 1 and 3 map (tanh(u) + 1) / 2 to [0, 1].

inline constexpr std::array<double, 4> kSquashScale{1.0, 0.5, 1.0, 0.5};
inline constexpr std::array<double, 4> kSquashOffset{0.0, 0.5, 0.0, 0.5};
inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

inline double squash(double u, int dim) {
    return kSquashOffset[static_cast<std::size_t>(dim)] + kSquashScale[static_cast<std::size_t>(dim)] * std::tanh(u);
}

/// log |d squash / du| = log(scale) + log(1 - tanh(u)^2), evaluated without cancellation.
inline double log_squash_jacobian(double u, int dim) {
    const double softplus = std::max(-2.0 * u, 0.0) + std::log1p(std::exp(-std::abs(2.0 * u)));
    return std::log(kSquashScale[static_cast<std::size_t>(dim)]) + 2.0 * (std::numbers::ln2 - u - softplus);
}

inline double gaussian_log_density(double u, double mean, double log_std) {
    const double z = (u - mean) / std::exp(log_std);
    return -0.5 * z * z - log_std - 0.5 * std::log(2.0 * std::numbers::pi);
}

/// Actor: MLP producing action means plus a state-independent log-std vector.
struct PolicyNet {
    nn::Mlp mean_net;
    nn::Matrix log_std;  // act_dim x 1
    nn::Matrix dlog_std;

    PolicyNet() = default;
    template <class Rng>
    PolicyNet(int obs_dim, int hidden, Rng& rng, double init_log_std = 0.0, int act_dim = 4)
        : mean_net({obs_dim, hidden, hidden, act_dim}, rng, 0.01),
          log_std(nn::Matrix::Constant(act_dim, 1, std::clamp(init_log_std, kLogStdMin, kLogStdMax))),
          dlog_std(nn::Matrix::Zero(act_dim, 1)) {}

    int obs_dim() const { return mean_net.in_dim(); }
    int act_dim() const { return mean_net.out_dim(); }

    std::vector<nn::ParamRef> params() {
        auto p = mean_net.params();
        p.push_back({"log_std", &log_std, &dlog_std});
        return p;
    }
    std::vector<nn::StateRef> state() {
        auto s = mean_net.state();
        s.push_back({"log_std", &log_std});
        return s;
    }
    void project() { log_std = log_std.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax); }
};

/// Critic: MLP producing a scalar state value.
struct ValueNet {
    nn::Mlp net;

    ValueNet() = default;
    template <class Rng>
    ValueNet(int obs_dim, int hidden, Rng& rng) : net({obs_dim, hidden, hidden, 1}, rng, 1.0) {}

    double value(std::span<const double> obs) const {
        const nn::Matrix x = Eigen::Map<const nn::Matrix>(obs.data(), static_cast<Eigen::Index>(obs.size()), 1);
        return net.infer(x)(0, 0);
    }
};

struct SampledAction {
    std::vector<double> pre_squash;
    std::vector<double> action;
    double log_prob = 0.0;
};

inline nn::Vector policy_mean(const PolicyNet& policy, std::span<const double> obs) {
    if (static_cast<int>(obs.size()) != policy.obs_dim())
        throw Error(ErrorCategory::Domain, "observation size does not match the policy input");
    const nn::Matrix x = Eigen::Map<const nn::Matrix>(obs.data(), static_cast<Eigen::Index>(obs.size()), 1);
    return policy.mean_net.infer(x).col(0);
}

/// Log density of the squashed action whose pre-squash value is `u`.
inline double squashed_log_prob(std::span<const double> u, const nn::Vector& mean, const nn::Matrix& log_std) {
    double lp = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        lp += gaussian_log_density(u[i], mean(k), log_std(k, 0)) - log_squash_jacobian(u[i], static_cast<int>(i));
    }
    return lp;
}

template <class Rng>
SampledAction sample_action(const PolicyNet& policy, std::span<const double> obs, Rng& rng) {
    const nn::Vector mean = policy_mean(policy, obs);
    std::normal_distribution<double> n(0.0, 1.0);
    SampledAction s;
    for (Eigen::Index i = 0; i < mean.size(); ++i) {
        const double u = mean(i) + std::exp(policy.log_std(i, 0)) * n(rng);
        s.pre_squash.push_back(u);
        s.action.push_back(squash(u, static_cast<int>(i)));
    }
    s.log_prob = squashed_log_prob(s.pre_squash, mean, policy.log_std);
    return s;
}

/// Squashed mean; used for evaluation.
inline std::vector<double> deterministic_action(const PolicyNet& policy, std::span<const double> obs) {
    const nn::Vector mean = policy_mean(policy, obs);
    std::vector<double> a;
    for (Eigen::Index i = 0; i < mean.size(); ++i) a.push_back(squash(mean(i), static_cast<int>(i)));
    return a;
}

// ---- advantages -----------------------------------------------------------------

struct Transition {
    std::vector<double> obs;
    std::vector<double> pre_squash;
    std::vector<double> action;
    double log_prob = 0.0;
    double reward = 0.0;
    double value = 0.0;
    bool done = false;
};

struct AdvantageResult {
    std::vector<double> raw;
    std::vector<double> normalized;
    std::vector<double> returns;
};

inline std::vector<double> normalize_advantages(std::span<const double> a) {
    std::vector<double> out(a.begin(), a.end());
    if (out.empty()) return out;
    double mean = 0.0;
    for (double x : out) mean += x;
    mean /= static_cast<double>(out.size());
    double var = 0.0;
    for (double x : out) var += (x - mean) * (x - mean);
    var /= static_cast<double>(out.size());
    const double sd = std::sqrt(var);
    for (double& x : out) x = sd > 1e-12 ? (x - mean) / sd : x - mean;
    return out;
}

/// Generalized advantage estimation over a segment that may span episode boundaries.
/// `done[t]` cuts bootstrapping after step t; `last_value` is V of the state after the final step.
inline AdvantageResult compute_advantages(std::span<const double> rewards, std::span<const double> values,
                                          std::span<const std::uint8_t> done, double last_value, double gamma, double lambda) {
    const std::size_t n = rewards.size();
    AdvantageResult r;
    r.raw.assign(n, 0.0);
    r.returns.assign(n, 0.0);
    double next_adv = 0.0;
    double next_value = last_value;
    for (std::size_t k = n; k-- > 0;) {
        const double keep = done[k] ? 0.0 : 1.0;
        const double delta = rewards[k] + gamma * next_value * keep - values[k];
        next_adv = delta + gamma * lambda * keep * next_adv;
        r.raw[k] = next_adv;
        r.returns[k] = next_adv + values[k];
        next_value = values[k];
    }
    r.normalized = normalize_advantages(r.raw);
    return r;
}

inline AdvantageResult compute_advantages(std::span<const Transition> batch, double last_value, double gamma,
                                          double lambda) {
    std::vector<double> rewards, values;
    std::vector<std::uint8_t> done;
    for (const auto& t : batch) {
        rewards.push_back(t.reward);
        values.push_back(t.value);
        done.push_back(t.done ? 1 : 0);
    }
    return compute_advantages(rewards, values, done, last_value, gamma, lambda);
}

// ---- update ---------------------------------------------------------------------

struct UpdateStats {
    double policy_loss = 0.0;
    double value_loss = 0.0;
    double clip_fraction = 0.0;
    double approx_kl = 0.0;
    double max_initial_ratio_error = 0.0; // |ratio - 1| on the first minibatch pass
};

struct PolicyBatch {
    nn::Matrix obs;        // obs_dim x B
    nn::Matrix pre_squash; // act_dim x B
    nn::Vector old_log_prob;
    nn::Vector advantage;
};

struct SurrogateResult {
    double loss = 0.0;
    double clip_fraction = 0.0;
    double approx_kl = 0.0;
    double max_ratio_error = 0.0;
};

/// Clipped surrogate loss, -mean(min(r A, clip(r) A)) - c_ent * entropy. Accumulates gradients
/// into the policy's parameter buffers (caller zeroes them).
inline SurrogateResult surrogate_loss_and_grad(PolicyNet& policy, const PolicyBatch& b, double clip,
                                               double entropy_coef) {
    const auto B = b.obs.cols();
    const int A = policy.act_dim();
    const nn::Matrix mean = policy.mean_net.forward(b.obs);
    const nn::Vector sigma = policy.log_std.col(0).array().exp();
    const nn::Matrix z = (b.pre_squash - mean).array().colwise() / sigma.array();

    SurrogateResult res;
    nn::Vector dlogp(B);
    double loss = 0.0;
    for (Eigen::Index j = 0; j < B; ++j) {
        double logp = 0.0;
        for (int i = 0; i < A; ++i) {
            logp += -0.5 * z(i, j) * z(i, j) - policy.log_std(i, 0) - 0.5 * std::log(2.0 * std::numbers::pi) -
                    log_squash_jacobian(b.pre_squash(i, j), i);
        }
        const double ratio = std::exp(logp - b.old_log_prob(j));
        const double adv = b.advantage(j);
        const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip);
        const double unclipped_obj = ratio * adv;
        const double clipped_obj = clipped * adv;
        loss -= std::min(unclipped_obj, clipped_obj);
        dlogp(j) = unclipped_obj <= clipped_obj ? -unclipped_obj / static_cast<double>(B) : 0.0;
        if (std::abs(ratio - 1.0) > clip) res.clip_fraction += 1.0;
        res.approx_kl += b.old_log_prob(j) - logp;
        res.max_ratio_error = std::max(res.max_ratio_error, std::abs(ratio - 1.0));
    }
    loss /= static_cast<double>(B);
    double entropy = 0.0;
    for (int i = 0; i < A; ++i) entropy += policy.log_std(i, 0) + 0.5 + 0.5 * std::log(2.0 * std::numbers::pi);
    loss -= entropy_coef * entropy;
    res.loss = loss;
    res.clip_fraction /= static_cast<double>(B);
    res.approx_kl /= static_cast<double>(B);

    // d logp / d mean = z / sigma ; d logp / d log_std = z^2 - 1
    const nn::Matrix dmean = (z.array().colwise() / sigma.array()).rowwise() * dlogp.transpose().array();
    policy.mean_net.backward(dmean);
    const nn::Matrix zz = z.array().square() - 1.0;
    policy.dlog_std.col(0) += zz * dlogp;
    policy.dlog_std.array() -= entropy_coef;
    return res;
}

/// Mean squared error of the critic against `returns`; accumulates gradients.
inline double value_loss_and_grad(ValueNet& value, const nn::Matrix& obs, const nn::Vector& returns) {
    const nn::Matrix v = value.net.forward(obs);
    const nn::Matrix diff = v - returns.transpose();
    const double B = static_cast<double>(obs.cols());
    value.net.backward(2.0 * diff / B);
    return diff.squaredNorm() / B;
}

struct PpoLearner {
    PolicyNet policy;
    ValueNet value;
    nn::Adam policy_opt;
    nn::Adam value_opt;
    PpoConfig config;

    PpoLearner() = default;
    PpoLearner(int obs_dim, const PpoConfig& cfg) : config(cfg) {
        cfg.validate();
        std::mt19937_64 rng(cfg.seed);
        policy = PolicyNet(obs_dim, cfg.hidden, rng, cfg.init_log_std);
        value = ValueNet(obs_dim, cfg.hidden, rng);
        policy_opt = nn::Adam(cfg.lr);
        value_opt = nn::Adam(cfg.lr);
    }
};

/// Several epochs of shuffled minibatch updates on one rollout. The critic is fitted to the
/// GAE returns; the actor to the clipped surrogate with normalized advantages.
template <class Rng>
UpdateStats ppo_update(PpoLearner& learner, std::span<const Transition> batch, const AdvantageResult& adv, Rng& rng) {
    if (batch.empty()) throw Error(ErrorCategory::Domain, "empty PPO batch");
    const auto& cfg = learner.config;
    const int obs_dim = learner.policy.obs_dim();
    const int act_dim = learner.policy.act_dim();
    std::vector<std::size_t> idx(batch.size());
    std::iota(idx.begin(), idx.end(), 0);

    UpdateStats stats;
    int n_batches = 0;
    bool first = true;
    const auto policy_params = learner.policy.params();
    const auto value_params = learner.value.net.params();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(idx.begin(), idx.end(), rng);
        for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(cfg.minibatch)) {
            const std::size_t end = std::min(idx.size(), start + static_cast<std::size_t>(cfg.minibatch));
            const auto B = static_cast<Eigen::Index>(end - start);
            PolicyBatch pb;
            pb.obs.resize(obs_dim, B);
            pb.pre_squash.resize(act_dim, B);
            pb.old_log_prob.resize(B);
            pb.advantage.resize(B);
            nn::Vector returns(B);
            for (Eigen::Index c = 0; c < B; ++c) {
                const std::size_t k = idx[start + static_cast<std::size_t>(c)];
                const auto& t = batch[k];
                for (int i = 0; i < obs_dim; ++i) pb.obs(i, c) = t.obs[static_cast<std::size_t>(i)];
                for (int i = 0; i < act_dim; ++i) pb.pre_squash(i, c) = t.pre_squash[static_cast<std::size_t>(i)];
                pb.old_log_prob(c) = t.log_prob;
                pb.advantage(c) = adv.normalized[k];
                returns(c) = adv.returns[k];
            }

            nn::zero_grad(value_params);
            const double vloss = value_loss_and_grad(learner.value, pb.obs, returns);
            nn::zero_grad(policy_params);
            const auto s = surrogate_loss_and_grad(learner.policy, pb, cfg.clip, cfg.entropy_coef);
            if (!std::isfinite(vloss) || !std::isfinite(s.loss))
                throw Error(ErrorCategory::Numeric, "PPO update produced a non-finite loss");
            if (first) stats.max_initial_ratio_error = s.max_ratio_error;

            if (cfg.max_grad_norm > 0.0) {
                nn::clip_grad_norm(value_params, cfg.max_grad_norm);
                nn::clip_grad_norm(policy_params, cfg.max_grad_norm);
            }
            learner.value_opt.step(value_params);
            learner.policy_opt.step(policy_params);
            learner.policy.project();

            stats.policy_loss += s.loss;
            stats.value_loss += vloss;
            stats.clip_fraction += s.clip_fraction;
            stats.approx_kl += s.approx_kl;
            ++n_batches;
            first = false;
        }
    }
    stats.policy_loss /= n_batches;
    stats.value_loss /= n_batches;
    stats.clip_fraction /= n_batches;
    stats.approx_kl /= n_batches;
    return stats;
}

// ---- training loop --------------------------------------------------------------

struct EpisodeStats {
    int episode = 0;
    double episode_return = 0.0;
    double completion_time = 0.0;
    bool success = false;
    int punishment_count = 0;
};

struct TrainHooks {
    std::function<void(const EpisodeStats&)> on_episode;
    std::function<void(int episode, const UpdateStats&)> on_update;
    std::function<void(int episode, const PpoLearner&)> on_checkpoint;
    int checkpoint_every = 0;
};

/// Seed of the environment layout for a training episode.
inline std::uint64_t episode_seed(std::uint64_t base, int episode) {
    return base * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(episode) * 2654435761ULL + 1ULL;
}

struct TrainResult {
    PpoLearner learner;
    std::vector<EpisodeStats> curve;
    std::vector<UpdateStats> updates;
};

/// Runs `config.max_episodes` episodes, updating every `rollout_len` environment steps.
inline TrainResult train_loop(CommEnv& env, const PpoConfig& config, const TrainHooks& hooks = {}) {
    config.validate();
    TrainResult out;
    out.learner = PpoLearner(env.observation_dim(), config);
    auto& L = out.learner;
    std::mt19937_64 rng(config.seed ^ 0xA5A5A5A5ULL);
    std::vector<Transition> buffer;
    buffer.reserve(static_cast<std::size_t>(config.rollout_len));
    long global_step = 0;

    for (int ep = 0; ep < config.max_episodes; ++ep) {
        auto obs = env.reset(episode_seed(config.seed, ep));
        EpisodeStats st;
        st.episode = ep;
        bool done = false;
        while (!done) {
            const auto s = sample_action(L.policy, obs, rng);
            Transition t;
            t.obs = obs;
            t.pre_squash = s.pre_squash;
            t.action = s.action;
            t.log_prob = s.log_prob;
            t.value = L.value.value(obs);
            const auto r = env.step(EnvAction::from(s.action));
            t.reward = r.reward;
            t.done = r.terminated;
            buffer.push_back(std::move(t));
            st.episode_return += r.reward;
            obs = r.observation;
            done = r.terminated;
            if (done) {
                st.completion_time = r.info.t * env.config().dt;
                st.success = r.success;
                st.punishment_count = env.state().punishment_count;
            }
            ++global_step;
            if (global_step % config.rollout_len == 0) {
                const double last_value = done ? 0.0 : L.value.value(obs);
                const auto adv = compute_advantages(buffer, last_value, config.gamma, config.gae_lambda);
                const auto us = ppo_update(L, buffer, adv, rng);
                out.updates.push_back(us);
                if (hooks.on_update) hooks.on_update(ep, us);
                buffer.clear();
            }
        }
        out.curve.push_back(st);
        if (hooks.on_episode) hooks.on_episode(st);
        if (hooks.on_checkpoint && hooks.checkpoint_every > 0 && (ep + 1) % hooks.checkpoint_every == 0)
            hooks.on_checkpoint(ep, L);
    }
    return out;
}

// ---- checkpoints ------------------------------------------------------------------

inline void save_checkpoint(const PpoLearner& learner, const std::string& path, const nlohmann::json& extra = {}) {
    TensorArchive a;
    a.kind = "policy";
    PpoLearner copy = learner;
    a.meta = {{"obs_dim", copy.policy.obs_dim()}, {"act_dim", copy.policy.act_dim()}, {"config", copy.config},
              {"extra", extra}};
    a.add("actor.", copy.policy.state());
    a.add("critic.", copy.value.net.state());
    save_archive(a, path);
}

inline PpoLearner load_checkpoint(const std::string& path, nlohmann::json* extra = nullptr) {
    const TensorArchive a = load_archive(path, "policy");
    PpoLearner L;
    try {
        const auto cfg = a.meta.at("config").get<PpoConfig>();
        L = PpoLearner(a.meta.at("obs_dim").get<int>(), cfg);
        if (a.meta.at("act_dim").get<int>() != L.policy.act_dim())
            throw Error(ErrorCategory::Format, path + ": unexpected action dimension");
        if (extra) *extra = a.meta.value("extra", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCategory::Format, path + ": " + e.what());
    }
    a.restore("actor.", L.policy.state());
    a.restore("critic.", L.value.net.state());
    return L;
}

} // namespace uavckm
