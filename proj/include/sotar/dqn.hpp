#pragma once

// Action-value learner: feed-forward approximator with dueling value and
// advantage heads, double-Q target computation, uniform replay, and Adam
// updates. Masked action slots never contribute to the dueling baseline,
// the argmax, or bootstrapped targets.

#include <Eigen/Dense>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sotar/env.hpp"

namespace sotar {

struct TrainerConfig {
    double gamma = 0.95;
    int batch_size = 128;
    double learning_rate = 2e-5;
    int buffer_capacity = 100000;
    int target_sync = 1000;  // updates between target-net synchronizations
    int warmup = 2000;       // transitions stored before updates begin
    int update_every = 1;    // env steps per gradient update
    int episodes = 0;
    double epsilon_start = 1.0;
    double epsilon_end = 0.05;
    double epsilon_decay_fraction = 0.6;  // share of episodes spent decaying
    std::uint64_t seed = 0;
    enum class TargetRule { Double, Vanilla };
    TargetRule target_rule = TargetRule::Double;
    std::vector<int> hidden = {512, 256};

    double epsilon_at(int episode) const {
        int decay = std::max(1, static_cast<int>(episodes * epsilon_decay_fraction));
        if (episode >= decay) return epsilon_end;
        double f = static_cast<double>(episode) / decay;
        return epsilon_start + f * (epsilon_end - epsilon_start);
    }
};

class QApproximator {
public:
    QApproximator() = default;

    QApproximator(int input_dim, int num_actions, const std::vector<int>& hidden,
                  std::uint64_t seed)
        : input_dim_(input_dim), num_actions_(num_actions), hidden_(hidden) {
        std::mt19937_64 rng(seed);
        int prev = input_dim;
        for (int h : hidden) {
            weights_.push_back(uniform_fan_in(h, prev, rng));
            biases_.push_back(Eigen::MatrixXd::Zero(h, 1));
            prev = h;
        }
        // Heads start at zero so the untrained policy is uniform under the
        // lowest-index tie-break.
        value_w_ = Eigen::MatrixXd::Zero(1, prev);
        value_b_ = Eigen::MatrixXd::Zero(1, 1);
        adv_w_ = Eigen::MatrixXd::Zero(num_actions, prev);
        adv_b_ = Eigen::MatrixXd::Zero(num_actions, 1);
        init_adam();
    }

    int input_dim() const { return input_dim_; }
    int num_actions() const { return num_actions_; }

    // Q-values for one state; masked slots hold -infinity.
    Eigen::VectorXd q_values(const StateVector& s) const {
        Eigen::MatrixXd x = Eigen::Map<const Eigen::VectorXd>(
            s.features.data(), static_cast<long>(s.features.size()));
        Eigen::MatrixXd q = q_batch(x, {s.mask});
        Eigen::VectorXd out = q.col(0);
        for (int a = 0; a < num_actions_; ++a)
            if (!s.mask[a]) out(a) = -std::numeric_limits<double>::infinity();
        return out;
    }

    // Raw dueling Q for a batch of states (columns); masks drive only the
    // advantage baseline here, not any -inf substitution.
    Eigen::MatrixXd q_batch(const Eigen::MatrixXd& x,
                            const std::vector<std::vector<std::uint8_t>>& masks) const {
        Cache c;
        forward(x, masks, c);
        return c.q;
    }

    // Mean squared TD error over the batch columns and its analytic
    // gradients, in parameter_tensors() order.
    double loss_gradients(const Eigen::MatrixXd& x,
                          const std::vector<std::vector<std::uint8_t>>& masks,
                          const std::vector<int>& actions,
                          const Eigen::VectorXd& targets,
                          std::vector<Eigen::MatrixXd>& grads) const {
        const long batch = x.cols();
        Cache c;
        forward(x, masks, c);

        Eigen::VectorXd pred(batch);
        for (long i = 0; i < batch; ++i) pred(i) = c.q(actions[i], i);
        Eigen::VectorXd err = pred - targets;
        double loss = err.squaredNorm() / static_cast<double>(batch);
        if (!std::isfinite(loss)) {
            std::ostringstream msg;
            msg << "non-finite training loss (" << loss << "); max |pred| "
                << pred.cwiseAbs().maxCoeff() << ", max |target| "
                << targets.cwiseAbs().maxCoeff();
            throw std::runtime_error(msg.str());
        }

        // dL/dQ(a_i, i) = 2/B * err_i; fan out through the dueling heads.
        Eigen::MatrixXd d_value = Eigen::MatrixXd::Zero(1, batch);
        Eigen::MatrixXd d_adv = Eigen::MatrixXd::Zero(num_actions_, batch);
        for (long i = 0; i < batch; ++i) {
            double g = 2.0 * err(i) / static_cast<double>(batch);
            d_value(0, i) = g;
            int n = 0;
            for (int a = 0; a < num_actions_; ++a) n += masks[i][a] ? 1 : 0;
            d_adv(actions[i], i) += g;
            for (int a = 0; a < num_actions_; ++a)
                if (masks[i][a]) d_adv(a, i) -= g / n;
        }

        const size_t layers = weights_.size();
        grads.assign(2 * layers + 4, {});
        const Eigen::MatrixXd& last = c.activations.back();
        grads[2 * layers + 0] = d_value * last.transpose();
        grads[2 * layers + 1] = d_value.rowwise().sum();
        grads[2 * layers + 2] = d_adv * last.transpose();
        grads[2 * layers + 3] = d_adv.rowwise().sum();

        Eigen::MatrixXd delta = value_w_.transpose() * d_value +
                                adv_w_.transpose() * d_adv;
        for (int l = static_cast<int>(layers) - 1; l >= 0; --l) {
            delta = delta.cwiseProduct(
                (c.pre_activations[l].array() > 0.0).cast<double>().matrix());
            const Eigen::MatrixXd& in = l == 0 ? x : c.activations[l - 1];
            grads[l] = delta * in.transpose();
            grads[layers + l] = delta.rowwise().sum();
            if (l > 0) delta = weights_[l].transpose() * delta;
        }
        return loss;
    }

    // One Adam step on the mean squared TD error; returns the pre-step loss.
    double gradient_step(const Eigen::MatrixXd& x,
                         const std::vector<std::vector<std::uint8_t>>& masks,
                         const std::vector<int>& actions,
                         const Eigen::VectorXd& targets, double learning_rate) {
        std::vector<Eigen::MatrixXd> grads;
        double loss = loss_gradients(x, masks, actions, targets, grads);
        apply_adam(grads, learning_rate);
        return loss;
    }

    void copy_parameters_from(const QApproximator& other) {
        weights_ = other.weights_;
        biases_ = other.biases_;
        value_w_ = other.value_w_;
        value_b_ = other.value_b_;
        adv_w_ = other.adv_w_;
        adv_b_ = other.adv_b_;
    }

    bool same_parameters(const QApproximator& other) const {
        auto eq = [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
            return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
        };
        for (size_t l = 0; l < weights_.size(); ++l)
            if (!eq(weights_[l], other.weights_[l]) ||
                !eq(biases_[l], other.biases_[l]))
                return false;
        return eq(value_w_, other.value_w_) && eq(value_b_, other.value_b_) &&
               eq(adv_w_, other.adv_w_) && eq(adv_b_, other.adv_b_);
    }

    // Flat parameter access, used by the finite-difference gradient checks.
    std::vector<Eigen::MatrixXd*> parameter_tensors() {
        std::vector<Eigen::MatrixXd*> ps;
        for (auto& w : weights_) ps.push_back(&w);
        for (auto& b : biases_) ps.push_back(&b);
        ps.push_back(&value_w_);
        ps.push_back(&value_b_);
        ps.push_back(&adv_w_);
        ps.push_back(&adv_b_);
        return ps;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["format"] = 1;
        j["input_dim"] = input_dim_;
        j["num_actions"] = num_actions_;
        j["hidden"] = hidden_;
        auto dump = [](const Eigen::MatrixXd& m) {
            std::vector<double> v(m.data(), m.data() + m.size());
            return nlohmann::json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", v}};
        };
        nlohmann::json params = nlohmann::json::array();
        for (const auto* p : const_cast<QApproximator*>(this)->parameter_tensors())
            params.push_back(dump(*p));
        j["parameters"] = params;
        nlohmann::json adam = nlohmann::json::array();
        for (size_t i = 0; i < adam_m_.size(); ++i) {
            adam.push_back(dump(adam_m_[i]));
            adam.push_back(dump(adam_v_[i]));
        }
        j["adam"] = adam;
        j["adam_step"] = adam_step_;
        return j;
    }

    static QApproximator from_json(const nlohmann::json& j) {
        if (j.at("format").get<int>() != 1)
            throw std::runtime_error("unsupported checkpoint format");
        QApproximator q(j.at("input_dim").get<int>(),
                        j.at("num_actions").get<int>(),
                        j.at("hidden").get<std::vector<int>>(), 0);
        auto load = [](Eigen::MatrixXd& m, const nlohmann::json& e) {
            m.resize(e.at("rows").get<long>(), e.at("cols").get<long>());
            auto v = e.at("data").get<std::vector<double>>();
            std::copy(v.begin(), v.end(), m.data());
        };
        auto tensors = q.parameter_tensors();
        const auto& params = j.at("parameters");
        for (size_t i = 0; i < tensors.size(); ++i) load(*tensors[i], params.at(i));
        const auto& adam = j.at("adam");
        for (size_t i = 0; i < q.adam_m_.size(); ++i) {
            load(q.adam_m_[i], adam.at(2 * i));
            load(q.adam_v_[i], adam.at(2 * i + 1));
        }
        q.adam_step_ = j.at("adam_step").get<long>();
        return q;
    }

private:
    struct Cache {
        std::vector<Eigen::MatrixXd> pre_activations;
        std::vector<Eigen::MatrixXd> activations;
        Eigen::MatrixXd q;
    };

    static Eigen::MatrixXd uniform_fan_in(int rows, int cols, std::mt19937_64& rng) {
        double bound = std::sqrt(1.0 / cols);
        std::uniform_real_distribution<double> dist(-bound, bound);
        Eigen::MatrixXd m(rows, cols);
        for (long i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
        return m;
    }

    void forward(const Eigen::MatrixXd& x,
                 const std::vector<std::vector<std::uint8_t>>& masks,
                 Cache& c) const {
        if (x.rows() != input_dim_)
            throw ValidationError("state dimension mismatch");
        if (static_cast<long>(masks.size()) != x.cols())
            throw ValidationError("one mask per batch column required");

        Eigen::MatrixXd h = x;
        c.pre_activations.clear();
        c.activations.clear();
        for (size_t l = 0; l < weights_.size(); ++l) {
            Eigen::MatrixXd z = (weights_[l] * h).colwise() + biases_[l].col(0);
            c.pre_activations.push_back(z);
            h = z.cwiseMax(0.0);
            c.activations.push_back(h);
        }
        Eigen::MatrixXd value = (value_w_ * h).colwise() + value_b_.col(0);
        Eigen::MatrixXd adv = (adv_w_ * h).colwise() + adv_b_.col(0);

        c.q.resize(num_actions_, x.cols());
        for (long i = 0; i < x.cols(); ++i) {
            double mean = 0.0;
            int n = 0;
            for (int a = 0; a < num_actions_; ++a)
                if (masks[i][a]) {
                    mean += adv(a, i);
                    ++n;
                }
            if (n == 0) throw ValidationError("state with no unmasked action");
            mean /= n;
            for (int a = 0; a < num_actions_; ++a)
                c.q(a, i) = value(0, i) + adv(a, i) - mean;
        }
    }

    void init_adam() {
        adam_m_.clear();
        adam_v_.clear();
        for (const auto* p : parameter_tensors()) {
            adam_m_.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
            adam_v_.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
        }
    }

    void apply_adam(const std::vector<Eigen::MatrixXd>& grads, double lr) {
        constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
        adam_step_ += 1;
        double bc1 = 1.0 - std::pow(beta1, static_cast<double>(adam_step_));
        double bc2 = 1.0 - std::pow(beta2, static_cast<double>(adam_step_));
        auto params = parameter_tensors();
        for (size_t i = 0; i < params.size(); ++i) {
            adam_m_[i] = beta1 * adam_m_[i] + (1.0 - beta1) * grads[i];
            adam_v_[i] = beta2 * adam_v_[i] +
                         (1.0 - beta2) * grads[i].cwiseProduct(grads[i]);
            Eigen::ArrayXXd mhat = adam_m_[i].array() / bc1;
            Eigen::ArrayXXd vhat = adam_v_[i].array() / bc2;
            params[i]->array() -= lr * mhat / (vhat.sqrt() + eps);
        }
    }

    int input_dim_ = 0;
    int num_actions_ = 0;
    std::vector<int> hidden_;
    std::vector<Eigen::MatrixXd> weights_;
    std::vector<Eigen::MatrixXd> biases_;  // column vectors
    Eigen::MatrixXd value_w_, value_b_, adv_w_, adv_b_;

    std::vector<Eigen::MatrixXd> adam_m_, adam_v_;
    long adam_step_ = 0;
};

inline int act_greedy(const QApproximator& q, const StateVector& s) {
    Eigen::VectorXd values = q.q_values(s);
    int best = -1;
    for (int a = 0; a < q.num_actions(); ++a) {
        if (!s.mask[a]) continue;
        if (best < 0 || values(a) > values(best)) best = a;
    }
    if (best < 0) throw ValidationError("no unmasked action available");
    return best;
}

// One-step bootstrapped target. Double rule: the online network selects the
// next action, the target network values it. Vanilla: max over the target
// network. Both restrict to unmasked slots of s'.
inline double td_target(double reward, const StateVector& next, bool terminal,
                        const QApproximator& online, const QApproximator& target,
                        double gamma,
                        TrainerConfig::TargetRule rule = TrainerConfig::TargetRule::Double) {
    if (terminal) return reward;
    if (rule == TrainerConfig::TargetRule::Double) {
        int a = act_greedy(online, next);
        return reward + gamma * target.q_values(next)(a);
    }
    Eigen::VectorXd tq = target.q_values(next);
    double best = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < target.num_actions(); ++a)
        if (next.mask[a]) best = std::max(best, tq(a));
    return reward + gamma * best;
}

struct Transition {
    StateVector state;
    int action = 0;
    double reward = 0.0;
    StateVector next_state;  // empty features when terminal
    bool terminal = false;
};

class ReplayBuffer {
public:
    explicit ReplayBuffer(size_t capacity) : capacity_(capacity) {
        if (capacity == 0) throw ConfigError("replay capacity must be positive");
    }

    void push(Transition t) {
        if (data_.size() < capacity_) {
            data_.push_back(std::move(t));
        } else {
            data_[next_] = std::move(t);
            next_ = (next_ + 1) % capacity_;
        }
    }

    size_t size() const { return data_.size(); }

    // i-th entry in insertion order, oldest first.
    const Transition& entry(size_t i) const {
        if (data_.size() < capacity_) return data_.at(i);
        return data_.at((next_ + i) % capacity_);
    }

    // Uniform sample without replacement within the batch.
    std::vector<const Transition*> sample(int batch_size, std::mt19937_64& rng) const {
        if (batch_size <= 0 || static_cast<size_t>(batch_size) > data_.size())
            throw ConfigError("batch size exceeds buffer occupancy");
        std::vector<size_t> idx(data_.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::vector<const Transition*> out;
        out.reserve(batch_size);
        for (int i = 0; i < batch_size; ++i) {
            std::uniform_int_distribution<size_t> pick(i, idx.size() - 1);
            std::swap(idx[i], idx[pick(rng)]);
            out.push_back(&data_[idx[i]]);
        }
        return out;
    }

private:
    size_t capacity_;
    std::vector<Transition> data_;
    size_t next_ = 0;
};

// Mean-squared-TD-error update on one sampled batch; returns pre-step loss.
// Targets follow td_target but are computed batch-wise for speed.
inline double update(QApproximator& q, const QApproximator& target,
                     const std::vector<const Transition*>& batch,
                     const TrainerConfig& cfg) {
    if (batch.empty()) throw ConfigError("empty batch");
    const long n = static_cast<long>(batch.size());
    Eigen::MatrixXd x(q.input_dim(), n);
    std::vector<std::vector<std::uint8_t>> masks(n);
    std::vector<int> actions(n);
    Eigen::VectorXd targets(n);

    std::vector<long> bootstrap;  // batch rows with a non-terminal successor
    for (long i = 0; i < n; ++i) {
        const Transition& t = *batch[i];
        x.col(i) = Eigen::Map<const Eigen::VectorXd>(
            t.state.features.data(), static_cast<long>(t.state.features.size()));
        masks[i] = t.state.mask;
        actions[i] = t.action;
        targets(i) = t.reward;
        if (!t.terminal) bootstrap.push_back(i);
    }

    if (!bootstrap.empty()) {
        const long m = static_cast<long>(bootstrap.size());
        Eigen::MatrixXd x2(q.input_dim(), m);
        std::vector<std::vector<std::uint8_t>> masks2(m);
        for (long j = 0; j < m; ++j) {
            const StateVector& s2 = batch[bootstrap[j]]->next_state;
            x2.col(j) = Eigen::Map<const Eigen::VectorXd>(
                s2.features.data(), static_cast<long>(s2.features.size()));
            masks2[j] = s2.mask;
        }
        Eigen::MatrixXd tq = target.q_batch(x2, masks2);
        Eigen::MatrixXd oq;
        if (cfg.target_rule == TrainerConfig::TargetRule::Double)
            oq = q.q_batch(x2, masks2);
        for (long j = 0; j < m; ++j) {
            const Eigen::MatrixXd& sel =
                cfg.target_rule == TrainerConfig::TargetRule::Double ? oq : tq;
            int best = -1;
            for (int a = 0; a < q.num_actions(); ++a) {
                if (!masks2[j][a]) continue;
                if (best < 0 || sel(a, j) > sel(best, j)) best = a;
            }
            targets(bootstrap[j]) += cfg.gamma * tq(best, j);
        }
    }
    return q.gradient_step(x, masks, actions, targets, cfg.learning_rate);
}

}  // namespace sotar
