#include "monli/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <thread>

namespace monli {

AdamOptimizer::AdamOptimizer(std::size_t n, const Hyperparams& hp) : hp_(hp), m_(n, 0.0), v_(n, 0.0) {}

void AdamOptimizer::step(std::span<double> params, std::span<const double> grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(hp_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(hp_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i] = hp_.beta1 * m_[i] + (1.0 - hp_.beta1) * grad[i];
        v_[i] = hp_.beta2 * v_[i] + (1.0 - hp_.beta2) * grad[i] * grad[i];
        params[i] -= hp_.learning_rate * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + hp_.epsilon);
    }
}

std::vector<Label> predict(const Model& model, std::span<const NLIExample> examples, unsigned workers) {
    std::vector<Label> out(examples.size());
    auto work = [&](std::size_t begin, std::size_t end) {
        ForwardTrace trace;
        for (std::size_t i = begin; i < end; ++i) {
            model.run(encode(examples[i], model.config()), trace);
            out[i] = trace.label();
        }
    };
    workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(examples.size())));
    if (workers <= 1) {
        work(0, examples.size());
        return out;
    }
    std::vector<std::jthread> pool;
    const std::size_t chunk = (examples.size() + workers - 1) / workers;
    for (unsigned w = 0; w < workers; ++w) {
        const std::size_t b = w * chunk;
        const std::size_t e = std::min(examples.size(), b + chunk);
        if (b < e) pool.emplace_back(work, b, e);
    }
    pool.clear();
    return out;
}

double accuracy(std::span<const NLIExample> examples, const std::function<Label(const NLIExample&)>& predictor) {
    if (examples.empty()) return 0.0;
    std::size_t correct = 0;
    for (const auto& e : examples) correct += predictor(e) == e.label;
    return static_cast<double>(correct) / static_cast<double>(examples.size());
}

double evaluate(const Model& model, std::span<const NLIExample> examples, unsigned workers) {
    if (examples.empty()) return 0.0;
    const auto labels = predict(model, examples, workers);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < examples.size(); ++i) correct += labels[i] == examples[i].label;
    return static_cast<double>(correct) / static_cast<double>(examples.size());
}

TrainReport fit(Model& model, std::span<const NLIExample> train_set, const Hyperparams& hp,
                std::span<const NamedDataset> evals) {
    TrainReport report;
    report.hyperparams = hp;
    if (hp.batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(hp.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");

    std::vector<Encoded> encoded;
    encoded.reserve(train_set.size());
    for (const auto& e : train_set) encoded.push_back(encode(e, model.config()));

    const std::size_t n_params = model.parameters().size();
    AdamOptimizer optimizer(n_params, hp);
    ParamVector grad(n_params);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(hp.seed);
    ForwardTrace trace;

    for (int epoch = 0; epoch < hp.epochs && !train_set.empty(); ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += hp.batch_size) {
            const std::size_t end = std::min(order.size(), start + hp.batch_size);
            const double scale = 1.0 / static_cast<double>(end - start);
            std::fill(grad.begin(), grad.end(), 0.0);
            double batch_loss = 0.0;
            for (std::size_t b = start; b < end; ++b) {
                const std::size_t idx = order[b];
                model.run(encoded[idx], trace);
                batch_loss += model.backward(trace, train_set[idx].label, scale, grad);
            }
            if (!std::isfinite(batch_loss)) {
                throw DivergenceError("training diverged: non-finite loss at epoch " + std::to_string(epoch + 1));
            }
            if (hp.clip_norm > 0.0) {
                const double norm = std::sqrt(std::inner_product(grad.begin(), grad.end(), grad.begin(), 0.0));
                if (norm > hp.clip_norm) {
                    const double s = hp.clip_norm / norm;
                    for (auto& g : grad) g *= s;
                }
            }
            optimizer.step(model.parameters(), grad);
            epoch_loss += batch_loss;
        }
        report.final_loss = epoch_loss / static_cast<double>(train_set.size());
        report.epochs_run = epoch + 1;
    }
    report.final_train_accuracy = evaluate(model, train_set);
    for (const auto& ds : evals) report.eval_accuracies[ds.name] = evaluate(model, ds.examples);
    return report;
}

std::pair<Model, TrainReport> train(const ModelConfig& config, std::span<const NLIExample> train_set,
                                    const Hyperparams& hp, std::span<const NamedDataset> evals) {
    Model model(config);
    auto report = fit(model, train_set, hp, evals);
    return {std::move(model), std::move(report)};
}

InoculationResult inoculate(const Model& model, std::span<const NLIExample> original_eval,
                            std::span<const NLIExample> challenge_train,
                            std::span<const NLIExample> challenge_eval, std::span<const std::size_t> amounts,
                            std::span<const Hyperparams> grid, std::span<const NLIExample> original_train,
                            unsigned workers) {
    if (grid.empty()) throw ConfigError("inoculation grid is empty");
    if (amounts.empty()) throw ConfigError("inoculation amounts are empty");
    for (const auto& hp : grid) {
        if (hp.replay < 0.0) throw ConfigError("replay ratio must be non-negative");
        if (hp.replay > 0.0 && original_train.empty()) {
            throw ConfigError("replay requested but no original training data given");
        }
    }
    for (auto a : amounts) {
        if (a != kAllExamples && a > challenge_train.size()) {
            throw DataError("inoculation amount " + std::to_string(a) + " exceeds challenge train size " +
                            std::to_string(challenge_train.size()));
        }
    }

    InoculationResult result{model, {}, {}};
    double best_mean = -1.0;
    const double base_original = evaluate(model, original_eval, workers);
    const double base_challenge = evaluate(model, challenge_eval, workers);

    for (const auto requested : amounts) {
        const std::size_t amount = requested == kAllExamples ? challenge_train.size() : requested;
        const auto subset = challenge_train.first(amount);
        std::size_t selected = result.curve.size();
        for (std::size_t g = 0; g < grid.size(); ++g) {
            InoculationPoint point;
            point.amount = amount;
            point.grid_index = g;
            point.hyperparams = grid[g];
            Model tuned = model;
            if (amount == 0) {
                point.original_accuracy = base_original;
                point.challenge_accuracy = base_challenge;
            } else {
                std::vector<NLIExample> mixed(subset.begin(), subset.end());
                if (grid[g].replay > 0.0) {
                    std::vector<std::size_t> pick(original_train.size());
                    std::iota(pick.begin(), pick.end(), std::size_t{0});
                    std::mt19937_64 rng(grid[g].seed ^ 0x9e3779b97f4a7c15ull);
                    std::shuffle(pick.begin(), pick.end(), rng);
                    const auto want = static_cast<std::size_t>(std::llround(grid[g].replay * static_cast<double>(amount)));
                    for (std::size_t r = 0; r < want; ++r) mixed.push_back(original_train[pick[r % pick.size()]]);
                }
                fit(tuned, mixed, grid[g]);
                point.original_accuracy = evaluate(tuned, original_eval, workers);
                point.challenge_accuracy = evaluate(tuned, challenge_eval, workers);
            }
            if (selected == result.curve.size() || point.mean() > result.curve[selected].mean()) {
                selected = result.curve.size();
            }
            if (point.mean() > best_mean) {
                best_mean = point.mean();
                result.best = std::move(tuned);
                result.best_point = point;
            }
            result.curve.push_back(point);
        }
        result.curve[selected].selected = true;
    }
    result.best_point.selected = true;
    return result;
}

}  // namespace monli
