#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "monli/error.hpp"
#include "monli/example.hpp"
#include "monli/model.hpp"

namespace monli {

struct Hyperparams {
    double learning_rate = 1e-3;
    std::size_t batch_size = 32;
    int epochs = 20;
    std::uint64_t seed = 0;
    // Global gradient-norm clip; 0 disables clipping.
    double clip_norm = 1.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    // Inoculation only: original-training examples mixed in per challenge
    // example (0 fine-tunes on challenge data alone).
    double replay = 0.0;
};

struct NamedDataset {
    std::string name;
    std::span<const NLIExample> examples;
};

struct TrainReport {
    int epochs_run = 0;
    double final_loss = 0.0;
    double final_train_accuracy = 0.0;
    std::map<std::string, double> eval_accuracies;
    Hyperparams hyperparams;
};

/// Adam with bias correction over a flat parameter vector.
class AdamOptimizer {
public:
    AdamOptimizer(std::size_t n, const Hyperparams& hp);
    void step(std::span<double> params, std::span<const double> grad);
    std::uint64_t steps() const noexcept { return t_; }

private:
    Hyperparams hp_;
    ParamVector m_, v_;
    std::uint64_t t_ = 0;
};

/// Continues training `model` in place with minibatch Adam on mean
/// cross-entropy. Deterministic given `hp.seed`. Throws DivergenceError on a
/// non-finite loss.
TrainReport fit(Model& model, std::span<const NLIExample> train, const Hyperparams& hp,
                std::span<const NamedDataset> evals = {});

/// Builds a freshly initialised model from `config` and trains it.
std::pair<Model, TrainReport> train(const ModelConfig& config, std::span<const NLIExample> train_set,
                                    const Hyperparams& hp, std::span<const NamedDataset> evals = {});

class DivergenceError : public StageError {
public:
    using StageError::StageError;
};

/// Predicted labels; `workers` > 1 splits the work over threads with results
/// identical to the serial run.
std::vector<Label> predict(const Model& model, std::span<const NLIExample> examples, unsigned workers = 1);
double evaluate(const Model& model, std::span<const NLIExample> examples, unsigned workers = 1);
/// Accuracy of an arbitrary predictor (e.g. the oracle) on a dataset.
double accuracy(std::span<const NLIExample> examples, const std::function<Label(const NLIExample&)>& predictor);

// ---------------------------------------------------------------------------
// Inoculation by fine-tuning
// ---------------------------------------------------------------------------

constexpr std::size_t kAllExamples = std::numeric_limits<std::size_t>::max();

struct InoculationPoint {
    std::size_t amount = 0;
    std::size_t grid_index = 0;
    Hyperparams hyperparams;
    double original_accuracy = 0.0;
    double challenge_accuracy = 0.0;
    bool selected = false;  // best grid point for its amount

    double mean() const noexcept { return 0.5 * (original_accuracy + challenge_accuracy); }
};

struct InoculationResult {
    Model best;
    InoculationPoint best_point;
    std::vector<InoculationPoint> curve;
};

/// Fine-tunes copies of `model` on the first `a` challenge examples for every
/// amount and grid point, keeps per amount the point with the highest mean of
/// original and challenge accuracy, and returns the overall best.
/// Grid points with `replay` > 0 draw that many original-training examples
/// per challenge example from `original_train`.
InoculationResult inoculate(const Model& model, std::span<const NLIExample> original_eval,
                            std::span<const NLIExample> challenge_train,
                            std::span<const NLIExample> challenge_eval, std::span<const std::size_t> amounts,
                            std::span<const Hyperparams> grid, std::span<const NLIExample> original_train = {},
                            unsigned workers = 1);

}  // namespace monli
