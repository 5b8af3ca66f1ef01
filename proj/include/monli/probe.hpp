#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "monli/example.hpp"
#include "monli/model.hpp"

namespace monli {

enum class ProbeTarget : std::uint8_t { Lexrel, InferOutput };

std::string_view to_string(ProbeTarget t) noexcept;
ProbeTarget probe_target_from_string(std::string_view s);

// How control-task labels are drawn: independently per example, or once per
// substituted-word pair type (the same pair always receives the same label).
enum class ControlMode : std::uint8_t { PerExample, PerWordType };

struct ProbeTask {
    ProbeTarget target = ProbeTarget::Lexrel;
    bool control = false;
    std::uint64_t seed = 0;
};

struct ProbeConfig {
    int hidden = 4;
    bool nonlinear = false;  // ReLU between the two maps instead of a linear bottleneck
    double learning_rate = 1e-2;
    int max_epochs = 300;
    // Early stop once the training loss improved by less than `tolerance`
    // (relative) for `patience` consecutive epochs.
    int patience = 10;
    double tolerance = 1e-4;
    // 0 trains and evaluates on all examples; otherwise this fraction is held
    // out for evaluation.
    double heldout_fraction = 0.0;
    ControlMode control_mode = ControlMode::PerExample;
    std::uint64_t seed = 0;
};

/// One activation matrix per location plus the oracle's targets.
struct ActivationSet {
    int rows = 0;
    int width = 0;
    std::vector<Location> locations;
    std::vector<Matrix> matrices;  // n x width, one per location
    std::vector<int> lexrel;       // 0 = forward, 1 = reverse
    std::vector<int> infer_output; // 0 = forward, 1 = reverse
    std::vector<std::string> word_types;
    std::vector<Label> model_predictions;

    std::size_t size() const noexcept { return lexrel.size(); }
    const Matrix& at(Location loc) const { return matrices.at(location_index(loc)); }
    const std::vector<int>& targets(ProbeTarget t) const {
        return t == ProbeTarget::Lexrel ? lexrel : infer_output;
    }
};

ActivationSet collect_activations(const Model& model, std::span<const NLIExample> examples);

/// Labels for a probe task; control labels are a fixed function of the seed.
std::vector<int> task_labels(const ActivationSet& set, const ProbeTask& task, ControlMode mode);

/// width -> hidden -> 2 classifier.
struct Probe {
    Matrix w1;  // width x hidden
    RowVector b1;
    Matrix w2;  // hidden x 2
    RowVector b2;
    RowVector mean, inv_std;  // input standardisation
    bool nonlinear = false;

    std::vector<int> predict(const Matrix& x) const;
};

struct ProbeFit {
    Probe probe;
    double accuracy = 0.0;
    int epochs = 0;
};

/// Full-batch Adam on cross-entropy. Evaluation set per `config.heldout_fraction`.
ProbeFit train_probe(const Matrix& activations, std::span<const int> targets, const ProbeConfig& config);

struct ProbeReport {
    Location location;
    ProbeTarget target = ProbeTarget::Lexrel;
    double task_accuracy = 0.0;
    double control_accuracy = 0.0;
    double selectivity = 0.0;
};

std::vector<ProbeReport> selectivity_sweep(const ActivationSet& set, std::span<const ProbeTarget> targets,
                                           const ProbeConfig& config);
std::vector<ProbeReport> selectivity_sweep(const Model& model, std::span<const NLIExample> examples,
                                           std::span<const ProbeTarget> targets, const ProbeConfig& config);

void write_probe_csv(std::ostream& out, std::span<const ProbeReport> reports);
void write_probe_csv(const std::filesystem::path& path, std::span<const ProbeReport> reports);
std::vector<ProbeReport> read_probe_csv(const std::filesystem::path& path);

}  // namespace monli
