#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "monli/model.hpp"
#include "monli/probe.hpp"
#include "monli/train.hpp"

namespace monli {

struct DataSpec {
    std::filesystem::path lexicon;
    std::filesystem::path templates;
    // Positive examples from these templates are never trained on.
    std::vector<std::string> heldout_templates{"t13", "t14"};
    // Cap on examples per polarity (0 keeps all); whole pair groups are kept
    // so both labels stay balanced.
    std::size_t max_per_polarity = 0;
};

struct SplitSpec {
    std::string kind = "random";  // split of positive examples into IID train/test
    double fraction = 0.2;
    std::string challenge_kind = "systematic";  // split of negated examples
    double challenge_fraction = 0.2;
};

struct InoculationSpec {
    std::vector<std::size_t> amounts{50, 100, 200, 400, kAllExamples};
    std::vector<double> learning_rates{1e-3, 3e-4, 1e-4};
    std::vector<double> replay{0.0, 1.0};
    int epochs = 10;
    std::size_t batch_size = 32;
};

struct ProbeSpec {
    ProbeConfig config;
    std::vector<ProbeTarget> targets{ProbeTarget::Lexrel, ProbeTarget::InferOutput};
    std::string model = "inoculated";  // or "base"
};

struct InterventionSpec {
    std::size_t examples = 300;
    std::vector<Location> locations;  // empty: best location from the search
    std::size_t budget = 1000;        // pairs per location in the search
    int alpha_min = 1;
    int alpha_max = 10;
    std::string model = "inoculated";
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    unsigned workers = 1;
    std::filesystem::path output_dir;
    DataSpec data;
    SplitSpec split;
    ModelConfig model;  // vocabulary is filled in from the generated data
    Hyperparams train;
    InoculationSpec inoculate;
    ProbeSpec probe;
    InterventionSpec intervene;

    /// Defaults; output_dir comes from MONLI_OUTPUT_ROOT when set.
    static ExperimentConfig defaults();
};

nlohmann::json to_json(const ExperimentConfig& c);
/// Overlays `j` on the defaults; unknown keys are config errors.
ExperimentConfig config_from_json(const nlohmann::json& j);
/// Applies "a.b.c=value" to a config tree; the value is parsed as JSON when
/// possible and taken as a string otherwise.
void apply_override(nlohmann::json& j, const std::string& assignment);
/// Defaults, then the file (if any), then overrides.
ExperimentConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides);
std::uint64_t config_checksum(const ExperimentConfig& c);

/// Deterministic per-stage seed derived from the root seed.
std::uint64_t stage_seed(std::uint64_t root, std::string_view stage);

const std::vector<std::string>& stage_names();

struct StageRecord {
    bool complete = false;
    std::string key;  // hash of the config parts and upstream stages it depends on
    double seconds = 0.0;
    std::vector<std::string> artifacts;
    std::string error;
};

struct RunManifest {
    std::string config_checksum;
    std::map<std::string, StageRecord> stages;

    static RunManifest load(const std::filesystem::path& path);  // empty manifest when absent
    void save(const std::filesystem::path& path) const;
    bool up_to_date(const std::string& stage, const std::string& key) const;
};

struct RunOptions {
    std::vector<std::string> stages;  // empty runs every stage
    bool force = false;
    std::ostream* log = nullptr;
};

/// Runs the requested stages in order, skipping ones already complete for the
/// current config unless forced. The manifest is saved after every stage.
RunManifest run_pipeline(const ExperimentConfig& config, const RunOptions& options);

/// Writes the report directory of a run from its stored artifacts.
void write_report(const std::filesystem::path& run_dir, std::ostream* log = nullptr);

/// Fixed file names inside a run directory.
namespace artifacts {
inline constexpr const char* kConfig = "config.json";
inline constexpr const char* kManifest = "manifest.json";
inline constexpr const char* kPositive = "data/positive.jsonl";
inline constexpr const char* kHeldout = "data/heldout_positive.jsonl";
inline constexpr const char* kNegated = "data/negated.jsonl";
inline constexpr const char* kIidTrain = "data/iid_train.jsonl";
inline constexpr const char* kIidTest = "data/iid_test.jsonl";
inline constexpr const char* kChallengeTrain = "data/challenge_train.jsonl";
inline constexpr const char* kChallengeTest = "data/challenge_test.jsonl";
inline constexpr const char* kIidSplit = "data/iid_split.csv";
inline constexpr const char* kChallengeSplit = "data/challenge_split.csv";
inline constexpr const char* kBaseModel = "models/base.ckpt";
inline constexpr const char* kInoculatedModel = "models/inoculated.ckpt";
inline constexpr const char* kTrainReport = "train/report.json";
inline constexpr const char* kEval = "eval/accuracy.json";
inline constexpr const char* kCurve = "inoculate/curve.csv";
inline constexpr const char* kInoculated = "inoculate/accuracy.json";
inline constexpr const char* kProbe = "probe/probe.csv";
inline constexpr const char* kLocations = "intervene/locations.csv";
inline constexpr const char* kSubset = "intervene/examples.jsonl";
inline constexpr const char* kCliques = "intervene/cliques.json";
}  // namespace artifacts

}  // namespace monli
