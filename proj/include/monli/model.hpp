#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "monli/example.hpp"

namespace monli {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
// Parameter and gradient storage. Eigen picks its vectorised code path from
// the runtime address, so buffers must share one alignment for results to be
// bit-reproducible.
using ParamVector = std::vector<double, Eigen::aligned_allocator<double>>;

// ---------------------------------------------------------------------------
// Locations
// ---------------------------------------------------------------------------

enum class Role : std::uint8_t { Cls = 0, Wp = 1, Wh = 2 };

std::string_view to_string(Role r) noexcept;
Role role_from_string(std::string_view s);

/// One cell of the activation grid: the output of encoder row `row`
/// (1-based) at the [CLS], premise-word or hypothesis-word position.
struct Location {
    int row = 1;
    Role role = Role::Cls;

    auto operator<=>(const Location&) const = default;
    std::string to_string() const;  // e.g. "3:wh"
    static Location parse(std::string_view s);
};

/// All 3 * rows locations in row-major order (row 1 CLS, WP, WH, row 2 ...).
std::vector<Location> all_locations(int rows);
std::size_t location_index(Location loc) noexcept;

// ---------------------------------------------------------------------------
// Vocabulary and config
// ---------------------------------------------------------------------------

class Vocab {
public:
    static constexpr std::uint32_t kPad = 0;
    static constexpr std::uint32_t kUnk = 1;
    static constexpr std::uint32_t kCls = 2;
    static constexpr std::uint32_t kSep = 3;

    Vocab();
    /// Reserved tokens first, then every token of the given examples in
    /// lexicographic order.
    static Vocab build(std::span<const NLIExample> examples);
    static Vocab from_tokens(std::vector<std::string> tokens);

    std::uint32_t index(std::string_view token) const;
    std::size_t size() const noexcept { return tokens_.size(); }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }

    bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::uint32_t> index_;
};

struct ModelConfig {
    int rows = 4;
    int width = 64;
    int heads = 4;
    int ffn = 0;  // feed-forward width; 0 means 4 * width
    int max_len = 32;
    Vocab vocab;
    std::uint64_t seed = 0;

    int ffn_width() const noexcept { return ffn > 0 ? ffn : 4 * width; }
    void validate() const;
};

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

/// Token ids laid out as [CLS] premise [SEP] hypothesis [SEP], plus the
/// positions of the three analysed tokens.
struct Encoded {
    std::vector<std::uint32_t> ids;
    std::array<std::size_t, 3> positions{};  // indexed by Role

    std::size_t position(Role r) const noexcept { return positions[static_cast<std::size_t>(r)]; }
};

Encoded encode(const NLIExample& example, const ModelConfig& config);

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct ParamGroup {
    std::string name;
    std::size_t offset = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t size() const noexcept { return rows * cols; }
};

struct LayerParams {
    std::size_t ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
};

struct ParamLayout {
    std::size_t tok_emb = 0, pos_emb = 0;
    std::vector<LayerParams> layers;
    std::size_t lnf_g = 0, lnf_b = 0, head_w = 0, head_b = 0;
    std::size_t total = 0;
    std::vector<ParamGroup> groups;

    static ParamLayout make(const ModelConfig& config);
};

// ---------------------------------------------------------------------------
// Forward traces
// ---------------------------------------------------------------------------

struct LayerTrace {
    Matrix x_in;
    Matrix xhat1, n1;
    Eigen::VectorXd rstd1;
    Matrix q, k, v;
    std::vector<Matrix> attn;  // per head, L x L softmax weights
    Matrix ctx, y;
    Matrix xhat2, n2;
    Eigen::VectorXd rstd2;
    Matrix u, g;
    Matrix z;  // row output: the vector grid analysed by probes and interventions
};

struct ForwardTrace {
    std::vector<std::uint32_t> ids;
    std::array<std::size_t, 3> positions{};
    std::vector<LayerTrace> layers;
    RowVector cls_hat;
    double cls_rstd = 0.0;
    RowVector cls_norm;
    std::array<double, 2> logits{};
    std::array<double, 2> probs{};

    Label label() const noexcept { return logits[1] > logits[0] ? Label::Neutral : Label::Entailment; }
    /// Output vector of `row` (1-based) at token position `pos`.
    Eigen::Map<const RowVector> row_vector(int row, std::size_t pos) const;
};

/// Output vectors at every location from one forward pass.
struct ActivationRecord {
    int rows = 0;
    int width = 0;
    std::vector<double> data;  // location_index-major, `width` values each
    Label predicted = Label::Entailment;
    std::array<double, 2> scores{};

    std::span<const double> at(Location loc) const;
    bool all_finite() const;
};

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

/// Small pre-norm transformer encoder with a two-way classifier reading the
/// top-row [CLS] vector. Immutable for inference: every forward variant is
/// const and keeps its state in the caller-supplied trace.
class Model {
public:
    explicit Model(ModelConfig config);
    Model(ModelConfig config, ParamVector parameters);

    const ModelConfig& config() const noexcept { return config_; }
    const ParamLayout& layout() const noexcept { return layout_; }
    std::span<double> parameters() noexcept { return params_; }
    std::span<const double> parameters() const noexcept { return params_; }
    /// FNV-1a over the raw parameter bytes.
    std::uint64_t checksum() const noexcept;

    /// Full forward pass; `trace` receives every intermediate needed by
    /// backward() and by patched runs.
    void run(const Encoded& input, ForwardTrace& trace) const;

    /// Reruns rows above `loc.row` after overwriting the output vector at
    /// `loc` with `vector`. Rows at or below `loc.row` are taken from `base`.
    /// When `out` is given it receives the complete patched trace.
    Label run_patched(const ForwardTrace& base, Location loc, std::span<const double> vector,
                      ForwardTrace* out = nullptr) const;

    /// Accumulates `scale` * d(cross-entropy)/d(params) into `grad` and
    /// returns the unscaled loss for `target`. Pass a ParamVector-backed
    /// buffer for reproducible sums.
    double backward(const ForwardTrace& trace, Label target, double scale, std::span<double> grad) const;

private:
    void run_layer(int layer, const Matrix& x, LayerTrace& t) const;
    void run_head(const Matrix& top, ForwardTrace& trace) const;
    Matrix layer_backward(int layer, const LayerTrace& t, const Matrix& dz, std::span<double> grad) const;

    ModelConfig config_;
    ParamLayout layout_;
    ParamVector params_;
};

std::pair<Label, ActivationRecord> forward(const Model& model, const NLIExample& example);
ActivationRecord activation_record(const ForwardTrace& trace, int width);
Label forward_patched(const Model& model, const NLIExample& example, Location loc,
                      std::span<const double> vector);

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace monli
