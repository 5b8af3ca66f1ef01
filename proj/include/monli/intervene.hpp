#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "monli/error.hpp"
#include "monli/example.hpp"
#include "monli/model.hpp"

namespace monli {

// ---------------------------------------------------------------------------
// Single interchange interventions
// ---------------------------------------------------------------------------

struct InterchangeResult {
    std::uint32_t i = 0;  // recipient
    std::uint32_t j = 0;  // donor
    Location location;
    Label patched = Label::Entailment;
    Label unpatched = Label::Entailment;
    Label oracle = Label::Entailment;
    bool match = false;   // patched == oracle
    bool causal = false;  // patched != unpatched

    bool operator==(const InterchangeResult&) const = default;
};

/// Fills match/causal from the three labels.
InterchangeResult make_result(std::uint32_t i, std::uint32_t j, Location loc, Label patched, Label unpatched,
                              Label oracle);

/// Runs i with the vector that j produces at `loc`. Both forward passes are
/// computed fresh.
InterchangeResult run_interchange(const Model& model, const NLIExample& recipient, const NLIExample& donor,
                                  Location loc, std::uint32_t i = 0, std::uint32_t j = 0);

/// What an interchange experiment needs from a network. Lets graph and
/// location-selection code run against stub networks in tests.
class InterchangeSource {
public:
    virtual ~InterchangeSource() = default;
    virtual int rows() const = 0;
    virtual std::size_t size() const = 0;
    virtual Label unpatched(std::size_t i) const = 0;
    virtual Label patched(std::size_t i, std::size_t j, Location loc) const = 0;
};

/// InterchangeSource over a real model. Caches every example's activation
/// record and the most recent recipient trace, so it is not thread-safe.
class ModelSource final : public InterchangeSource {
public:
    ModelSource(const Model& model, std::span<const NLIExample> examples);
    int rows() const override { return model_.config().rows; }
    std::size_t size() const override { return examples_.size(); }
    Label unpatched(std::size_t i) const override { return records_.at(i).predicted; }
    Label patched(std::size_t i, std::size_t j, Location loc) const override;

private:
    const Model& model_;
    std::span<const NLIExample> examples_;
    std::vector<ActivationRecord> records_;
    mutable std::size_t cached_ = static_cast<std::size_t>(-1);
    mutable ForwardTrace trace_;
};

// ---------------------------------------------------------------------------
// Result log
// ---------------------------------------------------------------------------
//
// Header (32 bytes, little endian):
//   magic "MNLIXLOG" | u32 version | u32 example count | u8 row | u8 role |
//   u16 reserved | u64 fingerprint | u32 reserved
// Records (16 bytes each):
//   u32 i | u32 j | u8 row | u8 role | u8 patched | u8 unpatched | u8 oracle |
//   u8 flags (bit 0 match, bit 1 causal) | u16 reserved
// A sidecar "<log>.idx" holds the number of fully written recipients and the
// log length at that point; it is replaced atomically after each recipient.

constexpr std::size_t kLogHeaderBytes = 32;
constexpr std::size_t kLogRecordBytes = 16;

struct ResultLogHeader {
    std::uint32_t count = 0;
    Location location;
    std::uint64_t fingerprint = 0;
};

struct ResultLog {
    ResultLogHeader header;
    std::vector<InterchangeResult> results;
};

void encode_record(const InterchangeResult& r, unsigned char* out);
InterchangeResult decode_record(const unsigned char* in);
void encode_log_header(const ResultLogHeader& h, unsigned char* out);
ResultLogHeader decode_log_header(const unsigned char* in);
/// Reads committed records only: bytes beyond the sidecar's length are ignored.
ResultLog read_result_log(const std::filesystem::path& path);

struct SweepIndex {
    std::uint64_t recipients = 0;
    std::uint64_t bytes = 0;
    std::uint64_t fingerprint = 0;
};

std::filesystem::path index_path(const std::filesystem::path& log);
/// Returns false when the sidecar is absent.
bool read_sweep_index(const std::filesystem::path& log, SweepIndex& out);
void write_sweep_index(const std::filesystem::path& log, const SweepIndex& idx);

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

using PairFilter = std::function<bool(std::size_t recipient, std::size_t donor)>;

struct SweepOptions {
    unsigned workers = 1;
    // Finished recipients allowed to wait for the writer before workers block.
    std::size_t queue_capacity = 64;
    // Continue from the sidecar index when the log belongs to the same sweep.
    bool resume = true;
    PairFilter filter;        // empty admits every ordered pair, self-pairs included
    std::string filter_tag;   // identifies the filter in the fingerprint
    // Called after each committed recipient with the committed count; throw to
    // abort the sweep (used to simulate interruption).
    std::function<void(std::size_t)> on_commit;
};

struct SweepSummary {
    std::size_t recipients = 0;
    std::size_t results = 0;
    std::size_t resumed_from = 0;  // recipients already committed on entry
    double seconds = 0.0;
};

std::uint64_t sweep_fingerprint(const Model& model, std::span<const NLIExample> examples, Location loc,
                                const std::string& filter_tag);

/// Interchanges every admitted (recipient, donor) pair at `loc`, streaming
/// records to `log` in recipient-major, donor-ascending order. Output bytes do
/// not depend on `workers`.
SweepSummary sweep(const Model& model, std::span<const NLIExample> examples, Location loc,
                   const std::filesystem::path& log, const SweepOptions& options = {});

/// In-memory variant for small subsets.
std::vector<InterchangeResult> sweep_pairs(const InterchangeSource& source, std::span<const NLIExample> examples,
                                           std::span<const std::size_t> nodes, Location loc);

// ---------------------------------------------------------------------------
// Graphs and cliques
// ---------------------------------------------------------------------------

class IncompleteResultsError : public StageError {
public:
    IncompleteResultsError(std::vector<std::pair<std::uint32_t, std::uint32_t>> missing);
    const std::vector<std::pair<std::uint32_t, std::uint32_t>>& missing() const noexcept { return missing_; }

private:
    std::vector<std::pair<std::uint32_t, std::uint32_t>> missing_;
};

enum class EdgeKind : std::uint8_t { None = 0, Plain = 1, Causal = 2 };

class InterventionGraph {
public:
    InterventionGraph() = default;
    InterventionGraph(std::vector<std::uint32_t> nodes, Location location);

    std::size_t size() const noexcept { return nodes_.size(); }
    const std::vector<std::uint32_t>& nodes() const noexcept { return nodes_; }
    Location location() const noexcept { return location_; }

    EdgeKind edge(std::size_t a, std::size_t b) const { return adj_[a * nodes_.size() + b]; }
    void set_edge(std::size_t a, std::size_t b, EdgeKind k);
    std::size_t edge_count() const;
    std::size_t causal_edge_count() const;

private:
    std::vector<std::uint32_t> nodes_;
    Location location_;
    std::vector<EdgeKind> adj_;
};

/// Edge {i, j} iff the model is right on i and on j and both cross
/// interchanges match the oracle; causal iff either cross interchange changed
/// the output. Nodes are the distinct recipient ids. Throws
/// IncompleteResultsError when some needed ordered pair is missing.
InterventionGraph build_graph(std::span<const InterchangeResult> results);

struct CliqueReport {
    std::vector<std::uint32_t> members;  // example ids, ascending
    std::size_t causal_edges = 0;
    int alpha = 0;

    std::size_t size() const noexcept { return members.size(); }
};

bool is_clique(const InterventionGraph& graph, std::span<const std::size_t> local_members);

/// Greedy extraction of disjoint cliques: drop nodes of least causal degree
/// while that degree is below alpha, then nodes of least degree until a clique
/// remains; record it if it has a causal edge, delete it, repeat.
std::vector<CliqueReport> greedy_clique(const InterventionGraph& graph, int alpha);

struct AlphaSweep {
    std::map<int, std::vector<CliqueReport>> by_alpha;
    CliqueReport best;  // largest clique over all alphas (empty if none)
};

AlphaSweep clique_alpha_sweep(const InterventionGraph& graph, int alpha_min, int alpha_max);

/// Re-checks every member pair directly against the raw results.
bool verify_clique(std::span<const std::uint32_t> members, std::span<const InterchangeResult> results);

/// C(n, k) * p^(k(k-1)/2), computed in log space unless exact arithmetic fits.
double expected_cliques(std::uint64_t n, std::uint64_t k, double p);
double log_expected_cliques(std::uint64_t n, std::uint64_t k, double p);

// ---------------------------------------------------------------------------
// Location choice
// ---------------------------------------------------------------------------

struct LocationScore {
    Location location;
    double score = 0.0;
    std::size_t edges = 0;
    std::size_t causal_edges = 0;
};

/// 3 x (triangles with at least one causal edge) / (connected triples).
double causal_clustering(const InterventionGraph& graph);

/// Samples m examples with m(m-1)/2 <= budget, builds each location's partial
/// graph over them and ranks locations by causal_clustering (ties keep
/// location order).
std::vector<LocationScore> choose_location(const InterchangeSource& source, std::span<const NLIExample> examples,
                                           std::size_t budget, std::uint64_t seed);
std::vector<LocationScore> choose_location(const Model& model, std::span<const NLIExample> examples,
                                           std::size_t budget, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Exports
// ---------------------------------------------------------------------------

/// DOT of the subgraph induced on `members` (all nodes when empty); causal
/// edges drawn bold red.
void write_dot(std::ostream& out, const InterventionGraph& graph, std::span<const NLIExample> examples,
               std::span<const std::uint32_t> members = {});

/// One row per member: clique, alpha, size, hyponym, example, pair_id,
/// lexrel, negated; rows grouped by hyponym within each clique.
void write_clique_csv(std::ostream& out, std::span<const CliqueReport> cliques,
                      std::span<const NLIExample> examples);

}  // namespace monli
