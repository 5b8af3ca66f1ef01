#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "monli/example.hpp"
#include "monli/lexicon.hpp"

namespace monli {

enum class Polarity { Positive, Negated, Both };

/// A sentence frame with one substitution slot, in a positive and a negated
/// form. The negated form carries exactly one "not".
struct Template {
    std::string id;
    std::vector<std::string> positive_form;
    std::vector<std::string> negated_form;
    std::size_t positive_slot = 0;
    std::size_t negated_slot = 0;
    // Slot category; empty means the slot accepts untagged lexicon words.
    std::string category;
};

/// Validates and builds a template. Slot syntax is "{N}" or "{N:category}".
Template make_template(std::string id, std::string_view positive, std::string_view negated);

/// Reads "id | positive form | negated form" lines; '#' comments allowed.
std::vector<Template> parse_templates(std::istream& in, const std::string& source = "<templates>");
std::vector<Template> load_templates(const std::filesystem::path& path);

/// Emits both substitution directions for every (template, closure pair,
/// polarity), sorted by template_id then pair_id. Output is label-balanced.
std::vector<NLIExample> generate(std::span<const Template> templates, const Lexicon& lexicon,
                                 Polarity polarity);

struct ManifestRow {
    std::string side;  // "train" or "test"
    std::string hyponym;
    std::size_t count = 0;
    bool operator==(const ManifestRow&) const = default;
};

struct DatasetSplit {
    std::vector<NLIExample> train;
    std::vector<NLIExample> test;
    std::vector<ManifestRow> manifest;
};

/// Hyponym-disjoint split: hyponyms are visited in a seeded order and moved to
/// the test side until it holds at least `test_fraction` of the examples.
DatasetSplit split_systematic(std::span<const NLIExample> examples, double test_fraction,
                              std::uint64_t seed);
/// Split with an explicit test-side hyponym set.
DatasetSplit split_by_hyponyms(std::span<const NLIExample> examples,
                               const std::set<std::string>& test_hyponyms);
/// IID split that keeps the two directions of a pair_id together.
DatasetSplit split_random(std::span<const NLIExample> examples, double test_fraction,
                          std::uint64_t seed);

std::vector<ManifestRow> build_manifest(std::span<const NLIExample> train,
                                        std::span<const NLIExample> test);
void write_manifest_csv(std::ostream& out, std::span<const ManifestRow> rows);
void write_manifest_csv(const std::filesystem::path& path, std::span<const ManifestRow> rows);

struct IngestResult {
    std::vector<NLIExample> examples;
    // Indices of examples whose stored label disagrees with the oracle.
    std::vector<std::size_t> label_conflicts;
};

/// Reads an external JSON-Lines corpus, recomputing lexrel from the lexicon.
/// A missing "negated" field falls back to scanning for "not".
IngestResult ingest_external(const std::filesystem::path& path, const Lexicon& lexicon);
IngestResult ingest_external(std::istream& in, const Lexicon& lexicon,
                             const std::string& source = "<jsonl>");

}  // namespace monli
