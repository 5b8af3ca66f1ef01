#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace monli {

// Relation of a first word to a second: FORWARD when the first is a hyponym
// of the second, REVERSE for the converse.
enum class LexicalRelation : std::uint8_t { Forward, Reverse, None };

constexpr LexicalRelation reverse(LexicalRelation r) noexcept {
    switch (r) {
        case LexicalRelation::Forward: return LexicalRelation::Reverse;
        case LexicalRelation::Reverse: return LexicalRelation::Forward;
        case LexicalRelation::None: break;
    }
    return LexicalRelation::None;
}

std::string_view to_string(LexicalRelation r) noexcept;
LexicalRelation relation_from_string(std::string_view s);

struct HyponymEdge {
    std::string hyponym;
    std::string hypernym;
    auto operator<=>(const HyponymEdge&) const = default;
};

/// Directed hyponym -> hypernym graph with its transitive closure.
///
/// Immutable once built; all queries are const and safe to share between
/// threads.
class Lexicon {
public:
    Lexicon() = default;

    /// Builds from raw edges. Duplicates are dropped. Throws CycleError if the
    /// closure would contain a word reaching itself.
    static Lexicon from_edges(std::vector<HyponymEdge> edges,
                              std::unordered_map<std::string, std::string> categories = {});

    bool empty() const noexcept { return edges_.empty(); }
    const std::vector<HyponymEdge>& edges() const noexcept { return edges_; }
    const std::vector<std::string>& vocabulary() const noexcept { return words_; }

    /// True iff (hyponym, hypernym) is in the transitive closure.
    bool entails(std::string_view hyponym, std::string_view hypernym) const;
    LexicalRelation relation(std::string_view w1, std::string_view w2) const;

    /// Every closure pair, sorted lexicographically by (hyponym, hypernym).
    std::vector<HyponymEdge> closure_pairs() const;
    std::size_t closure_size() const noexcept { return closure_count_; }

    /// Optional slot category of a word (empty when untagged or unknown).
    std::string_view category(std::string_view word) const;

private:
    std::size_t index_of(std::string_view w) const;

    std::vector<HyponymEdge> edges_;
    std::vector<std::string> words_;
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<std::string> categories_;
    // Row-major n x n reachability matrix.
    std::vector<std::uint8_t> reach_;
    std::size_t closure_count_ = 0;
};

/// Reads the two-column "hyponym hypernym [@category]" text format.
/// '#' starts a comment line; blank lines are skipped.
Lexicon parse_lexicon(std::istream& in, const std::string& source = "<lexicon>");
Lexicon load_lexicon(const std::filesystem::path& path);

LexicalRelation lex_rel(const Lexicon& lexicon, std::string_view w1, std::string_view w2);

/// All words related to `w`, tagged with lex_rel(w, other), in lexicographic order.
std::vector<std::pair<std::string, LexicalRelation>> related_words(const Lexicon& lexicon,
                                                                   std::string_view w);

}  // namespace monli
