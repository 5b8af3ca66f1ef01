#include "monli/lexicon.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <sstream>

#include "monli/error.hpp"

namespace monli {

namespace {

constexpr std::size_t npos = static_cast<std::size_t>(-1);

std::string lowercase(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

}  // namespace

std::string_view to_string(LexicalRelation r) noexcept {
    switch (r) {
        case LexicalRelation::Forward: return "forward";
        case LexicalRelation::Reverse: return "reverse";
        case LexicalRelation::None: break;
    }
    return "none";
}

LexicalRelation relation_from_string(std::string_view s) {
    if (s == "forward") return LexicalRelation::Forward;
    if (s == "reverse") return LexicalRelation::Reverse;
    if (s == "none") return LexicalRelation::None;
    throw DataError("unknown lexical relation '" + std::string(s) + "'");
}

Lexicon Lexicon::from_edges(std::vector<HyponymEdge> edges,
                            std::unordered_map<std::string, std::string> categories) {
    Lexicon lex;
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

    std::vector<std::string> words;
    for (const auto& e : edges) {
        words.push_back(e.hyponym);
        words.push_back(e.hypernym);
    }
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());

    const std::size_t n = words.size();
    for (std::size_t i = 0; i < n; ++i) lex.index_.emplace(words[i], i);

    std::vector<std::vector<std::size_t>> out(n);
    for (const auto& e : edges) {
        if (e.hyponym == e.hypernym) throw CycleError(e.hyponym);
        out[lex.index_.at(e.hyponym)].push_back(lex.index_.at(e.hypernym));
    }

    // Cycle check by iterative three-colour DFS, visiting roots in word order so
    // the reported word is deterministic.
    std::vector<std::uint8_t> colour(n, 0);
    for (std::size_t root = 0; root < n; ++root) {
        if (colour[root] != 0) continue;
        std::vector<std::pair<std::size_t, std::size_t>> stack{{root, 0}};
        colour[root] = 1;
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < out[node].size()) {
                const std::size_t child = out[node][next++];
                if (colour[child] == 1) throw CycleError(words[child]);
                if (colour[child] == 0) {
                    colour[child] = 1;
                    stack.emplace_back(child, 0);
                }
            } else {
                colour[node] = 2;
                stack.pop_back();
            }
        }
    }

    lex.reach_.assign(n * n, 0);
    for (std::size_t s = 0; s < n; ++s) {
        std::vector<std::size_t> frontier(out[s].begin(), out[s].end());
        while (!frontier.empty()) {
            const std::size_t v = frontier.back();
            frontier.pop_back();
            auto& cell = lex.reach_[s * n + v];
            if (cell) continue;
            cell = 1;
            ++lex.closure_count_;
            frontier.insert(frontier.end(), out[v].begin(), out[v].end());
        }
    }

    lex.categories_.resize(n);
    for (auto& [word, cat] : categories) {
        if (auto it = lex.index_.find(word); it != lex.index_.end()) lex.categories_[it->second] = cat;
    }
    lex.edges_ = std::move(edges);
    lex.words_ = std::move(words);
    return lex;
}

std::size_t Lexicon::index_of(std::string_view w) const {
    auto it = index_.find(std::string(w));
    return it == index_.end() ? npos : it->second;
}

bool Lexicon::entails(std::string_view hyponym, std::string_view hypernym) const {
    const std::size_t a = index_of(hyponym);
    const std::size_t b = index_of(hypernym);
    if (a == npos || b == npos) return false;
    return reach_[a * words_.size() + b] != 0;
}

LexicalRelation Lexicon::relation(std::string_view w1, std::string_view w2) const {
    if (entails(w1, w2)) return LexicalRelation::Forward;
    if (entails(w2, w1)) return LexicalRelation::Reverse;
    return LexicalRelation::None;
}

std::vector<HyponymEdge> Lexicon::closure_pairs() const {
    std::vector<HyponymEdge> pairs;
    pairs.reserve(closure_count_);
    const std::size_t n = words_.size();
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b)
            if (reach_[a * n + b]) pairs.push_back({words_[a], words_[b]});
    return pairs;
}

std::string_view Lexicon::category(std::string_view word) const {
    const std::size_t i = index_of(word);
    return i == npos ? std::string_view{} : std::string_view{categories_[i]};
}

Lexicon parse_lexicon(std::istream& in, const std::string& source) {
    std::vector<HyponymEdge> edges;
    std::unordered_map<std::string, std::string> categories;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream fields(line);
        std::vector<std::string> cols;
        for (std::string tok; fields >> tok;) cols.push_back(std::move(tok));
        if (cols.empty() || cols[0].front() == '#') continue;

        std::string category;
        if (cols.size() == 3 && cols[2].size() > 1 && cols[2].front() == '@') {
            category = cols[2].substr(1);
            cols.pop_back();
        }
        if (cols.size() != 2) {
            throw ParseError(source, line_no,
                             "expected 'hyponym hypernym [@category]'; multi-word entries are not supported");
        }
        HyponymEdge edge{lowercase(cols[0]), lowercase(cols[1])};
        for (const auto* w : {&edge.hyponym, &edge.hypernym}) {
            auto [it, inserted] = categories.emplace(*w, category);
            if (!inserted && it->second != category) {
                throw ParseError(source, line_no, "conflicting categories for '" + *w + "'");
            }
        }
        edges.push_back(std::move(edge));
    }
    return Lexicon::from_edges(std::move(edges), std::move(categories));
}

Lexicon load_lexicon(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open lexicon file " + path.string());
    return parse_lexicon(in, path.string());
}

LexicalRelation lex_rel(const Lexicon& lexicon, std::string_view w1, std::string_view w2) {
    return lexicon.relation(w1, w2);
}

std::vector<std::pair<std::string, LexicalRelation>> related_words(const Lexicon& lexicon,
                                                                   std::string_view w) {
    std::vector<std::pair<std::string, LexicalRelation>> out;
    for (const auto& other : lexicon.vocabulary()) {
        const auto rel = lexicon.relation(w, other);
        if (rel != LexicalRelation::None) out.emplace_back(other, rel);
    }
    return out;
}

}  // namespace monli
