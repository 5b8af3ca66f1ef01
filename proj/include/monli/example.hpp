#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "monli/lexicon.hpp"

namespace monli {

// Two-way NLI labels; contradiction never arises from single-word
// hyponym/hypernym substitution.
enum class Label : std::uint8_t { Entailment = 0, Neutral = 1 };

constexpr Label flip(Label l) noexcept {
    return l == Label::Entailment ? Label::Neutral : Label::Entailment;
}
std::string_view to_string(Label l) noexcept;
Label label_from_string(std::string_view s);

struct NLIExample {
    std::vector<std::string> premise;
    std::vector<std::string> hypothesis;
    Label label = Label::Entailment;
    std::string w_p;
    std::string w_h;
    bool negated = false;
    LexicalRelation lexrel = LexicalRelation::None;
    std::string pair_id;
    std::string template_id;

    bool operator==(const NLIExample&) const = default;
};

/// Lowercase whitespace tokenization.
std::vector<std::string> tokenize(std::string_view text);
std::string join_tokens(const std::vector<std::string>& tokens);

/// The FORWARD-side word of the substitution, i.e. the hyponym.
const std::string& hyponym_of(const NLIExample& e);

nlohmann::json to_json(const NLIExample& e);
NLIExample example_from_json(const nlohmann::json& j);

void write_jsonl(std::ostream& out, std::span<const NLIExample> examples);
void write_jsonl(const std::filesystem::path& path, std::span<const NLIExample> examples);
/// Reads a file previously produced by write_jsonl, trusting stored fields.
std::vector<NLIExample> read_jsonl(const std::filesystem::path& path);

}  // namespace monli
