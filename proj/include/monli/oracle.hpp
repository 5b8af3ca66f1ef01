#pragma once

#include <string>
#include <vector>

#include "monli/example.hpp"
#include "monli/lexicon.hpp"

namespace monli {

// Reference algorithm: read the lexical relation of the substituted words,
// reverse it under negation.

struct OracleState {
    LexicalRelation lexrel = LexicalRelation::None;
    bool negated = false;
    LexicalRelation output = LexicalRelation::None;
};

bool contains_not(const NLIExample& e) noexcept;
/// Token-level fallback for ingested data: "not" present in both sentences.
bool contains_not_tokens(const std::vector<std::string>& premise,
                         const std::vector<std::string>& hypothesis) noexcept;

/// Runs the algorithm and exposes its intermediate variable.
OracleState trace(const NLIExample& e);
LexicalRelation infer(const NLIExample& e);
Label relation_to_label(LexicalRelation r);

/// Output of the algorithm on `i` when its lexrel variable is overwritten by
/// the value it takes on `j`. Negation context always comes from `i`.
LexicalRelation interv_oracle(const NLIExample& i, const NLIExample& j);

}  // namespace monli
