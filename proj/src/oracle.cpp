#include "monli/oracle.hpp"

#include <algorithm>

#include "monli/error.hpp"

namespace monli {

namespace {

void require_relation(LexicalRelation r, const char* what) {
    if (r == LexicalRelation::None) throw DataError(std::string(what) + ": lexrel is NONE");
}

}  // namespace

bool contains_not(const NLIExample& e) noexcept { return e.negated; }

bool contains_not_tokens(const std::vector<std::string>& premise,
                         const std::vector<std::string>& hypothesis) noexcept {
    auto has_not = [](const std::vector<std::string>& s) {
        return std::find(s.begin(), s.end(), "not") != s.end();
    };
    return has_not(premise) && has_not(hypothesis);
}

OracleState trace(const NLIExample& e) {
    require_relation(e.lexrel, "infer");
    OracleState s;
    s.lexrel = e.lexrel;
    s.negated = contains_not(e);
    s.output = s.negated ? reverse(s.lexrel) : s.lexrel;
    return s;
}

LexicalRelation infer(const NLIExample& e) { return trace(e).output; }

Label relation_to_label(LexicalRelation r) {
    require_relation(r, "relation_to_label");
    return r == LexicalRelation::Forward ? Label::Entailment : Label::Neutral;
}

LexicalRelation interv_oracle(const NLIExample& i, const NLIExample& j) {
    require_relation(i.lexrel, "interv_oracle");
    require_relation(j.lexrel, "interv_oracle");
    const LexicalRelation base = infer(i);
    return i.lexrel == j.lexrel ? base : reverse(base);
}

}  // namespace monli
