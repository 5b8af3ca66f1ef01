#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "monli/intervene.hpp"

namespace monli {

bool is_clique(const InterventionGraph& graph, std::span<const std::size_t> local_members) {
    for (std::size_t x = 0; x < local_members.size(); ++x) {
        for (std::size_t y = x + 1; y < local_members.size(); ++y) {
            if (graph.edge(local_members[x], local_members[y]) == EdgeKind::None) return false;
        }
    }
    return true;
}

std::vector<CliqueReport> greedy_clique(const InterventionGraph& graph, int alpha) {
    if (alpha < 1) throw ConfigError("clique alpha must be at least 1");
    const std::size_t n = graph.size();
    std::vector<char> remaining(n, 1);
    std::vector<CliqueReport> out;

    for (;;) {
        std::vector<char> active = remaining;
        std::size_t count = static_cast<std::size_t>(std::count(active.begin(), active.end(), 1));
        if (count == 0) break;
        std::vector<std::size_t> deg(n, 0), cdeg(n, 0);
        for (std::size_t a = 0; a < n; ++a) {
            if (!active[a]) continue;
            for (std::size_t b = 0; b < n; ++b) {
                if (!active[b]) continue;
                const auto k = graph.edge(a, b);
                deg[a] += k != EdgeKind::None;
                cdeg[a] += k == EdgeKind::Causal;
            }
        }
        auto remove = [&](std::size_t v) {
            active[v] = 0;
            --count;
            for (std::size_t b = 0; b < n; ++b) {
                if (!active[b]) continue;
                const auto k = graph.edge(v, b);
                deg[b] -= k != EdgeKind::None;
                cdeg[b] -= k == EdgeKind::Causal;
            }
        };
        auto argmin = [&](const std::vector<std::size_t>& d) {
            std::size_t best = n;
            for (std::size_t a = 0; a < n; ++a) {
                if (active[a] && (best == n || d[a] < d[best])) best = a;
            }
            return best;
        };

        // Phase 1: strip weakly causal nodes.
        while (count > 0) {
            const auto v = argmin(cdeg);
            if (cdeg[v] >= static_cast<std::size_t>(alpha)) break;
            remove(v);
        }
        // Phase 2: strip low-degree nodes until what is left is a clique.
        while (count > 0) {
            const auto v = argmin(deg);
            if (deg[v] + 1 == count) break;
            remove(v);
        }
        if (count == 0) break;

        CliqueReport report;
        report.alpha = alpha;
        std::vector<std::size_t> local;
        for (std::size_t a = 0; a < n; ++a) {
            if (!active[a]) continue;
            local.push_back(a);
            report.members.push_back(graph.nodes()[a]);
            report.causal_edges += cdeg[a];
            remaining[a] = 0;
        }
        report.causal_edges /= 2;
        if (report.causal_edges > 0) out.push_back(std::move(report));
    }
    return out;
}

AlphaSweep clique_alpha_sweep(const InterventionGraph& graph, int alpha_min, int alpha_max) {
    if (alpha_min < 1 || alpha_max < alpha_min) throw ConfigError("invalid clique alpha range");
    AlphaSweep sweep;
    for (int alpha = alpha_min; alpha <= alpha_max; ++alpha) {
        auto cliques = greedy_clique(graph, alpha);
        for (const auto& c : cliques) {
            if (c.size() > sweep.best.size()) sweep.best = c;
        }
        sweep.by_alpha.emplace(alpha, std::move(cliques));
    }
    return sweep;
}

bool verify_clique(std::span<const std::uint32_t> members, std::span<const InterchangeResult> results) {
    std::unordered_map<std::uint64_t, const InterchangeResult*> lookup;
    lookup.reserve(results.size());
    for (const auto& r : results) lookup[(std::uint64_t{r.i} << 32) | r.j] = &r;
    auto match = [&](std::uint32_t i, std::uint32_t j) {
        const auto it = lookup.find((std::uint64_t{i} << 32) | j);
        if (it == lookup.end()) return false;
        const auto& r = *it->second;
        return r.patched == r.oracle;
    };
    for (std::size_t x = 0; x < members.size(); ++x) {
        if (!match(members[x], members[x])) return false;
        for (std::size_t y = x + 1; y < members.size(); ++y) {
            if (!match(members[x], members[y]) || !match(members[y], members[x])) return false;
        }
    }
    return true;
}

namespace {

void check_domain(std::uint64_t n, std::uint64_t k, double p) {
    if (k < 1 || k > n) throw std::domain_error("expected_cliques needs 1 <= k <= n");
    if (!(p > 0.0 && p <= 1.0)) throw std::domain_error("expected_cliques needs 0 < p <= 1");
}

double log_choose(std::uint64_t n, std::uint64_t k) {
    return std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(k) + 1.0) -
           std::lgamma(static_cast<double>(n - k) + 1.0);
}

}  // namespace

double log_expected_cliques(std::uint64_t n, std::uint64_t k, double p) {
    check_domain(n, k, p);
    const double pairs = 0.5 * static_cast<double>(k) * static_cast<double>(k - 1);
    return log_choose(n, k) + pairs * std::log(p);
}

double expected_cliques(std::uint64_t n, std::uint64_t k, double p) {
    const double log_value = log_expected_cliques(n, k, p);
    // Small binomials are computed exactly so integer-valued answers come out exact.
    if (log_choose(n, k) < 50.0 * std::log(2.0)) {
        const std::uint64_t r = std::min(k, n - k);
        unsigned __int128 c = 1;
        for (std::uint64_t i = 1; i <= r; ++i) c = c * (n - r + i) / i;
        const auto pairs = k * (k - 1) / 2;
        return static_cast<double>(c) * std::pow(p, static_cast<double>(pairs));
    }
    return std::exp(log_value);
}

}  // namespace monli
