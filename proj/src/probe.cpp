#include "monli/probe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "monli/error.hpp"
#include "monli/oracle.hpp"

namespace monli {

std::string_view to_string(ProbeTarget t) noexcept {
    return t == ProbeTarget::Lexrel ? "lexrel" : "infer";
}

ProbeTarget probe_target_from_string(std::string_view s) {
    if (s == "lexrel") return ProbeTarget::Lexrel;
    if (s == "infer") return ProbeTarget::InferOutput;
    throw ConfigError("unknown probe target '" + std::string(s) + "'");
}

ActivationSet collect_activations(const Model& model, std::span<const NLIExample> examples) {
    ActivationSet set;
    set.rows = model.config().rows;
    set.width = model.config().width;
    set.locations = all_locations(set.rows);
    const auto n = static_cast<Eigen::Index>(examples.size());
    set.matrices.assign(set.locations.size(), Matrix(n, set.width));
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& e = examples[static_cast<std::size_t>(i)];
        const auto [label, rec] = forward(model, e);
        for (std::size_t l = 0; l < set.locations.size(); ++l) {
            const auto v = rec.at(set.locations[l]);
            for (int k = 0; k < set.width; ++k) set.matrices[l](i, k) = v[static_cast<std::size_t>(k)];
        }
        set.lexrel.push_back(e.lexrel == LexicalRelation::Reverse ? 1 : 0);
        set.infer_output.push_back(infer(e) == LexicalRelation::Reverse ? 1 : 0);
        set.word_types.push_back(e.w_p + ">" + e.w_h);
        set.model_predictions.push_back(label);
    }
    return set;
}

namespace {

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace

std::vector<int> task_labels(const ActivationSet& set, const ProbeTask& task, ControlMode mode) {
    const auto& real = set.targets(task.target);
    if (!task.control) return real;
    // Control labels keep the class balance of the real task.
    const double p = real.empty() ? 0.5
                                  : static_cast<double>(std::count(real.begin(), real.end(), 1)) /
                                        static_cast<double>(real.size());
    std::vector<int> out(real.size());
    if (mode == ControlMode::PerExample) {
        std::mt19937_64 rng(task.seed);
        std::bernoulli_distribution coin(p);
        for (auto& v : out) v = coin(rng) ? 1 : 0;
    } else {
        for (std::size_t i = 0; i < out.size(); ++i) {
            const auto h = fnv1a(set.word_types[i], fnv1a(std::to_string(task.seed)));
            const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
            out[i] = u < p ? 1 : 0;
        }
    }
    return out;
}

namespace {

struct Adam {
    explicit Adam(double lr) : lr(lr) {}
    double lr;
    double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    int t = 0;
    void step(Matrix& p, const Matrix& g, Matrix& m, Matrix& v) const {
        const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
        p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    }
};

Matrix standardize(const Matrix& x, const Probe& p) {
    Matrix z = x.rowwise() - p.mean;
    return z.array().rowwise() * p.inv_std.array();
}

Matrix probe_logits(const Probe& p, const Matrix& z, Matrix* hidden) {
    Matrix h = (z * p.w1).rowwise() + p.b1;
    if (p.nonlinear) h = h.cwiseMax(0.0);
    Matrix out = (h * p.w2).rowwise() + p.b2;
    if (hidden) *hidden = std::move(h);
    return out;
}

double accuracy_of(const Probe& p, const Matrix& x, std::span<const int> y) {
    if (y.empty()) return 0.0;
    const auto pred = p.predict(x);
    std::size_t ok = 0;
    for (std::size_t i = 0; i < y.size(); ++i) ok += pred[i] == y[i];
    return static_cast<double>(ok) / static_cast<double>(y.size());
}

Matrix take_rows(const Matrix& x, std::span<const std::size_t> idx) {
    Matrix out(static_cast<Eigen::Index>(idx.size()), x.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(idx[i]));
    return out;
}

}  // namespace

std::vector<int> Probe::predict(const Matrix& x) const {
    const Matrix logits = probe_logits(*this, standardize(x, *this), nullptr);
    std::vector<int> out(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index i = 0; i < logits.rows(); ++i) out[static_cast<std::size_t>(i)] = logits(i, 1) > logits(i, 0);
    return out;
}

ProbeFit train_probe(const Matrix& activations, std::span<const int> targets, const ProbeConfig& config) {
    const auto n = static_cast<std::size_t>(activations.rows());
    if (targets.size() != n) throw DataError("probe targets do not match activation count");
    if (n == 0) throw DataError("no activations to probe");
    if (config.hidden < 1) throw ConfigError("probe hidden size must be positive");
    if (config.heldout_fraction < 0.0 || config.heldout_fraction >= 1.0) {
        throw ConfigError("probe heldout_fraction must be in [0, 1)");
    }
    const auto ones = std::count(targets.begin(), targets.end(), 1);
    if (ones == 0 || static_cast<std::size_t>(ones) == n) {
        throw DataError("probe targets contain a single class; the task is degenerate");
    }

    std::vector<std::size_t> train_idx(n), eval_idx;
    std::iota(train_idx.begin(), train_idx.end(), std::size_t{0});
    if (config.heldout_fraction > 0.0) {
        std::mt19937_64 rng(config.seed ^ 0x5bd1e995u);
        std::shuffle(train_idx.begin(), train_idx.end(), rng);
        const auto held = static_cast<std::size_t>(std::llround(config.heldout_fraction * static_cast<double>(n)));
        eval_idx.assign(train_idx.begin(), train_idx.begin() + static_cast<std::ptrdiff_t>(std::min(held, n - 1)));
        train_idx.erase(train_idx.begin(), train_idx.begin() + static_cast<std::ptrdiff_t>(eval_idx.size()));
        std::sort(train_idx.begin(), train_idx.end());
        std::sort(eval_idx.begin(), eval_idx.end());
    } else {
        eval_idx = train_idx;
    }
    const Matrix x = take_rows(activations, train_idx);
    std::vector<int> y;
    for (auto i : train_idx) y.push_back(targets[i]);
    const auto m = x.rows();
    const int d = static_cast<int>(x.cols());

    Probe p;
    p.nonlinear = config.nonlinear;
    p.mean = x.colwise().mean();
    const RowVector var = (x.rowwise() - p.mean).array().square().colwise().mean();
    p.inv_std = (var.array() + 1e-8).rsqrt();

    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto init = [&](int r, int c, double s) {
        Matrix w(r, c);
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = s * normal(rng);
        return w;
    };
    p.w1 = init(d, config.hidden, 1.0 / std::sqrt(static_cast<double>(d)));
    p.b1 = RowVector::Zero(config.hidden);
    p.w2 = init(config.hidden, 2, 1.0 / std::sqrt(static_cast<double>(config.hidden)));
    p.b2 = RowVector::Zero(2);

    Matrix onehot = Matrix::Zero(m, 2);
    for (Eigen::Index i = 0; i < m; ++i) onehot(i, y[static_cast<std::size_t>(i)]) = 1.0;
    const Matrix z = standardize(x, p);

    Matrix mw1 = Matrix::Zero(d, config.hidden), vw1 = mw1, mw2 = Matrix::Zero(config.hidden, 2), vw2 = mw2;
    Matrix mb1 = Matrix::Zero(1, config.hidden), vb1 = mb1, mb2 = Matrix::Zero(1, 2), vb2 = mb2;
    Adam adam(config.learning_rate);

    double prev = std::numeric_limits<double>::infinity();
    int stall = 0, epoch = 0;
    for (; epoch < config.max_epochs; ++epoch) {
        Matrix h;
        Matrix logits = probe_logits(p, z, &h);
        const RowVector dummy;
        Eigen::VectorXd mx = logits.rowwise().maxCoeff();
        Matrix e = (logits.colwise() - mx).array().exp();
        Eigen::VectorXd sum = e.rowwise().sum();
        Matrix prob = e.array().colwise() / sum.array();
        double loss = 0.0;
        for (Eigen::Index i = 0; i < m; ++i) loss -= std::log(std::max(prob(i, y[static_cast<std::size_t>(i)]), 1e-300));
        loss /= static_cast<double>(m);

        Matrix dlog = (prob - onehot) / static_cast<double>(m);
        Matrix gw2 = h.transpose() * dlog;
        Matrix gb2 = dlog.colwise().sum();
        Matrix dh = dlog * p.w2.transpose();
        if (p.nonlinear) dh = dh.cwiseProduct((h.array() > 0.0).cast<double>().matrix());
        Matrix gw1 = z.transpose() * dh;
        Matrix gb1 = dh.colwise().sum();

        ++adam.t;
        adam.step(p.w1, gw1, mw1, vw1);
        Matrix b1 = p.b1;
        adam.step(b1, gb1, mb1, vb1);
        p.b1 = b1;
        adam.step(p.w2, gw2, mw2, vw2);
        Matrix b2 = p.b2;
        adam.step(b2, gb2, mb2, vb2);
        p.b2 = b2;

        if (prev - loss < config.tolerance * std::max(1.0, std::abs(prev))) {
            if (++stall >= config.patience) {
                ++epoch;
                break;
            }
        } else {
            stall = 0;
        }
        prev = std::min(prev, loss);
    }

    ProbeFit fit;
    fit.epochs = epoch;
    std::vector<int> ye;
    for (auto i : eval_idx) ye.push_back(targets[i]);
    fit.accuracy = accuracy_of(p, take_rows(activations, eval_idx), ye);
    fit.probe = std::move(p);
    return fit;
}

std::vector<ProbeReport> selectivity_sweep(const ActivationSet& set, std::span<const ProbeTarget> targets,
                                           const ProbeConfig& config) {
    std::vector<ProbeReport> out;
    for (std::size_t l = 0; l < set.locations.size(); ++l) {
        for (const auto target : targets) {
            ProbeReport r;
            r.location = set.locations[l];
            r.target = target;
            const auto task = task_labels(set, {target, false, config.seed}, config.control_mode);
            const auto control = task_labels(set, {target, true, config.seed + 1}, config.control_mode);
            r.task_accuracy = train_probe(set.matrices[l], task, config).accuracy;
            r.control_accuracy = train_probe(set.matrices[l], control, config).accuracy;
            r.selectivity = r.task_accuracy - r.control_accuracy;
            out.push_back(r);
        }
    }
    return out;
}

std::vector<ProbeReport> selectivity_sweep(const Model& model, std::span<const NLIExample> examples,
                                           std::span<const ProbeTarget> targets, const ProbeConfig& config) {
    return selectivity_sweep(collect_activations(model, examples), targets, config);
}

void write_probe_csv(std::ostream& out, std::span<const ProbeReport> reports) {
    out << "location_row,location_role,target,task_accuracy,control_accuracy,selectivity\n";
    out.precision(6);
    out << std::fixed;
    for (const auto& r : reports) {
        out << r.location.row << ',' << to_string(r.location.role) << ',' << to_string(r.target) << ','
            << r.task_accuracy << ',' << r.control_accuracy << ',' << r.selectivity << '\n';
    }
}

void write_probe_csv(const std::filesystem::path& path, std::span<const ProbeReport> reports) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    write_probe_csv(out, reports);
}

std::vector<ProbeReport> read_probe_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<ProbeReport> out;
    std::string line;
    std::getline(in, line);
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
        if (f.size() != 6) throw ParseError(path.string(), lineno, "expected 6 columns");
        try {
            ProbeReport r;
            r.location = {std::stoi(f[0]), role_from_string(f[1])};
            r.target = probe_target_from_string(f[2]);
            r.task_accuracy = std::stod(f[3]);
            r.control_accuracy = std::stod(f[4]);
            r.selectivity = std::stod(f[5]);
            out.push_back(r);
        } catch (const std::logic_error& e) {
            throw ParseError(path.string(), lineno, e.what());
        }
    }
    return out;
}

}  // namespace monli
