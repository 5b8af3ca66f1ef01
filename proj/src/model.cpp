#include "monli/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numbers>
#include <random>
#include <set>

#include "monli/error.hpp"

namespace monli {

namespace {

constexpr double kLayerNormEps = 1e-5;

using MapMat = Eigen::Map<Matrix>;
using CMapMat = Eigen::Map<const Matrix>;
using MapRow = Eigen::Map<RowVector>;
using CMapRow = Eigen::Map<const RowVector>;

const std::array<std::string_view, 4> kReserved = {"[PAD]", "[UNK]", "[CLS]", "[SEP]"};

// Portable standard normal draw (Box-Muller over mt19937_64), so initial
// parameters do not depend on the standard library's distribution code.
double normal_draw(std::mt19937_64& rng) {
    auto uniform = [&rng] { return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53; };
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void layer_norm(const Matrix& x, const double* gamma, const double* beta, Matrix& xhat,
                Eigen::VectorXd& rstd, Matrix& out) {
    const auto d = x.cols();
    xhat.resize(x.rows(), d);
    out.resize(x.rows(), d);
    rstd.resize(x.rows());
    CMapRow g(gamma, d), b(beta, d);
    for (Eigen::Index t = 0; t < x.rows(); ++t) {
        const double mean = x.row(t).mean();
        const double var = (x.row(t).array() - mean).square().mean();
        rstd(t) = 1.0 / std::sqrt(var + kLayerNormEps);
        xhat.row(t) = (x.row(t).array() - mean) * rstd(t);
        out.row(t) = xhat.row(t).cwiseProduct(g) + b;
    }
}

// Returns dx and accumulates dgamma / dbeta.
Matrix layer_norm_backward(const Matrix& dout, const Matrix& xhat, const Eigen::VectorXd& rstd,
                           const double* gamma, double* dgamma, double* dbeta) {
    const auto d = dout.cols();
    CMapRow g(gamma, d);
    MapRow dg(dgamma, d), db(dbeta, d);
    Matrix dx(dout.rows(), d);
    for (Eigen::Index t = 0; t < dout.rows(); ++t) {
        dg += dout.row(t).cwiseProduct(xhat.row(t));
        db += dout.row(t);
        const RowVector dhat = dout.row(t).cwiseProduct(g);
        const double mean_dhat = dhat.mean();
        const double mean_dhat_xhat = dhat.cwiseProduct(xhat.row(t)).mean();
        dx.row(t) = rstd(t) * (dhat.array() - mean_dhat - xhat.row(t).array() * mean_dhat_xhat);
    }
    return dx;
}

constexpr double kGeluC = 0.044715;
const double kGeluA = std::sqrt(2.0 / std::numbers::pi);

double gelu(double u) { return 0.5 * u * (1.0 + std::tanh(kGeluA * (u + kGeluC * u * u * u))); }

double gelu_grad(double u) {
    const double th = std::tanh(kGeluA * (u + kGeluC * u * u * u));
    return 0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * kGeluA * (1.0 + 3.0 * kGeluC * u * u);
}

void softmax_rows(Matrix& s) {
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const double m = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - m).exp();
        s.row(r) /= s.row(r).sum();
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Locations
// ---------------------------------------------------------------------------

std::string_view to_string(Role r) noexcept {
    switch (r) {
        case Role::Cls: return "cls";
        case Role::Wp: return "wp";
        case Role::Wh: return "wh";
    }
    return "?";
}

Role role_from_string(std::string_view s) {
    if (s == "cls") return Role::Cls;
    if (s == "wp") return Role::Wp;
    if (s == "wh") return Role::Wh;
    throw ConfigError("unknown token role '" + std::string(s) + "' (expected cls, wp or wh)");
}

std::string Location::to_string() const {
    return std::to_string(row) + ":" + std::string(monli::to_string(role));
}

Location Location::parse(std::string_view s) {
    const auto colon = s.find(':');
    if (colon == std::string_view::npos) throw ConfigError("location must look like '3:wh'");
    Location loc;
    try {
        loc.row = std::stoi(std::string(s.substr(0, colon)));
    } catch (const std::exception&) {
        throw ConfigError("bad location row in '" + std::string(s) + "'");
    }
    loc.role = role_from_string(s.substr(colon + 1));
    return loc;
}

std::vector<Location> all_locations(int rows) {
    std::vector<Location> out;
    for (int r = 1; r <= rows; ++r)
        for (Role role : {Role::Cls, Role::Wp, Role::Wh}) out.push_back({r, role});
    return out;
}

std::size_t location_index(Location loc) noexcept {
    return static_cast<std::size_t>(loc.row - 1) * 3 + static_cast<std::size_t>(loc.role);
}

// ---------------------------------------------------------------------------
// Vocab / config / encode
// ---------------------------------------------------------------------------

Vocab::Vocab() {
    for (auto t : kReserved) {
        index_.emplace(std::string(t), static_cast<std::uint32_t>(tokens_.size()));
        tokens_.emplace_back(t);
    }
}

Vocab Vocab::build(std::span<const NLIExample> examples) {
    std::set<std::string> seen;
    for (const auto& e : examples) {
        seen.insert(e.premise.begin(), e.premise.end());
        seen.insert(e.hypothesis.begin(), e.hypothesis.end());
    }
    Vocab v;
    for (const auto& t : seen) {
        if (v.index_.count(t)) continue;
        v.index_.emplace(t, static_cast<std::uint32_t>(v.tokens_.size()));
        v.tokens_.push_back(t);
    }
    return v;
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
    if (tokens.size() < kReserved.size() ||
        !std::equal(kReserved.begin(), kReserved.end(), tokens.begin())) {
        throw DataError("vocabulary must start with [PAD] [UNK] [CLS] [SEP]");
    }
    Vocab v;
    v.tokens_.clear();
    v.index_.clear();
    for (auto& t : tokens) {
        if (!v.index_.emplace(t, static_cast<std::uint32_t>(v.tokens_.size())).second) {
            throw DataError("duplicate vocabulary token '" + t + "'");
        }
        v.tokens_.push_back(std::move(t));
    }
    return v;
}

std::uint32_t Vocab::index(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnk : it->second;
}

void ModelConfig::validate() const {
    if (rows < 1 || rows > 12) throw ConfigError("model rows must be in [1, 12]");
    if (width < 1 || heads < 1 || width % heads != 0) {
        throw ConfigError("model width must be a positive multiple of heads");
    }
    if (max_len < 5) throw ConfigError("max_len must be at least 5");
    if (ffn < 0) throw ConfigError("ffn width must be non-negative");
}

Encoded encode(const NLIExample& example, const ModelConfig& config) {
    const std::size_t len = example.premise.size() + example.hypothesis.size() + 3;
    if (len > static_cast<std::size_t>(config.max_len)) {
        throw DataError("example '" + example.pair_id + "' has " + std::to_string(len) +
                        " tokens, more than max_len " + std::to_string(config.max_len));
    }
    auto locate = [&](const std::vector<std::string>& sentence, const std::string& word, const char* name) {
        const auto n = std::count(sentence.begin(), sentence.end(), word);
        if (n != 1) {
            throw DataError(std::string(name) + " '" + word + "' occurs " + std::to_string(n) +
                            " times in its sentence (pair " + example.pair_id + ")");
        }
        return static_cast<std::size_t>(std::find(sentence.begin(), sentence.end(), word) - sentence.begin());
    };
    const std::size_t wp = locate(example.premise, example.w_p, "w_p");
    const std::size_t wh = locate(example.hypothesis, example.w_h, "w_h");

    Encoded enc;
    enc.ids.reserve(len);
    enc.ids.push_back(Vocab::kCls);
    for (const auto& t : example.premise) enc.ids.push_back(config.vocab.index(t));
    enc.ids.push_back(Vocab::kSep);
    for (const auto& t : example.hypothesis) enc.ids.push_back(config.vocab.index(t));
    enc.ids.push_back(Vocab::kSep);
    enc.positions = {0, 1 + wp, example.premise.size() + 2 + wh};
    return enc;
}

// ---------------------------------------------------------------------------
// Parameter layout
// ---------------------------------------------------------------------------

ParamLayout ParamLayout::make(const ModelConfig& c) {
    ParamLayout p;
    const auto d = static_cast<std::size_t>(c.width);
    const auto f = static_cast<std::size_t>(c.ffn_width());
    auto add = [&p](std::string name, std::size_t rows, std::size_t cols) {
        const std::size_t off = p.total;
        p.groups.push_back({std::move(name), off, rows, cols});
        p.total += rows * cols;
        return off;
    };
    p.tok_emb = add("tok_emb", c.vocab.size(), d);
    p.pos_emb = add("pos_emb", static_cast<std::size_t>(c.max_len), d);
    for (int l = 0; l < c.rows; ++l) {
        const std::string pre = "layer" + std::to_string(l + 1) + ".";
        LayerParams lp{};
        lp.ln1_g = add(pre + "ln1_g", 1, d);
        lp.ln1_b = add(pre + "ln1_b", 1, d);
        lp.wq = add(pre + "wq", d, d);
        lp.bq = add(pre + "bq", 1, d);
        lp.wk = add(pre + "wk", d, d);
        lp.bk = add(pre + "bk", 1, d);
        lp.wv = add(pre + "wv", d, d);
        lp.bv = add(pre + "bv", 1, d);
        lp.wo = add(pre + "wo", d, d);
        lp.bo = add(pre + "bo", 1, d);
        lp.ln2_g = add(pre + "ln2_g", 1, d);
        lp.ln2_b = add(pre + "ln2_b", 1, d);
        lp.w1 = add(pre + "w1", d, f);
        lp.b1 = add(pre + "b1", 1, f);
        lp.w2 = add(pre + "w2", f, d);
        lp.b2 = add(pre + "b2", 1, d);
        p.layers.push_back(lp);
    }
    p.lnf_g = add("lnf_g", 1, d);
    p.lnf_b = add("lnf_b", 1, d);
    p.head_w = add("head_w", d, 2);
    p.head_b = add("head_b", 1, 2);
    return p;
}

// ---------------------------------------------------------------------------
// Traces
// ---------------------------------------------------------------------------

Eigen::Map<const RowVector> ForwardTrace::row_vector(int row, std::size_t pos) const {
    const Matrix& z = layers.at(static_cast<std::size_t>(row - 1)).z;
    return Eigen::Map<const RowVector>(z.data() + static_cast<Eigen::Index>(pos) * z.cols(), z.cols());
}

std::span<const double> ActivationRecord::at(Location loc) const {
    const std::size_t w = static_cast<std::size_t>(width);
    return std::span<const double>(data).subspan(location_index(loc) * w, w);
}

bool ActivationRecord::all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

ActivationRecord activation_record(const ForwardTrace& trace, int width) {
    ActivationRecord rec;
    rec.rows = static_cast<int>(trace.layers.size());
    rec.width = width;
    rec.data.reserve(static_cast<std::size_t>(rec.rows) * 3 * static_cast<std::size_t>(width));
    for (const auto& loc : all_locations(rec.rows)) {
        const auto v = trace.row_vector(loc.row, trace.positions[static_cast<std::size_t>(loc.role)]);
        rec.data.insert(rec.data.end(), v.data(), v.data() + v.size());
    }
    rec.predicted = trace.label();
    rec.scores = trace.logits;
    return rec;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

Model::Model(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    layout_ = ParamLayout::make(config_);
    params_.assign(layout_.total, 0.0);

    std::mt19937_64 rng(config_.seed);
    auto fill = [&](std::size_t off, std::size_t n, double stddev) {
        for (std::size_t i = 0; i < n; ++i) params_[off + i] = stddev * normal_draw(rng);
    };
    const auto d = static_cast<std::size_t>(config_.width);
    const auto f = static_cast<std::size_t>(config_.ffn_width());
    const double emb_std = 1.0 / std::sqrt(static_cast<double>(d));
    fill(layout_.tok_emb, config_.vocab.size() * d, emb_std);
    fill(layout_.pos_emb, static_cast<std::size_t>(config_.max_len) * d, emb_std);
    for (const auto& lp : layout_.layers) {
        std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(lp.ln1_g), d, 1.0);
        std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(lp.ln2_g), d, 1.0);
        const double s = 1.0 / std::sqrt(static_cast<double>(d));
        fill(lp.wq, d * d, s);
        fill(lp.wk, d * d, s);
        fill(lp.wv, d * d, s);
        fill(lp.wo, d * d, s / std::sqrt(2.0 * config_.rows));
        fill(lp.w1, d * f, s);
        fill(lp.w2, f * d, 1.0 / std::sqrt(static_cast<double>(f) * 2.0 * config_.rows));
    }
    std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(layout_.lnf_g), d, 1.0);
    fill(layout_.head_w, d * 2, 1.0 / std::sqrt(static_cast<double>(d)));
}

Model::Model(ModelConfig config, ParamVector parameters)
    : config_(std::move(config)), params_(std::move(parameters)) {
    config_.validate();
    layout_ = ParamLayout::make(config_);
    if (params_.size() != layout_.total) {
        throw DataError("parameter count " + std::to_string(params_.size()) + " does not match layout " +
                        std::to_string(layout_.total));
    }
}

std::uint64_t Model::checksum() const noexcept {
    std::uint64_t h = 1469598103934665603ull;
    for (double v : params_) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xffu;
            h *= 1099511628211ull;
        }
    }
    return h;
}

void Model::run(const Encoded& input, ForwardTrace& trace) const {
    const auto len = static_cast<Eigen::Index>(input.ids.size());
    const auto d = config_.width;
    if (len > config_.max_len) throw DataError("input longer than max_len");
    CMapMat tok(params_.data() + layout_.tok_emb, static_cast<Eigen::Index>(config_.vocab.size()), d);
    CMapMat pos(params_.data() + layout_.pos_emb, config_.max_len, d);

    Matrix x(len, d);
    for (Eigen::Index t = 0; t < len; ++t) {
        const auto id = input.ids[static_cast<std::size_t>(t)];
        if (id >= config_.vocab.size()) throw DataError("token id out of range");
        x.row(t) = tok.row(id) + pos.row(t);
    }
    trace.ids = input.ids;
    trace.positions = input.positions;
    trace.layers.resize(static_cast<std::size_t>(config_.rows));
    for (int l = 0; l < config_.rows; ++l) {
        run_layer(l, l == 0 ? x : trace.layers[static_cast<std::size_t>(l - 1)].z,
                  trace.layers[static_cast<std::size_t>(l)]);
    }
    run_head(trace.layers.back().z, trace);
}

void Model::run_layer(int layer, const Matrix& x, LayerTrace& t) const {
    const auto& lp = layout_.layers[static_cast<std::size_t>(layer)];
    const double* p = params_.data();
    const Eigen::Index d = config_.width;
    const Eigen::Index f = config_.ffn_width();
    const Eigen::Index dh = d / config_.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    t.x_in = x;
    layer_norm(x, p + lp.ln1_g, p + lp.ln1_b, t.xhat1, t.rstd1, t.n1);
    t.q.noalias() = t.n1 * CMapMat(p + lp.wq, d, d);
    t.q.rowwise() += CMapRow(p + lp.bq, d);
    t.k.noalias() = t.n1 * CMapMat(p + lp.wk, d, d);
    t.k.rowwise() += CMapRow(p + lp.bk, d);
    t.v.noalias() = t.n1 * CMapMat(p + lp.wv, d, d);
    t.v.rowwise() += CMapRow(p + lp.bv, d);

    t.attn.resize(static_cast<std::size_t>(config_.heads));
    t.ctx.resize(x.rows(), d);
    for (int h = 0; h < config_.heads; ++h) {
        Matrix& a = t.attn[static_cast<std::size_t>(h)];
        a.noalias() = t.q.middleCols(h * dh, dh) * t.k.middleCols(h * dh, dh).transpose();
        a *= scale;
        softmax_rows(a);
        t.ctx.middleCols(h * dh, dh).noalias() = a * t.v.middleCols(h * dh, dh);
    }
    t.y = x;
    t.y.noalias() += t.ctx * CMapMat(p + lp.wo, d, d);
    t.y.rowwise() += CMapRow(p + lp.bo, d);

    layer_norm(t.y, p + lp.ln2_g, p + lp.ln2_b, t.xhat2, t.rstd2, t.n2);
    t.u.noalias() = t.n2 * CMapMat(p + lp.w1, d, f);
    t.u.rowwise() += CMapRow(p + lp.b1, f);
    t.g = t.u.unaryExpr([](double u) { return gelu(u); });
    t.z = t.y;
    t.z.noalias() += t.g * CMapMat(p + lp.w2, f, d);
    t.z.rowwise() += CMapRow(p + lp.b2, d);
}

void Model::run_head(const Matrix& top, ForwardTrace& trace) const {
    const double* p = params_.data();
    const Eigen::Index d = config_.width;
    const RowVector cls = top.row(0);
    const double mean = cls.mean();
    const double var = (cls.array() - mean).square().mean();
    trace.cls_rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    trace.cls_hat = (cls.array() - mean) * trace.cls_rstd;
    trace.cls_norm = trace.cls_hat.cwiseProduct(CMapRow(p + layout_.lnf_g, d)) + CMapRow(p + layout_.lnf_b, d);
    const RowVector logits = trace.cls_norm * CMapMat(p + layout_.head_w, d, 2) + CMapRow(p + layout_.head_b, 2);
    trace.logits = {logits(0), logits(1)};
    const double m = std::max(logits(0), logits(1));
    const double e0 = std::exp(logits(0) - m);
    const double e1 = std::exp(logits(1) - m);
    trace.probs = {e0 / (e0 + e1), e1 / (e0 + e1)};
}

Label Model::run_patched(const ForwardTrace& base, Location loc, std::span<const double> vector,
                         ForwardTrace* out) const {
    if (loc.row < 1 || loc.row > config_.rows) throw ConfigError("location row out of range");
    if (vector.size() != static_cast<std::size_t>(config_.width)) {
        throw DataError("patch vector has dimension " + std::to_string(vector.size()) + ", expected " +
                        std::to_string(config_.width));
    }
    if (base.layers.size() != static_cast<std::size_t>(config_.rows)) {
        throw DataError("base trace does not come from this model");
    }
    const auto r = static_cast<std::size_t>(loc.row);
    const auto pos = static_cast<Eigen::Index>(base.positions[static_cast<std::size_t>(loc.role)]);

    ForwardTrace scratch;
    ForwardTrace& t = out ? *out : scratch;
    if (out) {
        t = base;
    } else {
        t.layers.resize(base.layers.size());
        t.layers[r - 1].z = base.layers[r - 1].z;
    }
    t.layers[r - 1].z.row(pos) = Eigen::Map<const RowVector>(vector.data(), config_.width);
    for (std::size_t l = r; l < t.layers.size(); ++l) run_layer(static_cast<int>(l), t.layers[l - 1].z, t.layers[l]);
    run_head(t.layers.back().z, t);
    return t.label();
}

Matrix Model::layer_backward(int layer, const LayerTrace& t, const Matrix& dz, std::span<double> grad) const {
    const auto& lp = layout_.layers[static_cast<std::size_t>(layer)];
    const double* p = params_.data();
    double* g = grad.data();
    const Eigen::Index d = config_.width;
    const Eigen::Index f = config_.ffn_width();
    const Eigen::Index dh = d / config_.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    // z = y + gelu(n2 W1 + b1) W2 + b2
    MapMat(g + lp.w2, f, d).noalias() += t.g.transpose() * dz;
    MapRow(g + lp.b2, d) += dz.colwise().sum();
    Matrix du = dz * CMapMat(p + lp.w2, f, d).transpose();
    du.array() *= t.u.unaryExpr([](double u) { return gelu_grad(u); }).array();
    MapMat(g + lp.w1, d, f).noalias() += t.n2.transpose() * du;
    MapRow(g + lp.b1, f) += du.colwise().sum();
    const Matrix dn2 = du * CMapMat(p + lp.w1, d, f).transpose();
    Matrix dy = dz + layer_norm_backward(dn2, t.xhat2, t.rstd2, p + lp.ln2_g, g + lp.ln2_g, g + lp.ln2_b);

    // y = x + ctx Wo + bo
    MapMat(g + lp.wo, d, d).noalias() += t.ctx.transpose() * dy;
    MapRow(g + lp.bo, d) += dy.colwise().sum();
    const Matrix dctx = dy * CMapMat(p + lp.wo, d, d).transpose();

    Matrix dq(t.q.rows(), d), dk(t.k.rows(), d), dv(t.v.rows(), d);
    for (int h = 0; h < config_.heads; ++h) {
        const Matrix& a = t.attn[static_cast<std::size_t>(h)];
        const auto cols = [&](const Matrix& m) { return m.middleCols(h * dh, dh); };
        const Matrix dctx_h = cols(dctx);
        Matrix da = dctx_h * cols(t.v).transpose();
        dv.middleCols(h * dh, dh).noalias() = a.transpose() * dctx_h;
        const Eigen::VectorXd row_dot = (da.array() * a.array()).rowwise().sum();
        da = (a.array() * (da.array().colwise() - row_dot.array())).matrix() * scale;
        dq.middleCols(h * dh, dh).noalias() = da * cols(t.k);
        dk.middleCols(h * dh, dh).noalias() = da.transpose() * cols(t.q);
    }
    MapMat(g + lp.wq, d, d).noalias() += t.n1.transpose() * dq;
    MapRow(g + lp.bq, d) += dq.colwise().sum();
    MapMat(g + lp.wk, d, d).noalias() += t.n1.transpose() * dk;
    MapRow(g + lp.bk, d) += dk.colwise().sum();
    MapMat(g + lp.wv, d, d).noalias() += t.n1.transpose() * dv;
    MapRow(g + lp.bv, d) += dv.colwise().sum();
    Matrix dn1 = dq * CMapMat(p + lp.wq, d, d).transpose();
    dn1.noalias() += dk * CMapMat(p + lp.wk, d, d).transpose();
    dn1.noalias() += dv * CMapMat(p + lp.wv, d, d).transpose();
    dy += layer_norm_backward(dn1, t.xhat1, t.rstd1, p + lp.ln1_g, g + lp.ln1_g, g + lp.ln1_b);
    return dy;
}

double Model::backward(const ForwardTrace& trace, Label target, double scale, std::span<double> grad) const {
    if (grad.size() != params_.size()) throw DataError("gradient buffer size mismatch");
    const double* p = params_.data();
    double* g = grad.data();
    const Eigen::Index d = config_.width;
    const auto cls_target = static_cast<std::size_t>(target);
    const double loss = -std::log(std::max(trace.probs[cls_target], 1e-300));

    RowVector dlogits(2);
    dlogits << trace.probs[0], trace.probs[1];
    dlogits(static_cast<Eigen::Index>(cls_target)) -= 1.0;
    dlogits *= scale;

    MapMat(g + layout_.head_w, d, 2).noalias() += trace.cls_norm.transpose() * dlogits;
    MapRow(g + layout_.head_b, 2) += dlogits;
    const RowVector dnorm = dlogits * CMapMat(p + layout_.head_w, d, 2).transpose();

    Eigen::VectorXd rstd(1);
    rstd(0) = trace.cls_rstd;
    const Matrix dcls = layer_norm_backward(Matrix(dnorm), Matrix(trace.cls_hat), rstd, p + layout_.lnf_g,
                                            g + layout_.lnf_g, g + layout_.lnf_b);

    const auto len = static_cast<Eigen::Index>(trace.ids.size());
    Matrix dz = Matrix::Zero(len, d);
    dz.row(0) = dcls.row(0);
    for (int l = config_.rows - 1; l >= 0; --l) {
        dz = layer_backward(l, trace.layers[static_cast<std::size_t>(l)], dz, grad);
    }
    MapMat dtok(g + layout_.tok_emb, static_cast<Eigen::Index>(config_.vocab.size()), d);
    MapMat dpos(g + layout_.pos_emb, config_.max_len, d);
    for (Eigen::Index t = 0; t < len; ++t) {
        dtok.row(trace.ids[static_cast<std::size_t>(t)]) += dz.row(t);
        dpos.row(t) += dz.row(t);
    }
    return loss;
}

// ---------------------------------------------------------------------------
// Free functions
// ---------------------------------------------------------------------------

std::pair<Label, ActivationRecord> forward(const Model& model, const NLIExample& example) {
    ForwardTrace trace;
    model.run(encode(example, model.config()), trace);
    return {trace.label(), activation_record(trace, model.config().width)};
}

Label forward_patched(const Model& model, const NLIExample& example, Location loc,
                      std::span<const double> vector) {
    ForwardTrace trace;
    model.run(encode(example, model.config()), trace);
    return model.run_patched(trace, loc, vector);
}

}  // namespace monli
