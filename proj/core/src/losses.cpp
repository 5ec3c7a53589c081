#include "agcl/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "agcl/error.hpp"

namespace agcl {

namespace {

void require_same_dim(const Embedding &a, const Embedding &b, const char *what) {
    if (a.dim() != b.dim())
        throw ShapeError(std::string(what) + ": embedding dimensions " + std::to_string(a.dim()) +
                         " and " + std::to_string(b.dim()) + " differ");
}

// Softmax over Z = {k+} u negatives at temperature tau; index 0 is the key.
std::vector<double> key_softmax(const Embedding &q, const Embedding &k_pos,
                                std::span<const Embedding> negatives, double tau) {
    std::vector<double> logits;
    logits.reserve(negatives.size() + 1);
    logits.push_back(q.dot(k_pos) / tau);
    for (const Embedding &n : negatives) {
        require_same_dim(q, n, "contrastive_loss");
        logits.push_back(q.dot(n) / tau);
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0;
    for (double &l : logits) {
        l = std::exp(l - mx);
        z += l;
    }
    for (double &l : logits)
        l /= z;
    return logits;
}

void check_contrastive_inputs(const Embedding &q, const Embedding &k_pos,
                              std::span<const Embedding> negatives, double tau) {
    if (!(tau > 0.0))
        throw ParameterError("contrastive_loss: tau must be positive");
    if (negatives.empty())
        throw ParameterError("contrastive_loss: at least one negative is required");
    require_same_dim(q, k_pos, "contrastive_loss");
}

} // namespace

double Embedding::dot(const Embedding &o) const {
    double s = 0;
    for (std::size_t i = 0; i < values.size(); ++i)
        s += values[i] * o.values[i];
    return s;
}

Embedding Embedding::normalized(std::vector<double> values) {
    double n = 0;
    for (double v : values)
        n += v * v;
    n = std::sqrt(n);
    if (!(n > 1e-12))
        throw DegenerateError("embedding has zero norm");
    for (double &v : values)
        v /= n;
    return Embedding{std::move(values), true};
}

LossValue &LossValue::operator+=(const LossValue &o) {
    value += o.value;
    for (const auto &[key, g] : o.gradients) {
        auto &dst = gradients[key];
        if (dst.empty()) {
            dst = g;
            continue;
        }
        if (dst.size() != g.size())
            throw ShapeError("LossValue: gradient '" + key + "' has mismatched length");
        for (std::size_t i = 0; i < g.size(); ++i)
            dst[i] += g[i];
    }
    return *this;
}

void HyperParams::validate() const {
    if (!(tau > 0.0))
        throw ParameterError("tau must be > 0");
    if (!(theta > 0.0 && theta < 1.0))
        throw ParameterError("theta must lie in (0,1)");
    if (!(ema_alpha >= 0.0 && ema_alpha <= 1.0))
        throw ParameterError("ema_alpha must lie in [0,1]");
    if (!std::isfinite(gamma))
        throw ParameterError("gamma must be finite");
    if (n_positives < 1)
        throw ParameterError("n_positives must be >= 1");
    if (bank_capacity < 1)
        throw ParameterError("bank_capacity must be >= 1");
}

SignMode parse_sign_mode(std::string_view name) {
    if (name == "literal")
        return SignMode::literal;
    if (name == "trace_max")
        return SignMode::trace_max;
    throw ParameterError("unknown sign mode '" + std::string(name) +
                         "' (expected literal|trace_max)");
}

std::string_view to_string(SignMode m) { return m == SignMode::literal ? "literal" : "trace_max"; }

LossValue loss_agg_pl(const AffinityGraph &graph, double gamma, SignMode mode, bool use_nuclear) {
    const std::size_t n = graph.size();
    LossValue out;
    if (n == 0)
        return out;
    const double tr = trace(graph.matrix);
    const double diag_weight = mode == SignMode::literal ? 1.0 : -1.0 / static_cast<double>(n);
    const double nuc_weight = mode == SignMode::literal ? gamma : std::abs(gamma);

    std::vector<double> grad(n * n, 0.0);
    out.value = diag_weight * tr;
    if (use_nuclear && nuc_weight != 0.0) {
        const SvdResult s = svd(graph.matrix);
        out.value += nuc_weight * std::accumulate(s.sigma.begin(), s.sigma.end(), 0.0);
        const DenseMatrix uvt = s.u * s.vt;
        for (std::size_t i = 0; i < n * n; ++i)
            grad[i] = nuc_weight * uvt.data()[i];
    }
    for (std::size_t i = 0; i < n; ++i)
        grad[i * n + i] += diag_weight;
    out.gradients["A"] = std::move(grad);
    return out;
}

LossValue contrastive_loss(const Embedding &q, const Embedding &k_pos,
                           std::span<const Embedding> negatives, double tau) {
    check_contrastive_inputs(q, k_pos, negatives, tau);
    // -log softmax_0 computed as logsumexp(logits) - logit_0.
    const double l0 = q.dot(k_pos) / tau;
    double mx = l0;
    std::vector<double> logits;
    logits.reserve(negatives.size());
    for (const Embedding &n : negatives) {
        require_same_dim(q, n, "contrastive_loss");
        logits.push_back(q.dot(n) / tau);
        mx = std::max(mx, logits.back());
    }
    double z = std::exp(l0 - mx);
    for (double l : logits)
        z += std::exp(l - mx);
    LossValue out;
    out.value = mx + std::log(z) - l0;
    out.gradients["q"] = contrastive_grad_q(q, k_pos, negatives, tau);
    return out;
}

std::vector<double> contrastive_grad_q(const Embedding &q, const Embedding &k_pos,
                                       std::span<const Embedding> negatives, double tau) {
    check_contrastive_inputs(q, k_pos, negatives, tau);
    const std::vector<double> p = key_softmax(q, k_pos, negatives, tau);
    std::vector<double> g(q.dim());
    for (std::size_t d = 0; d < q.dim(); ++d) {
        double neg = 0;
        for (std::size_t i = 0; i < negatives.size(); ++i)
            neg += p[i + 1] * negatives[i].values[d];
        g[d] = -((1.0 - p[0]) * k_pos.values[d] - neg) / tau;
    }
#ifdef AGCL_INJECT_GRAD_FAULT
    // Test-only build: a deliberate error the verify suite must catch.
    g[0] += 1e-3;
#endif
    return g;
}

Embedding mix_hard_negative(const Embedding &n_i, const Embedding &n_j, double a_ii) {
    require_same_dim(n_i, n_j, "mix_hard_negative");
    if (!(a_ii >= 0.0 && a_ii <= 1.0))
        throw ParameterError("mix_hard_negative: weight must lie in [0,1]");
    std::vector<double> h(n_i.dim());
    for (std::size_t d = 0; d < h.size(); ++d)
        h[d] = a_ii * n_i.values[d] + (1.0 - a_ii) * n_j.values[d];
    try {
        return Embedding::normalized(std::move(h));
    } catch (const DegenerateError &) {
        throw DegenerateError("mix_hard_negative: convex combination vanishes");
    }
}

LossValue loss_agg_rw(const Embedding &q, const Embedding &k_pos,
                      std::span<const Embedding> hard_set, double tau,
                      std::span<const Embedding> fallback_negatives) {
    if (!hard_set.empty())
        return contrastive_loss(q, k_pos, hard_set, tau);
    if (!fallback_negatives.empty())
        return contrastive_loss(q, k_pos, fallback_negatives, tau);
    LossValue zero;
    zero.gradients["q"] = std::vector<double>(q.dim(), 0.0);
    return zero;
}

namespace {

void check_labels(const Tensor3<double> &probs, std::span<const std::uint8_t> labels) {
    if (labels.size() != probs.plane())
        throw ShapeError("loss_supervised: label map has " + std::to_string(labels.size()) +
                         " pixels, prediction has " + std::to_string(probs.plane()));
    for (std::size_t m = 0; m < labels.size(); ++m)
        if (labels[m] >= probs.channels)
            throw DomainError("loss_supervised: label " + std::to_string(labels[m]) +
                              " at pixel " + std::to_string(m) + " exceeds class count " +
                              std::to_string(probs.channels));
}

constexpr double kDiceSmooth = 1.0;

} // namespace

SupervisedTerms supervised_terms(const Tensor3<double> &probs,
                                 std::span<const std::uint8_t> labels) {
    check_labels(probs, labels);
    const std::size_t m_count = probs.plane(), classes = probs.channels;
    SupervisedTerms t;
    for (std::size_t m = 0; m < m_count; ++m)
        t.cross_entropy -= std::log(std::max(probs.data[labels[m] * m_count + m], kProbabilityClamp));
    t.cross_entropy /= static_cast<double>(m_count);
    for (std::size_t c = 0; c < classes; ++c) {
        double inter = 0, psum = 0, gsum = 0;
        for (std::size_t m = 0; m < m_count; ++m) {
            const double p = probs.data[c * m_count + m];
            const double g = labels[m] == c ? 1.0 : 0.0;
            inter += p * g;
            psum += p;
            gsum += g;
        }
        t.soft_dice += (2.0 * inter + kDiceSmooth) / (psum + gsum + kDiceSmooth);
    }
    t.soft_dice /= static_cast<double>(classes);
    return t;
}

LossValue loss_supervised(const Tensor3<double> &probs, std::span<const std::uint8_t> labels) {
    const SupervisedTerms t = supervised_terms(probs, labels);
    const std::size_t m_count = probs.plane(), classes = probs.channels;
    LossValue out;
    out.value = 0.5 * t.cross_entropy + 0.5 * (1.0 - t.soft_dice);
    std::vector<double> grad(probs.size(), 0.0);
    for (std::size_t m = 0; m < m_count; ++m) {
        const double p = probs.data[labels[m] * m_count + m];
        if (p > kProbabilityClamp)
            grad[labels[m] * m_count + m] -= 0.5 / (static_cast<double>(m_count) * p);
    }
    for (std::size_t c = 0; c < classes; ++c) {
        double inter = 0, psum = 0, gsum = 0;
        for (std::size_t m = 0; m < m_count; ++m) {
            const double p = probs.data[c * m_count + m];
            const double g = labels[m] == c ? 1.0 : 0.0;
            inter += p * g;
            psum += p;
            gsum += g;
        }
        const double num = 2.0 * inter + kDiceSmooth, den = psum + gsum + kDiceSmooth;
        const double scale = -0.5 / static_cast<double>(classes);
        for (std::size_t m = 0; m < m_count; ++m) {
            const double g = labels[m] == c ? 1.0 : 0.0;
            grad[c * m_count + m] += scale * (2.0 * g * den - num) / (den * den);
        }
    }
    out.gradients["probs"] = std::move(grad);
    return out;
}

LossValue loss_consistency(const Tensor3<double> &student, const Tensor3<double> &teacher) {
    if (!student.same_shape(teacher))
        throw ShapeError("loss_consistency: student and teacher maps differ in shape");
    const std::size_t m_count = student.plane();
    const double inv_m = 1.0 / static_cast<double>(m_count);
    LossValue out;
    std::vector<double> grad(student.size(), 0.0);
    for (std::size_t i = 0; i < student.size(); ++i) {
        const double s = student.data[i], t = teacher.data[i];
        out.value -= t * std::log(std::max(s, kProbabilityClamp));
        if (s > kProbabilityClamp)
            grad[i] = -t * inv_m / s;
    }
    out.value *= inv_m;
    out.gradients["probs"] = std::move(grad);
    return out;
}

LossValue loss_total(const LossValue &sup, const LossValue &reg, const LossValue &agg_pl,
                     const LossValue &agg_rw) {
    LossValue out = sup;
    out += reg;
    out += agg_pl;
    out += agg_rw;
    return out;
}

} // namespace agcl
