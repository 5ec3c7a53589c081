#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "agcl/affinity.hpp"
#include "agcl/tensor.hpp"

namespace agcl {

inline constexpr double kProbabilityClamp = 1e-7;

/// Feature vector in the contrastive space.
struct Embedding {
    std::vector<double> values;
    bool unit_norm = false;

    std::size_t dim() const { return values.size(); }
    double dot(const Embedding &o) const;

    /// Unit-norm copy of `values`; throws DegenerateError for a (near) zero vector.
    static Embedding normalized(std::vector<double> values);

    friend bool operator==(const Embedding &, const Embedding &) = default;
};

/// A scalar loss with optional gradients keyed by the quantity they are taken against.
struct LossValue {
    double value = 0.0;
    std::map<std::string, std::vector<double>> gradients;

    LossValue &operator+=(const LossValue &o);
};

struct HyperParams {
    double tau = 0.2;
    double gamma = -1.0;
    double theta = 0.5;
    double ema_alpha = 0.99;
    std::size_t n_positives = 4;
    std::size_t bank_capacity = 512;
    /// Listed with tau in the reference hyperparameters but bound to no term; kept for provenance.
    double lambda_unused = 4.0;

    void validate() const;
};

enum class SignMode {
    literal,   // sum_i A_ii + gamma * ||A||_*
    trace_max, // -(1/N) tr(A) + |gamma| * ||A||_*
};

SignMode parse_sign_mode(std::string_view name);
std::string_view to_string(SignMode m);

/// Pseudo-label affinity loss. gradients["A"] holds dL/dA (N x N, row-major).
/// `use_nuclear` = false drops the nuclear-norm term (ablation).
LossValue loss_agg_pl(const AffinityGraph &graph, double gamma, SignMode mode,
                      bool use_nuclear = true);

/// Memory-bank InfoNCE loss. gradients["q"] holds dL/dq.
LossValue contrastive_loss(const Embedding &q, const Embedding &k_pos,
                           std::span<const Embedding> negatives, double tau);

/// Closed-form dL/dq: -(1/tau) * ((1 - p_k) k+ - sum_n p_n n).
std::vector<double> contrastive_grad_q(const Embedding &q, const Embedding &k_pos,
                                       std::span<const Embedding> negatives, double tau);

/// Affinity-weighted convex mix of two negatives, renormalised.
Embedding mix_hard_negative(const Embedding &n_i, const Embedding &n_j, double a_ii);

/// Contrastive loss against the mixed hard set; an empty hard set falls back to
/// `fallback_negatives`. Both empty yields a zero loss.
LossValue loss_agg_rw(const Embedding &q, const Embedding &k_pos,
                      std::span<const Embedding> hard_set, double tau,
                      std::span<const Embedding> fallback_negatives = {});

struct SupervisedTerms {
    double cross_entropy = 0.0;
    double soft_dice = 0.0; // mean over classes
};

/// 0.5 * cross-entropy + 0.5 * (1 - soft Dice) on per-pixel probabilities (C x H x W)
/// against labels in [0, C). gradients["probs"] holds dL/dprobs.
LossValue loss_supervised(const Tensor3<double> &probs, std::span<const std::uint8_t> labels);
SupervisedTerms supervised_terms(const Tensor3<double> &probs,
                                 std::span<const std::uint8_t> labels);

/// Cross-entropy of the student against a constant teacher target. gradients["probs"] is
/// taken w.r.t. the student probabilities.
LossValue loss_consistency(const Tensor3<double> &student, const Tensor3<double> &teacher);

/// Unweighted sum, gradients merged additively per key.
LossValue loss_total(const LossValue &sup, const LossValue &reg, const LossValue &agg_pl,
                     const LossValue &agg_rw);

} // namespace agcl
