#include "agcl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include "agcl/binary_io.hpp"
#include "agcl/error.hpp"
#include "agcl/parallel.hpp"
#include "agcl/random.hpp"

namespace agcl {

// ---------------------------------------------------------------------------
// MemoryBank

void MemoryBank::push(const Embedding &e) {
    if (!e.unit_norm)
        throw DomainError("MemoryBank: only unit-norm embeddings may be stored");
    Embedding stored = e;
    for (double &v : stored.values)
        v = static_cast<double>(static_cast<float>(v));
    if (slots_.size() < capacity_) {
        slots_.push_back(std::move(stored));
        cursor_ = slots_.size() % capacity_;
        return;
    }
    slots_[cursor_] = std::move(stored);
    cursor_ = (cursor_ + 1) % capacity_;
}

std::vector<Embedding> MemoryBank::nearest(const Embedding &q, std::size_t k) const {
    std::vector<std::size_t> order(slots_.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        order[i] = i;
    std::vector<double> sim(slots_.size());
    for (std::size_t i = 0; i < slots_.size(); ++i)
        sim[i] = q.dot(slots_[i]);
    k = std::min(k, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) {
                          return sim[a] > sim[b] || (sim[a] == sim[b] && a < b);
                      });
    std::vector<Embedding> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i)
        out.push_back(slots_[order[i]]);
    return out;
}

MemoryBank MemoryBank::restore(std::size_t capacity, std::vector<Embedding> slots,
                               std::size_t cursor) {
    if (capacity == 0 || slots.size() > capacity || cursor >= capacity)
        throw FormatError("memory bank: inconsistent capacity/cursor/fill", 0);
    MemoryBank b(capacity);
    b.slots_ = std::move(slots);
    b.cursor_ = cursor;
    return b;
}

NegativeSelection parse_negative_selection(std::string_view name) {
    if (name == "affinity")
        return NegativeSelection::affinity;
    if (name == "random")
        return NegativeSelection::random;
    throw ParameterError("unknown negative selection '" + std::string(name) +
                         "' (expected affinity|random)");
}

std::string_view to_string(NegativeSelection s) {
    return s == NegativeSelection::affinity ? "affinity" : "random";
}

void TrainConfig::validate() const {
    hyper.validate();
    if (!(lr > 0.0))
        throw ParameterError("trainer.lr must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
        throw ParameterError("Adam betas must lie in [0,1)");
    if (!(adam_eps > 0.0))
        throw ParameterError("Adam epsilon must be > 0");
    if (iterations < 1)
        throw ParameterError("trainer.iterations must be >= 1");
    if (batch_size < 1)
        throw ParameterError("trainer.batch_size must be >= 1");
    if (eval_interval < 1)
        throw ParameterError("trainer.eval_interval must be >= 1");
    if (patch_size < 1)
        throw ParameterError("patch.size must be >= 1");
    if (arch.classes < 2)
        throw ParameterError("model needs at least one foreground class");
    if (mix_neighborhood < 1)
        throw ParameterError("mix.neighborhood must be >= 1");
    if (threads < 1)
        throw ParameterError("threads must be >= 1");
}

TrainState init_state(const TrainConfig &config) {
    TrainState s;
    s.seed = config.seed;
    s.student = init_params<float>(config.arch, derive_seed(config.seed, {0x57d}));
    s.teacher = s.student;
    s.adam_m = s.student.zeros_like();
    s.adam_v = s.student.zeros_like();
    s.banks.assign(config.arch.classes - 1, MemoryBank(config.hyper.bank_capacity));
    return s;
}

// ---------------------------------------------------------------------------
// Step

namespace {

constexpr std::uint64_t kUnlabeledSlotBase = 1u << 20;

template <class T>
std::vector<double> patch_means(const Tensor3<T> &probs, const PatchGrid &grid) {
    std::vector<double> out;
    out.reserve(grid.count() * probs.channels);
    const double inv = 1.0 / double(grid.pixels_per_patch());
    for (const PatchLocation &p : grid.patches)
        for (std::size_t c = 0; c < probs.channels; ++c) {
            double s = 0;
            for (std::size_t y = p.row; y < p.row + grid.patch_size; ++y)
                for (std::size_t x = p.col; x < p.col + grid.patch_size; ++x)
                    s += static_cast<double>(probs.at(c, y, x));
            out.push_back(s * inv);
        }
    return out;
}

// Renormalise rows so that float round-off does not trip PredictionSet validation.
std::vector<double> renormalize_rows(std::vector<double> values, std::size_t dim) {
    for (std::size_t i = 0; i < values.size() / dim; ++i) {
        double s = 0;
        for (std::size_t c = 0; c < dim; ++c)
            s += values[i * dim + c];
        for (std::size_t c = 0; c < dim; ++c)
            values[i * dim + c] = std::clamp(values[i * dim + c] / s, 0.0, 1.0);
    }
    return values;
}

ImageTensor channel_as_image(const Tensor3<double> &t, std::size_t c) {
    ImageTensor out(1, t.height, t.width);
    for (std::size_t i = 0; i < t.plane(); ++i)
        out.data[i] = std::clamp(static_cast<float>(t.data[c * t.plane() + i]), 0.0f, 1.0f);
    return out;
}

template <class T>
std::optional<Embedding> try_project(const ParamSet<T> &params, const Tensor3<T> &features,
                                     const PatchLocation &p, std::size_t size) {
    try {
        const std::vector<T> pooled = pool_patch(features, p.row, p.col, size);
        return project_forward<T>(params, pooled).embedding;
    } catch (const DegenerateError &) {
        return std::nullopt;
    }
}

template <class T>
Tensor3<T> from_double(const std::vector<double> &g, const Tensor3<T> &like) {
    Tensor3<T> out(like.channels, like.height, like.width);
    for (std::size_t i = 0; i < g.size(); ++i)
        out.data[i] = static_cast<T>(g[i]);
    return out;
}

} // namespace

template <class T>
StepPlan build_plan(const ParamSet<T> &student, const ParamSet<T> &teacher,
                    std::span<const UnlabeledView> views,
                    std::span<const ForwardTrace<T>> student_traces,
                    const std::vector<MemoryBank> &banks, const TrainConfig &config,
                    std::uint64_t step_seed) {
    StepPlan plan;
    const Architecture &arch = config.arch;
    const std::size_t classes = arch.classes;
    for (std::size_t k = 0; k + 1 < classes; ++k)
        plan.fallback_by_class.push_back(banks.at(k).entries());
    if (views.empty())
        return plan;
    const std::size_t height = views[0].teacher_input.height, width = views[0].teacher_input.width;
    plan.grid = make_grid(height, width, config.patch_size, config.patch_stride);
    const PatchGrid &grid = plan.grid;
    const std::size_t patches = grid.count();
    if (config.hyper.n_positives >= patches)
        throw ParameterError("sampler.n = " + std::to_string(config.hyper.n_positives) +
                             " must be smaller than the patch count " + std::to_string(patches));

    std::vector<ForwardTrace<T>> teacher_traces(views.size());
    parallel_for(views.size(), config.threads, [&](std::size_t b) {
        teacher_traces[b] = forward(teacher, arch, tensor_cast<T>(views[b].teacher_input));
    });

    std::vector<double> teacher_means, student_means;
    for (std::size_t b = 0; b < views.size(); ++b) {
        plan.teacher_probs.push_back(tensor_cast<double>(teacher_traces[b].probs));
        const auto tm = patch_means(teacher_traces[b].probs, grid);
        teacher_means.insert(teacher_means.end(), tm.begin(), tm.end());
        const auto sm = patch_means(student_traces[b].probs, grid);
        student_means.insert(student_means.end(), sm.begin(), sm.end());
    }
    plan.teacher_patch_means = renormalize_rows(std::move(teacher_means), classes);
    const std::size_t n = views.size() * patches;
    const PredictionSet tset(n, classes, plan.teacher_patch_means);
    const PredictionSet sset(n, classes, renormalize_rows(std::move(student_means), classes));
    plan.sigma = config.sigma > 0.0 ? config.sigma : median_bandwidth(tset, sset);
    const AffinityGraph graph = build_graph(tset, sset, plan.sigma, config.kernel);
    const std::vector<std::size_t> mask = hard_negative_mask(graph, config.hyper.theta);
    const std::set<std::size_t> hard(mask.begin(), mask.end());

    Rng rng(derive_seed(step_seed, {0x9a1}));
    for (std::size_t b = 0; b < views.size(); ++b) {
        const ImageTensor normalized = normalize_minmax(views[b].teacher_input);
        std::vector<std::optional<Embedding>> keys(patches);
        for (std::size_t p = 0; p < patches; ++p)
            keys[p] = try_project(teacher, teacher_traces[b].features(), grid.patches[p],
                                  grid.patch_size);

        for (std::size_t k = 1; k < classes; ++k) {
            const ImageTensor conf = channel_as_image(plan.teacher_probs[b], k);
            const ImageTensor attended = attend(normalized, conf, static_cast<int>(k));
            const std::size_t anchor = anchor_by_confidence(conf, grid);
            const std::vector<double> scores =
                patch_scores(config.sampler, attended, conf, grid, anchor,
                             derive_seed(step_seed, {0x5a, b, k}));
            const SampledPatches sp = select_top_n(scores, anchor, config.hyper.n_positives);
            plan.positives.push_back(sp.positives);

            std::vector<std::size_t> candidates;
            for (std::size_t neg : sp.negatives)
                if (hard.count(b * patches + neg))
                    candidates.push_back(neg);
            if (config.selection == NegativeSelection::random) {
                std::vector<std::size_t> pool = sp.negatives;
                for (std::size_t i = pool.size(); i > 1; --i)
                    std::swap(pool[i - 1], pool[rng.index(i)]);
                pool.resize(candidates.size());
                std::sort(pool.begin(), pool.end());
                candidates = std::move(pool);
            }

            const MemoryBank &bank = banks.at(k - 1);
            for (std::size_t pos : sp.positives) {
                if (!keys[pos])
                    continue;
                Query q;
                q.image = b;
                q.patch = pos;
                q.cls = k;
                q.key = *keys[pos];
                if (!bank.empty()) {
                    // Neighbourhood is looked up around the student query; it is constant here.
                    const auto probe = try_project(student, student_traces[b].features(),
                                                   grid.patches[pos], grid.patch_size);
                    const std::vector<Embedding> near =
                        bank.nearest(probe ? *probe : q.key, config.mix_neighborhood);
                    for (std::size_t i : candidates) {
                        if (!keys[i])
                            continue;
                        const double weight = graph.diagonal[b * patches + i];
                        for (int attempt = 0; attempt < 4; ++attempt) {
                            const Embedding &other = near[rng.index(near.size())];
                            try {
                                q.hard_set.push_back(mix_hard_negative(*keys[i], other, weight));
                                break;
                            } catch (const DegenerateError &) {
                            }
                        }
                    }
                    if (config.rw_include_raw)
                        q.hard_set.insert(q.hard_set.end(), near.begin(), near.end());
                }
                plan.hard_negatives += q.hard_set.size();
                plan.queries.push_back(std::move(q));
            }
            for (std::size_t neg : sp.negatives)
                if (keys[neg])
                    plan.bank_pushes.emplace_back(k, *keys[neg]);
        }
    }
    return plan;
}

template <class T>
ObjectiveResult<T> evaluate_objective(const ParamSet<T> &student,
                                      std::span<const LabeledView> labeled,
                                      std::span<const ForwardTrace<T>> labeled_traces,
                                      std::span<const ForwardTrace<T>> unlabeled_traces,
                                      const StepPlan &plan, const TrainConfig &config,
                                      bool with_gradient) {
    ObjectiveResult<T> result;
    StepLosses &losses = result.losses;
    const std::size_t classes = config.arch.classes;

    std::vector<Tensor3<T>> g_lab(labeled.size());
    if (!labeled.empty()) {
        const double inv = 1.0 / double(labeled.size());
        for (std::size_t i = 0; i < labeled.size(); ++i) {
            const LossValue l = loss_supervised(tensor_cast<double>(labeled_traces[i].probs),
                                                labeled[i].mask.labels);
            losses.sup += l.value * inv;
            if (with_gradient) {
                std::vector<double> g = l.gradients.at("probs");
                for (double &v : g)
                    v *= inv;
                g_lab[i] = from_double(g, labeled_traces[i].probs);
            }
        }
    }

    const std::size_t u = unlabeled_traces.size();
    std::vector<std::vector<double>> gp_u(u);
    std::vector<Tensor3<T>> gf_u(u);
    for (std::size_t b = 0; b < u; ++b) {
        gp_u[b].assign(unlabeled_traces[b].probs.size(), 0.0);
        const auto &f = unlabeled_traces[b].features();
        gf_u[b] = Tensor3<T>(f.channels, f.height, f.width);
    }

    if (u > 0 && config.enable_reg) {
        const double inv = 1.0 / double(u);
        for (std::size_t b = 0; b < u; ++b) {
            const LossValue l =
                loss_consistency(tensor_cast<double>(unlabeled_traces[b].probs), plan.teacher_probs[b]);
            losses.reg += l.value * inv;
            if (with_gradient) {
                const auto &g = l.gradients.at("probs");
                for (std::size_t i = 0; i < g.size(); ++i)
                    gp_u[b][i] += g[i] * inv;
            }
        }
    }

    if (u > 0) { // the graph is also needed for the mean-diagonal log
        const PatchGrid &grid = plan.grid;
        const std::size_t patches = grid.count();
        std::vector<double> means;
        for (std::size_t b = 0; b < u; ++b) {
            const auto m = patch_means(unlabeled_traces[b].probs, grid);
            means.insert(means.end(), m.begin(), m.end());
        }
        const std::size_t n = u * patches;
        const PredictionSet tset(n, classes, plan.teacher_patch_means);
        const PredictionSet sset(n, classes, std::move(means));
        const AffinityGraph graph = build_graph(tset, sset, plan.sigma, config.kernel);
        double diag = 0;
        for (double d : graph.diagonal)
            diag += d;
        losses.mean_diag = diag / double(n);

        if (config.enable_pl) {
            const LossValue l =
                loss_agg_pl(graph, config.hyper.gamma, config.sign_mode, config.use_nuclear);
            losses.pl = l.value;
            if (with_gradient) {
                const DenseMatrix ga(n, n, l.gradients.at("A"));
                const std::vector<double> gs = student_gradient(graph, tset, sset, ga);
                const double inv = 1.0 / double(grid.pixels_per_patch());
                for (std::size_t b = 0; b < u; ++b) {
                    const auto &probs = unlabeled_traces[b].probs;
                    for (std::size_t p = 0; p < patches; ++p) {
                        const PatchLocation &loc = grid.patches[p];
                        for (std::size_t c = 0; c < classes; ++c) {
                            const double g = gs[(b * patches + p) * classes + c] * inv;
                            for (std::size_t y = loc.row; y < loc.row + grid.patch_size; ++y)
                                for (std::size_t x = loc.col; x < loc.col + grid.patch_size; ++x)
                                    gp_u[b][(c * probs.height + y) * probs.width + x] += g;
                        }
                    }
                }
            }
        }
    }

    if (u > 0 && config.enable_rw && !plan.queries.empty()) {
        const double inv = 1.0 / double(plan.queries.size());
        const std::size_t size = plan.grid.patch_size;
        for (const Query &q : plan.queries) {
            const PatchLocation &loc = plan.grid.patches[q.patch];
            const Tensor3<T> &features = unlabeled_traces[q.image].features();
            const std::vector<T> pooled = pool_patch(features, loc.row, loc.col, size);
            std::optional<ProjectionTrace<T>> pt;
            try {
                pt = project_forward<T>(student, pooled);
            } catch (const DegenerateError &) {
                continue;
            }
            const LossValue l = loss_agg_rw(pt->embedding, q.key, q.hard_set, config.hyper.tau,
                                            plan.fallback_by_class.at(q.cls - 1));
            losses.rw += l.value * inv;
            if (with_gradient && !l.gradients.empty()) {
                std::vector<double> g = l.gradients.at("q");
                for (double &v : g)
                    v *= inv;
                if (result.grads.group_count() == 0)
                    result.grads = student.zeros_like();
                const std::vector<T> gpool = project_backward<T>(student, *pt, g, result.grads);
                unpool_patch<T>(gpool, loc.row, loc.col, size, gf_u[q.image]);
            }
        }
    }

    losses.total = losses.sup + losses.reg + losses.pl + losses.rw;
    losses.hard_negatives = plan.hard_negatives;
    losses.queries = config.enable_rw ? plan.queries.size() : 0;
    losses.positives = plan.positives;
    if (!std::isfinite(losses.total))
        throw NumericError("non-finite loss (sup " + std::to_string(losses.sup) + ", reg " +
                           std::to_string(losses.reg) + ", pl " + std::to_string(losses.pl) +
                           ", rw " + std::to_string(losses.rw) + ")");
    if (!with_gradient)
        return result;

    if (result.grads.group_count() == 0)
        result.grads = student.zeros_like();
    // Per-image backward passes, summed in a fixed order so thread count cannot change bits.
    const std::size_t total = labeled.size() + u;
    std::vector<ParamSet<T>> partial(total);
    parallel_for(total, config.threads, [&](std::size_t i) {
        if (i < labeled.size()) {
            partial[i] = backward(labeled_traces[i], g_lab[i]);
        } else {
            const std::size_t b = i - labeled.size();
            partial[i] = backward(unlabeled_traces[b], from_double(gp_u[b], unlabeled_traces[b].probs),
                                  gf_u[b]);
        }
    });
    for (const ParamSet<T> &p : partial)
        result.grads.axpy(T(1), p);
    return result;
}

std::uint64_t augment_seed(std::uint64_t seed, std::uint64_t step, std::uint64_t slot) {
    return derive_seed(seed, {0xa06, step, slot});
}

std::vector<std::size_t> draw_batch(std::uint64_t seed, std::uint64_t step, bool labeled,
                                    std::size_t pool_size, std::size_t count) {
    std::vector<std::size_t> out;
    if (pool_size == 0 || count == 0)
        return out;
    Rng rng(derive_seed(seed, {0xba7c, step, labeled ? 1u : 0u}));
    if (count > pool_size) {
        for (std::size_t i = 0; i < count; ++i)
            out.push_back(rng.index(pool_size));
        return out;
    }
    std::vector<std::size_t> pool(pool_size);
    for (std::size_t i = 0; i < pool_size; ++i)
        pool[i] = i;
    for (std::size_t i = 0; i < count; ++i) {
        std::swap(pool[i], pool[i + rng.index(pool_size - i)]);
        out.push_back(pool[i]);
    }
    return out;
}

Sample labeled_view(const Sample &sample, std::uint64_t seed, std::uint64_t step, std::size_t slot) {
    Rng rng(augment_seed(seed, step, slot));
    return augment_weak(sample, rng);
}

void adam_update(ParamSet<float> &params, const ParamSet<float> &grads, ParamSet<float> &m,
                 ParamSet<float> &v, std::uint64_t t, const TrainConfig &config) {
    if (!params.congruent(grads) || !params.congruent(m) || !params.congruent(v))
        throw ShapeError("adam_update: parameter, gradient and moment layouts differ");
    const double c1 = 1.0 - std::pow(config.beta1, double(t));
    const double c2 = 1.0 - std::pow(config.beta2, double(t));
    const float b1 = float(config.beta1), b2 = float(config.beta2);
    for (std::size_t gi = 0; gi < params.group_count(); ++gi) {
        auto p = params.mutable_values(gi);
        auto mv = m.mutable_values(gi);
        auto vv = v.mutable_values(gi);
        const auto g = grads.values(gi);
        for (std::size_t i = 0; i < p.size(); ++i) {
            mv[i] = b1 * mv[i] + (1.0f - b1) * g[i];
            vv[i] = b2 * vv[i] + (1.0f - b2) * g[i] * g[i];
            const double mhat = double(mv[i]) / c1, vhat = double(vv[i]) / c2;
            p[i] = float(double(p[i]) - config.lr * mhat / (std::sqrt(vhat) + config.adam_eps));
        }
    }
}

StepLosses train_step(TrainState &state, std::span<const Sample *const> batch,
                      const TrainConfig &config) {
    const std::uint64_t step = state.step;
    std::string ids;
    for (const Sample *s : batch)
        ids += (ids.empty() ? "" : ",") + std::to_string(s->id);
    try {
        std::vector<LabeledView> labeled;
        std::vector<UnlabeledView> unlabeled;
        std::size_t lslot = 0, uslot = 0;
        for (const Sample *s : batch) {
            if (s->labeled) {
                if (s->mask.empty())
                    throw UsageError("labeled sample without a mask");
                Sample v = labeled_view(*s, state.seed, step, lslot++);
                labeled.push_back({std::move(v.image), std::move(v.mask)});
            } else if (config.any_unlabeled_term()) {
                Rng rng(augment_seed(state.seed, step, kUnlabeledSlotBase + uslot++));
                const WeakParams weak = draw_weak(rng);
                const StrongParams strong =
                    draw_strong(rng, weak, s->image.height, s->image.width);
                Sample bare{s->id, s->image, {}, false};
                unlabeled.push_back({apply_strong(bare, strong).image, apply_weak(bare, weak).image});
            }
        }

        const ParamSet<float> &student = state.student;
        std::vector<ForwardTrace<float>> ltr(labeled.size()), utr(unlabeled.size());
        parallel_for(labeled.size() + unlabeled.size(), config.threads, [&](std::size_t i) {
            if (i < labeled.size())
                ltr[i] = forward(student, config.arch, labeled[i].input);
            else
                utr[i - labeled.size()] =
                    forward(student, config.arch, unlabeled[i - labeled.size()].student_input);
        });

        const StepPlan plan =
            build_plan<float>(student, state.teacher, unlabeled, utr, state.banks, config,
                              derive_seed(state.seed, {0x57e9, step}));
        ObjectiveResult<float> obj =
            evaluate_objective<float>(student, labeled, ltr, utr, plan, config, true);
        if (!obj.grads.all_finite())
            throw NumericError("non-finite gradient");

        ParamSet<float> next = state.student;
        ParamSet<float> m = state.adam_m, v = state.adam_v;
        adam_update(next, obj.grads, m, v, step + 1, config);
        if (!next.all_finite())
            throw NumericError("non-finite parameters after the update");
        state.teacher = ema_update(state.teacher, next, config.hyper.ema_alpha);
        state.student = std::move(next);
        state.adam_m = std::move(m);
        state.adam_v = std::move(v);
        for (const auto &[cls, key] : plan.bank_pushes)
            state.banks.at(cls - 1).push(key);
        state.step = step + 1;
        return obj.losses;
    } catch (const Error &e) {
        throw std::runtime_error("step " + std::to_string(step) + " (samples " + ids +
                                 "): " + e.what());
    }
}

#define AGCL_INSTANTIATE(T)                                                                     \
    template StepPlan build_plan<T>(const ParamSet<T> &, const ParamSet<T> &,                   \
                                    std::span<const UnlabeledView>,                             \
                                    std::span<const ForwardTrace<T>>,                           \
                                    const std::vector<MemoryBank> &, const TrainConfig &,       \
                                    std::uint64_t);                                             \
    template ObjectiveResult<T> evaluate_objective<T>(                                          \
        const ParamSet<T> &, std::span<const LabeledView>, std::span<const ForwardTrace<T>>,    \
        std::span<const ForwardTrace<T>>, const StepPlan &, const TrainConfig &, bool);

AGCL_INSTANTIATE(float)
AGCL_INSTANTIATE(double)

#undef AGCL_INSTANTIATE

// ---------------------------------------------------------------------------
// Training loop

DatasetSplit split_dataset(const std::vector<Sample> &samples, std::size_t val_count) {
    DatasetSplit split;
    std::vector<const Sample *> unlabeled;
    for (const Sample &s : samples)
        (s.labeled ? split.labeled : unlabeled).push_back(&s);
    if (split.labeled.empty())
        throw ParameterError("dataset has no labeled samples");
    if (val_count >= unlabeled.size() && val_count > 0)
        throw ParameterError("trainer.val_count = " + std::to_string(val_count) +
                             " leaves no unlabeled training samples (" +
                             std::to_string(unlabeled.size()) + " unlabeled)");
    const std::size_t cut = unlabeled.size() - val_count;
    split.unlabeled.assign(unlabeled.begin(), unlabeled.begin() + std::ptrdiff_t(cut));
    split.validation.assign(unlabeled.begin() + std::ptrdiff_t(cut), unlabeled.end());
    for (const Sample *s : split.validation)
        if (s->mask.empty())
            throw ParameterError("validation sample " + std::to_string(s->id) + " has no mask");
    return split;
}

LabelMap predict(const ParamSet<float> &params, const Architecture &arch, const ImageTensor &image) {
    const ForwardTrace<float> t = forward(params, arch, image);
    LabelMap out(image.height, image.width);
    for (std::size_t y = 0; y < image.height; ++y)
        for (std::size_t x = 0; x < image.width; ++x) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < t.probs.channels; ++c)
                if (t.probs.at(c, y, x) > t.probs.at(best, y, x))
                    best = c;
            out.at(y, x) = static_cast<std::uint8_t>(best);
        }
    return out;
}

MetricReport evaluate_model(const ParamSet<float> &params, const Architecture &arch,
                            std::span<const Sample *const> samples, std::size_t classes) {
    std::vector<MetricReport> reports;
    for (const Sample *s : samples)
        reports.push_back(evaluate(predict(params, arch, s->image), s->mask, classes));
    return average(reports);
}

std::string metrics_csv_header() {
    return "step,loss_sup,loss_reg,loss_pl,loss_rw,loss_total,val_dsc,val_jaccard,val_hd95,val_asd";
}

std::string metrics_csv_row(const LogRow &r) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%llu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g",
                  static_cast<unsigned long long>(r.step), r.loss_sup, r.loss_reg, r.loss_pl,
                  r.loss_rw, r.loss_total, r.val.dsc, r.val.jaccard, r.val.hd95, r.val.asd);
    return buf;
}

namespace {

void write_metrics(const std::filesystem::path &path, const std::vector<std::string> &rows) {
    std::string text = metrics_csv_header() + "\n";
    for (const std::string &r : rows)
        text += r + "\n";
    write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

// Keeps rows of an earlier run up to (and including) `step` so a resumed run extends the log.
std::vector<std::string> previous_rows(const std::filesystem::path &path, std::uint64_t step) {
    std::vector<std::string> rows;
    std::ifstream in(path);
    std::string line;
    if (!std::getline(in, line))
        return rows;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        if (std::stoull(line.substr(0, line.find(','))) <= step)
            rows.push_back(line);
    }
    return rows;
}

} // namespace

TrainResult train(const TrainConfig &config, const std::vector<Sample> &samples,
                  const TrainOutputs &outputs, TrainState *resume) {
    config.validate();
    const DatasetSplit split = split_dataset(samples, config.val_count);
    const std::size_t fg = config.arch.classes - 1;

    TrainResult result;
    result.state = resume ? *resume : init_state(config);
    TrainState &state = result.state;
    if (infer_architecture(state.student) != config.arch)
        throw ParameterError("checkpoint architecture does not match the configuration");
    if (state.banks.size() != fg)
        throw ParameterError("checkpoint bank count does not match the class count");
    if (state.step > config.iterations)
        throw ParameterError("checkpoint step " + std::to_string(state.step) +
                             " exceeds trainer.iterations");

    const bool write = !outputs.dir.empty();
    const auto csv = outputs.dir / "metrics.csv";
    std::vector<std::string> rows;
    if (write && resume)
        rows = previous_rows(csv, state.step);

    const std::size_t n_lab = (config.batch_size + 1) / 2;
    const std::size_t n_unl =
        config.any_unlabeled_term() && !split.unlabeled.empty() ? config.batch_size - n_lab : 0;

    TrainState last_good = state;
    try {
        while (state.step < config.iterations) {
            const std::uint64_t step = state.step;
            std::vector<const Sample *> batch;
            for (std::size_t i : draw_batch(state.seed, step, true, split.labeled.size(), n_lab))
                batch.push_back(split.labeled[i]);
            for (std::size_t i : draw_batch(state.seed, step, false, split.unlabeled.size(), n_unl))
                batch.push_back(split.unlabeled[i]);
            const StepLosses l = train_step(state, batch, config);
            result.mean_diag.push_back(l.mean_diag);
            last_good = state;
            if (outputs.on_step)
                outputs.on_step(step, l);

            const std::uint64_t done = state.step;
            if (done % config.eval_interval == 0 || done == config.iterations) {
                LogRow row{done, l.sup, l.reg, l.pl, l.rw, l.total, {}};
                row.val = split.validation.empty()
                              ? MetricReport{}
                              : evaluate_model(state.student, config.arch, split.validation, fg);
                result.history.push_back(row);
                rows.push_back(metrics_csv_row(row));
                if (write)
                    write_metrics(csv, rows);
                if (outputs.on_eval)
                    outputs.on_eval(row);
            }
            if (write && config.checkpoint_interval > 0 && done % config.checkpoint_interval == 0 &&
                done != config.iterations)
                save_checkpoint(state, outputs.dir / ("checkpoint_" + std::to_string(done) + ".agcl"));
        }
    } catch (...) {
        if (write)
            save_checkpoint(last_good, outputs.dir / "checkpoint_abort.agcl");
        throw;
    }
    if (write)
        save_checkpoint(state, outputs.dir / "checkpoint.agcl");
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

// 64-bit values travel as four 16-bit words, each exactly representable in float32.
std::vector<float> split_u64(std::uint64_t v) {
    std::vector<float> out;
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<float>((v >> (16 * i)) & 0xffff));
    return out;
}

std::uint64_t join_u64(const NamedArray &a) {
    if (a.values.size() != 4)
        throw FormatError("checkpoint: '" + a.name + "' must hold four words", 0);
    std::uint64_t v = 0;
    for (int i = 0; i < 4; ++i) {
        const float w = a.values[i];
        if (!(w >= 0.0f && w <= 65535.0f) || w != std::floor(w))
            throw FormatError("checkpoint: '" + a.name + "' holds a non-integer word", 0);
        v |= static_cast<std::uint64_t>(w) << (16 * i);
    }
    return v;
}

void append_params(std::vector<NamedArray> &out, const std::string &prefix,
                   const ParamSet<float> &p) {
    for (const auto &g : p.groups())
        out.push_back({prefix + g.name, g.dims, g.values});
}

} // namespace

std::vector<std::uint8_t> encode_state(const TrainState &state) {
    std::vector<NamedArray> arrays;
    append_params(arrays, "student/", state.student);
    append_params(arrays, "teacher/", state.teacher);
    append_params(arrays, "adam_m/", state.adam_m);
    append_params(arrays, "adam_v/", state.adam_v);
    for (std::size_t k = 0; k < state.banks.size(); ++k) {
        const MemoryBank &bank = state.banks[k];
        const std::size_t dim = bank.empty() ? 0 : bank.entries()[0].dim();
        std::vector<float> slots;
        for (const Embedding &e : bank.entries())
            for (double v : e.values)
                slots.push_back(static_cast<float>(v));
        const std::string base = "bank/" + std::to_string(k) + "/";
        arrays.push_back({base + "slots", {bank.size(), dim}, std::move(slots)});
        std::vector<float> meta = split_u64(bank.capacity());
        const auto cursor = split_u64(bank.cursor());
        meta.insert(meta.end(), cursor.begin(), cursor.end());
        arrays.push_back({base + "meta", {8}, std::move(meta)});
    }
    arrays.push_back({"state/step", {4}, split_u64(state.step)});
    arrays.push_back({"state/seed", {4}, split_u64(state.seed)});
    return encode_checkpoint(arrays);
}

TrainState decode_state(std::span<const std::uint8_t> bytes) {
    const std::vector<NamedArray> arrays = decode_checkpoint(bytes);
    TrainState s;
    std::map<std::size_t, std::pair<const NamedArray *, const NamedArray *>> banks;
    bool have_step = false, have_seed = false;
    for (const NamedArray &a : arrays) {
        const auto slash = a.name.find('/');
        const std::string head = a.name.substr(0, slash), tail = a.name.substr(slash + 1);
        if (slash == std::string::npos)
            throw FormatError("checkpoint: unexpected group '" + a.name + "'", 0);
        if (head == "student")
            s.student.add(tail, a.dims, a.values);
        else if (head == "teacher")
            s.teacher.add(tail, a.dims, a.values);
        else if (head == "adam_m")
            s.adam_m.add(tail, a.dims, a.values);
        else if (head == "adam_v")
            s.adam_v.add(tail, a.dims, a.values);
        else if (head == "bank") {
            const auto s2 = tail.find('/');
            const std::size_t k = std::stoul(tail.substr(0, s2));
            const std::string part = tail.substr(s2 + 1);
            (part == "slots" ? banks[k].first : banks[k].second) = &a;
        } else if (a.name == "state/step") {
            s.step = join_u64(a);
            have_step = true;
        } else if (a.name == "state/seed") {
            s.seed = join_u64(a);
            have_seed = true;
        } else {
            throw FormatError("checkpoint: unexpected group '" + a.name + "'", 0);
        }
    }
    if (!have_step || !have_seed || s.student.group_count() == 0)
        throw FormatError("checkpoint: not a training state (missing groups)", 0);
    if (!s.student.congruent(s.teacher) || !s.student.congruent(s.adam_m) ||
        !s.student.congruent(s.adam_v))
        throw FormatError("checkpoint: student/teacher/moment layouts differ", 0);
    for (std::size_t k = 0; k < banks.size(); ++k) {
        const auto it = banks.find(k);
        if (it == banks.end() || !it->second.first || !it->second.second)
            throw FormatError("checkpoint: incomplete memory bank " + std::to_string(k), 0);
        const NamedArray &slots = *it->second.first, &meta = *it->second.second;
        if (meta.values.size() != 8 || slots.dims.size() != 2)
            throw FormatError("checkpoint: malformed memory bank " + std::to_string(k), 0);
        const NamedArray cap{"capacity", {4}, {meta.values.begin(), meta.values.begin() + 4}};
        const NamedArray cur{"cursor", {4}, {meta.values.begin() + 4, meta.values.end()}};
        std::vector<Embedding> entries;
        const std::size_t n = slots.dims[0], dim = slots.dims[1];
        for (std::size_t i = 0; i < n; ++i) {
            Embedding e;
            e.unit_norm = true;
            e.values.assign(slots.values.begin() + std::ptrdiff_t(i * dim),
                            slots.values.begin() + std::ptrdiff_t((i + 1) * dim));
            entries.push_back(std::move(e));
        }
        s.banks.push_back(MemoryBank::restore(join_u64(cap), std::move(entries), join_u64(cur)));
    }
    return s;
}

void save_checkpoint(const TrainState &state, const std::filesystem::path &path) {
    write_file(path, encode_state(state));
}

TrainState load_checkpoint(const std::filesystem::path &path) {
    return decode_state(read_file(path));
}

} // namespace agcl
