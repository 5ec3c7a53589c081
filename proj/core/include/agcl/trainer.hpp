#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "agcl/affinity.hpp"
#include "agcl/data.hpp"
#include "agcl/losses.hpp"
#include "agcl/metrics.hpp"
#include "agcl/model.hpp"
#include "agcl/patch_sampling.hpp"

namespace agcl {

/// Fixed-capacity FIFO ring of unit-norm embeddings. Stored values are rounded to
/// float32 so that checkpoints restore them exactly.
class MemoryBank {
public:
    explicit MemoryBank(std::size_t capacity = 512) : capacity_(capacity) {}

    void push(const Embedding &e);

    std::size_t capacity() const { return capacity_; }
    std::size_t size() const { return slots_.size(); }
    std::size_t cursor() const { return cursor_; }
    bool empty() const { return slots_.empty(); }

    /// Ring slots in storage order (not insertion order once wrapped).
    const std::vector<Embedding> &entries() const { return slots_; }

    /// The `k` entries with the largest dot product with `q` (ties by slot index).
    std::vector<Embedding> nearest(const Embedding &q, std::size_t k) const;

    /// Restores a ring from checkpointed slots and cursor.
    static MemoryBank restore(std::size_t capacity, std::vector<Embedding> slots, std::size_t cursor);

    friend bool operator==(const MemoryBank &, const MemoryBank &) = default;

private:
    std::size_t capacity_;
    std::size_t cursor_ = 0;
    std::vector<Embedding> slots_;
};

enum class NegativeSelection {
    affinity, // low diagonal affinity (below the theta-quantile)
    random,   // same number of negatives, uniformly at random
};

NegativeSelection parse_negative_selection(std::string_view name);
std::string_view to_string(NegativeSelection s);

struct TrainConfig {
    HyperParams hyper;
    Architecture arch;

    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t batch_size = 8; // half labeled (rounded up), half unlabeled
    std::size_t iterations = 500;
    std::uint64_t seed = 0;
    std::size_t eval_interval = 100;
    std::size_t val_count = 40; // held out from the tail of the unlabeled split
    std::size_t checkpoint_interval = 0; // 0: final checkpoint only

    std::size_t patch_size = 8;
    std::size_t patch_stride = 0;
    Sampler sampler = Sampler::entropy;

    KernelDistance kernel = KernelDistance::squared;
    double sigma = 0.0; // <= 0 selects the median heuristic per batch
    SignMode sign_mode = SignMode::trace_max;
    bool use_nuclear = true;

    NegativeSelection selection = NegativeSelection::affinity;
    std::size_t mix_neighborhood = 16;
    bool rw_include_raw = false;

    bool enable_reg = true;
    bool enable_pl = true;
    bool enable_rw = true;

    std::size_t threads = 1;

    bool any_unlabeled_term() const { return enable_reg || enable_pl || enable_rw; }
    void validate() const;
};

struct TrainState {
    ParamSet<float> student;
    ParamSet<float> teacher;
    ParamSet<float> adam_m;
    ParamSet<float> adam_v;
    std::vector<MemoryBank> banks; // one per foreground class
    std::uint64_t step = 0;
    std::uint64_t seed = 0;

    friend bool operator==(const TrainState &a, const TrainState &b) {
        return a.student == b.student && a.teacher == b.teacher && a.adam_m == b.adam_m &&
               a.adam_v == b.adam_v && a.banks == b.banks && a.step == b.step && a.seed == b.seed;
    }
};

TrainState init_state(const TrainConfig &config);

struct StepLosses {
    double sup = 0.0;
    double reg = 0.0;
    double pl = 0.0;
    double rw = 0.0;
    double total = 0.0;
    double mean_diag = 0.0; // mean diagonal affinity of this step's graph
    std::size_t hard_negatives = 0;
    std::size_t queries = 0;
    /// Positive patch indices per (unlabeled image, class), in batch order.
    std::vector<std::vector<std::size_t>> positives;
};

// ---------------------------------------------------------------------------
// Step internals, exposed so that the objective can be differentiated numerically.

/// One unlabeled image seen by both networks.
struct UnlabeledView {
    ImageTensor student_input; // strong view
    ImageTensor teacher_input; // weak view (same geometry)
};

struct Query {
    std::size_t image = 0; // index into the unlabeled views
    std::size_t patch = 0; // index into the patch grid
    std::size_t cls = 1;
    Embedding key;
    std::vector<Embedding> hard_set;
};

/// Everything the objective treats as constant within a step.
struct StepPlan {
    PatchGrid grid;
    double sigma = 1.0;
    std::vector<Tensor3<double>> teacher_probs;
    std::vector<double> teacher_patch_means; // (image, patch) x classes, row-major
    std::vector<Query> queries;
    std::vector<std::vector<std::size_t>> positives;
    std::vector<std::pair<std::size_t, Embedding>> bank_pushes; // (class, key)
    std::vector<std::vector<Embedding>> fallback_by_class; // bank snapshot, foreground classes
    std::size_t hard_negatives = 0;
};

template <class T>
struct ObjectiveResult {
    StepLosses losses;
    ParamSet<T> grads;
};

struct LabeledView {
    ImageTensor input;
    LabelMap mask;
};

/// Teacher forwards, sampling, hard-negative mixing and bank lookups for one step.
template <class T>
StepPlan build_plan(const ParamSet<T> &student, const ParamSet<T> &teacher,
                    std::span<const UnlabeledView> views,
                    std::span<const ForwardTrace<T>> student_traces,
                    const std::vector<MemoryBank> &banks, const TrainConfig &config,
                    std::uint64_t step_seed);

/// L_all and (optionally) its gradient w.r.t. the student parameters given the forward traces.
template <class T>
ObjectiveResult<T> evaluate_objective(const ParamSet<T> &student,
                                      std::span<const LabeledView> labeled,
                                      std::span<const ForwardTrace<T>> labeled_traces,
                                      std::span<const ForwardTrace<T>> unlabeled_traces,
                                      const StepPlan &plan, const TrainConfig &config,
                                      bool with_gradient);

/// Seeds used for augmentation and batch draws, exposed for replay oracles.
std::uint64_t augment_seed(std::uint64_t seed, std::uint64_t step, std::uint64_t slot);
std::vector<std::size_t> draw_batch(std::uint64_t seed, std::uint64_t step, bool labeled,
                                    std::size_t pool_size, std::size_t count);

/// Weak view of a labeled sample for step/slot (what the supervised branch trains on).
Sample labeled_view(const Sample &sample, std::uint64_t seed, std::uint64_t step, std::size_t slot);

/// One optimisation step. Samples flagged unlabeled feed the unlabeled terms only.
StepLosses train_step(TrainState &state, std::span<const Sample *const> batch,
                      const TrainConfig &config);

/// Adam update of `params` in place; `t` is the 1-based step number.
void adam_update(ParamSet<float> &params, const ParamSet<float> &grads, ParamSet<float> &m,
                 ParamSet<float> &v, std::uint64_t t, const TrainConfig &config);

// ---------------------------------------------------------------------------
// Training loop

struct DatasetSplit {
    std::vector<const Sample *> labeled;
    std::vector<const Sample *> unlabeled;
    std::vector<const Sample *> validation;
};

/// Validation = the last `val_count` unlabeled samples (by position); masks required.
DatasetSplit split_dataset(const std::vector<Sample> &samples, std::size_t val_count);

struct LogRow {
    std::uint64_t step = 0;
    double loss_sup = 0, loss_reg = 0, loss_pl = 0, loss_rw = 0, loss_total = 0;
    MetricReport val;
};

struct TrainResult {
    TrainState state;
    std::vector<LogRow> history;
    std::vector<double> mean_diag; // per step
};

struct TrainOutputs {
    std::filesystem::path dir; // empty: nothing written
    std::function<void(const LogRow &)> on_eval;
    std::function<void(std::uint64_t step, const StepLosses &)> on_step; // after each update
};

/// Student predictions (argmax) on the given samples, scored against their masks.
MetricReport evaluate_model(const ParamSet<float> &params, const Architecture &arch,
                            std::span<const Sample *const> samples, std::size_t classes);

LabelMap predict(const ParamSet<float> &params, const Architecture &arch, const ImageTensor &image);

/// Runs `iterations - state.step` steps on `samples`, evaluating every eval_interval steps
/// and at the end. Writes metrics.csv and checkpoints under outputs.dir when set; on an
/// error a checkpoint of the last good state is written before rethrowing.
TrainResult train(const TrainConfig &config, const std::vector<Sample> &samples,
                  const TrainOutputs &outputs = {}, TrainState *resume = nullptr);

std::string metrics_csv_header();
std::string metrics_csv_row(const LogRow &row);

void save_checkpoint(const TrainState &state, const std::filesystem::path &path);
TrainState load_checkpoint(const std::filesystem::path &path);
std::vector<std::uint8_t> encode_state(const TrainState &state);
TrainState decode_state(std::span<const std::uint8_t> bytes);

} // namespace agcl
