#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "agcl/losses.hpp"
#include "agcl/tensor.hpp"

namespace agcl {

template <class T>
struct ParamGroup {
    std::string name;
    std::vector<std::size_t> dims;
    std::vector<T> values;

    std::size_t size() const { return values.size(); }
};

/// Named parameter arrays. Every mutable access advances `generation()` so that a
/// ForwardTrace can detect that it was recorded against stale values.
template <class T>
class ParamSet {
public:
    void add(std::string name, std::vector<std::size_t> dims, std::vector<T> values);

    const std::vector<ParamGroup<T>> &groups() const { return groups_; }
    std::size_t group_count() const { return groups_.size(); }
    const ParamGroup<T> &group(std::size_t i) const { return groups_.at(i); }
    ParamGroup<T> &mutable_group(std::size_t i) {
        ++generation_;
        return groups_.at(i);
    }
    std::span<const T> values(std::size_t i) const { return groups_.at(i).values; }
    std::span<T> mutable_values(std::size_t i) { return mutable_group(i).values; }

    /// Group index by name; throws ParameterError when absent.
    std::size_t index_of(const std::string &name) const;
    const ParamGroup<T> &operator[](const std::string &name) const {
        return groups_[index_of(name)];
    }

    std::size_t total() const;
    std::uint64_t generation() const { return generation_; }
    void touch() { ++generation_; }

    bool congruent(const ParamSet &o) const;
    ParamSet zeros_like() const;
    bool all_finite() const;

    /// Element-wise this += scale * o.
    void axpy(T scale, const ParamSet &o);

    template <class U>
    ParamSet<U> cast() const {
        ParamSet<U> out;
        for (const auto &g : groups_)
            out.add(g.name, g.dims, std::vector<U>(g.values.begin(), g.values.end()));
        return out;
    }

    friend bool operator==(const ParamSet &a, const ParamSet &b) {
        if (a.groups_.size() != b.groups_.size())
            return false;
        for (std::size_t i = 0; i < a.groups_.size(); ++i)
            if (a.groups_[i].name != b.groups_[i].name || a.groups_[i].dims != b.groups_[i].dims ||
                a.groups_[i].values != b.groups_[i].values)
                return false;
        return true;
    }

private:
    std::vector<ParamGroup<T>> groups_;
    std::uint64_t generation_ = 0;
};

/// Fixed encoder/decoder: three conv+SiLU blocks with 2x2 average pooling on the way
/// down, three nearest-upsample + skip-concat + conv+SiLU blocks on the way up, a 1x1
/// softmax head, and a two-layer projection head on patch-pooled decoder features.
/// Spatial size must be a positive multiple of 8.
struct Architecture {
    std::size_t in_channels = 1;
    std::size_t classes = 3; // output channels, background included
    std::size_t c1 = 16;
    std::size_t c2 = 24;
    std::size_t c3 = 48;
    std::size_t embed_hidden = 32;
    std::size_t embed_dim = 32;

    friend bool operator==(const Architecture &, const Architecture &) = default;
};

/// He-style fan-in initialisation (zero biases) from `seed`.
template <class T>
ParamSet<T> init_params(const Architecture &arch, std::uint64_t seed);

/// All-zero parameters with the layout of `arch`.
template <class T>
ParamSet<T> zero_params(const Architecture &arch);

/// Recovers the architecture from parameter shapes (e.g. after loading a checkpoint).
template <class T>
Architecture infer_architecture(const ParamSet<T> &params);

template <class T>
struct ForwardTrace {
    const ParamSet<T> *params = nullptr;
    std::uint64_t generation = 0;
    Architecture arch;

    Tensor3<T> input;
    Tensor3<T> z1, e1, p1, z2, e2, p2, z3, e3, p3;
    Tensor3<T> cat3, zd3, d3, cat2, zd2, d2, cat1, zd1, d1;
    Tensor3<T> logits;
    Tensor3<T> probs; // per-pixel class probabilities

    /// Decoder features at full resolution; the projection head pools these per patch.
    const Tensor3<T> &features() const { return d1; }
};

template <class T>
ForwardTrace<T> forward(const ParamSet<T> &params, const Architecture &arch,
                        const Tensor3<T> &image);

/// Reverse pass. `grad_probs` is dL/dprobs (same shape as trace.probs, may be empty for
/// none); `grad_features` is dL/dfeatures (may be empty). Gradients are added into `grads`.
/// Throws UsageError if the parameters changed since the trace was recorded.
template <class T>
void backward(const ForwardTrace<T> &trace, const Tensor3<T> &grad_probs,
              const Tensor3<T> &grad_features, ParamSet<T> &grads);

/// Convenience overload returning fresh gradients.
template <class T>
ParamSet<T> backward(const ForwardTrace<T> &trace, const Tensor3<T> &grad_probs,
                     const Tensor3<T> &grad_features = {});

template <class T>
struct ProjectionTrace {
    std::vector<T> input, hidden_pre, hidden, out;
    double norm = 0.0;
    Embedding embedding;
};

/// Two-layer projection to embed_dim, then L2 normalisation. Throws DegenerateError when
/// the pre-normalisation vector vanishes (the caller should skip that patch).
template <class T>
ProjectionTrace<T> project_forward(const ParamSet<T> &params, std::span<const T> pooled);

template <class T>
Embedding project(const ParamSet<T> &params, std::span<const T> pooled) {
    return project_forward(params, pooled).embedding;
}

/// Adds projection-head parameter gradients into `grads` and returns dL/dpooled.
template <class T>
std::vector<T> project_backward(const ParamSet<T> &params, const ProjectionTrace<T> &trace,
                                std::span<const double> grad_embedding, ParamSet<T> &grads);

/// Channel means of `features` over the square patch at (row, col).
template <class T>
std::vector<T> pool_patch(const Tensor3<T> &features, std::size_t row, std::size_t col,
                          std::size_t size);

/// Scatters dL/dpooled uniformly back over the patch into `grad_features`.
template <class T>
void unpool_patch(std::span<const T> grad_pooled, std::size_t row, std::size_t col,
                  std::size_t size, Tensor3<T> &grad_features);

/// teacher' = alpha * teacher + (1 - alpha) * student, element-wise.
template <class T>
ParamSet<T> ema_update(const ParamSet<T> &teacher, const ParamSet<T> &student, double alpha);

/// Binary container shared by model and trainer checkpoints: magic "AGCL", u16 version,
/// then per group (u16 name length, name, u8 rank, u32 dims, float32 payload), CRC32 trailer.
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct NamedArray {
    std::string name;
    std::vector<std::size_t> dims;
    std::vector<float> values;
};

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedArray> &arrays);
std::vector<NamedArray> decode_checkpoint(std::span<const std::uint8_t> bytes);

void write_params(const ParamSet<float> &params, const std::filesystem::path &path);
ParamSet<float> read_params(const std::filesystem::path &path);

} // namespace agcl
