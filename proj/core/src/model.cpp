#include "agcl/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "agcl/binary_io.hpp"
#include "agcl/error.hpp"
#include "agcl/random.hpp"

namespace agcl {

// ---------------------------------------------------------------------------
// ParamSet

template <class T>
void ParamSet<T>::add(std::string name, std::vector<std::size_t> dims, std::vector<T> values) {
    std::size_t n = 1;
    for (std::size_t d : dims)
        n *= d;
    if (n != values.size())
        throw ShapeError("ParamSet: group '" + name + "' has " + std::to_string(values.size()) +
                         " values for " + std::to_string(n) + " slots");
    groups_.push_back({std::move(name), std::move(dims), std::move(values)});
    ++generation_;
}

template <class T>
std::size_t ParamSet<T>::index_of(const std::string &name) const {
    for (std::size_t i = 0; i < groups_.size(); ++i)
        if (groups_[i].name == name)
            return i;
    throw ParameterError("ParamSet: no group named '" + name + "'");
}

template <class T>
std::size_t ParamSet<T>::total() const {
    std::size_t n = 0;
    for (const auto &g : groups_)
        n += g.values.size();
    return n;
}

template <class T>
bool ParamSet<T>::congruent(const ParamSet &o) const {
    if (groups_.size() != o.groups_.size())
        return false;
    for (std::size_t i = 0; i < groups_.size(); ++i)
        if (groups_[i].name != o.groups_[i].name || groups_[i].dims != o.groups_[i].dims)
            return false;
    return true;
}

template <class T>
ParamSet<T> ParamSet<T>::zeros_like() const {
    ParamSet out;
    for (const auto &g : groups_)
        out.add(g.name, g.dims, std::vector<T>(g.values.size(), T{0}));
    return out;
}

template <class T>
bool ParamSet<T>::all_finite() const {
    for (const auto &g : groups_)
        for (T v : g.values)
            if (!std::isfinite(v))
                return false;
    return true;
}

template <class T>
void ParamSet<T>::axpy(T scale, const ParamSet &o) {
    if (!congruent(o))
        throw ShapeError("ParamSet::axpy: parameter sets are not congruent");
    ++generation_;
    for (std::size_t i = 0; i < groups_.size(); ++i) {
        auto &dst = groups_[i].values;
        const auto &src = o.groups_[i].values;
        for (std::size_t j = 0; j < dst.size(); ++j)
            dst[j] += scale * src[j];
    }
}

template class ParamSet<float>;
template class ParamSet<double>;

// ---------------------------------------------------------------------------
// Layer kernels

namespace {

template <class T>
T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

// Same-padded stride-1 convolution; weights [out][in][k][k].
template <class T>
Tensor3<T> conv_forward(const Tensor3<T> &in, std::span<const T> w, std::span<const T> b,
                        std::size_t out_ch, std::size_t k) {
    const std::size_t h = in.height, wd = in.width, cin = in.channels;
    const long pad = static_cast<long>(k / 2);
    Tensor3<T> out(out_ch, h, wd);
    for (std::size_t oc = 0; oc < out_ch; ++oc) {
        T *o = out.data.data() + oc * h * wd;
        std::fill(o, o + h * wd, b[oc]);
        for (std::size_t ic = 0; ic < cin; ++ic) {
            const T *src = in.data.data() + ic * h * wd;
            for (std::size_t ky = 0; ky < k; ++ky) {
                const long dy = static_cast<long>(ky) - pad;
                for (std::size_t kx = 0; kx < k; ++kx) {
                    const long dx = static_cast<long>(kx) - pad;
                    const T wv = w[((oc * cin + ic) * k + ky) * k + kx];
                    const long y0 = std::max(0L, -dy), y1 = std::min<long>(h, long(h) - dy);
                    const long x0 = std::max(0L, -dx), x1 = std::min<long>(wd, long(wd) - dx);
                    for (long y = y0; y < y1; ++y) {
                        T *orow = o + y * long(wd);
                        const T *irow = src + (y + dy) * long(wd) + dx;
                        for (long x = x0; x < x1; ++x)
                            orow[x] += wv * irow[x];
                    }
                }
            }
        }
    }
    return out;
}

template <class T>
void conv_backward(const Tensor3<T> &in, std::span<const T> w, const Tensor3<T> &grad_out,
                   std::size_t k, std::span<T> grad_w, std::span<T> grad_b, Tensor3<T> *grad_in) {
    const std::size_t h = in.height, wd = in.width, cin = in.channels,
                      out_ch = grad_out.channels;
    const long pad = static_cast<long>(k / 2);
    for (std::size_t oc = 0; oc < out_ch; ++oc) {
        const T *g = grad_out.data.data() + oc * h * wd;
        T bsum = 0;
        for (std::size_t i = 0; i < h * wd; ++i)
            bsum += g[i];
        grad_b[oc] += bsum;
        for (std::size_t ic = 0; ic < cin; ++ic) {
            const T *src = in.data.data() + ic * h * wd;
            T *dsrc = grad_in ? grad_in->data.data() + ic * h * wd : nullptr;
            for (std::size_t ky = 0; ky < k; ++ky) {
                const long dy = static_cast<long>(ky) - pad;
                for (std::size_t kx = 0; kx < k; ++kx) {
                    const long dx = static_cast<long>(kx) - pad;
                    const std::size_t widx = ((oc * cin + ic) * k + ky) * k + kx;
                    const T wv = w[widx];
                    const long y0 = std::max(0L, -dy), y1 = std::min<long>(h, long(h) - dy);
                    const long x0 = std::max(0L, -dx), x1 = std::min<long>(wd, long(wd) - dx);
                    T acc = 0;
                    for (long y = y0; y < y1; ++y) {
                        const T *grow = g + y * long(wd);
                        const T *irow = src + (y + dy) * long(wd) + dx;
                        for (long x = x0; x < x1; ++x)
                            acc += grow[x] * irow[x];
                        if (dsrc) {
                            T *drow = dsrc + (y + dy) * long(wd) + dx;
                            for (long x = x0; x < x1; ++x)
                                drow[x] += wv * grow[x];
                        }
                    }
                    grad_w[widx] += acc;
                }
            }
        }
    }
}

template <class T>
Tensor3<T> silu(const Tensor3<T> &z) {
    Tensor3<T> out(z.channels, z.height, z.width);
    for (std::size_t i = 0; i < z.size(); ++i)
        out.data[i] = z.data[i] * sigmoid(z.data[i]);
    return out;
}

// dL/dz from dL/da where a = silu(z).
template <class T>
Tensor3<T> silu_backward(const Tensor3<T> &z, const Tensor3<T> &grad) {
    Tensor3<T> out(z.channels, z.height, z.width);
    for (std::size_t i = 0; i < z.size(); ++i) {
        const T s = sigmoid(z.data[i]);
        out.data[i] = grad.data[i] * s * (T(1) + z.data[i] * (T(1) - s));
    }
    return out;
}

template <class T>
Tensor3<T> avgpool2(const Tensor3<T> &in) {
    Tensor3<T> out(in.channels, in.height / 2, in.width / 2);
    for (std::size_t c = 0; c < in.channels; ++c)
        for (std::size_t y = 0; y < out.height; ++y)
            for (std::size_t x = 0; x < out.width; ++x)
                out.at(c, y, x) = T(0.25) * (in.at(c, 2 * y, 2 * x) + in.at(c, 2 * y, 2 * x + 1) +
                                             in.at(c, 2 * y + 1, 2 * x) +
                                             in.at(c, 2 * y + 1, 2 * x + 1));
    return out;
}

template <class T>
void avgpool2_backward(const Tensor3<T> &grad_out, Tensor3<T> &grad_in) {
    for (std::size_t c = 0; c < grad_out.channels; ++c)
        for (std::size_t y = 0; y < grad_out.height; ++y)
            for (std::size_t x = 0; x < grad_out.width; ++x) {
                const T g = T(0.25) * grad_out.at(c, y, x);
                grad_in.at(c, 2 * y, 2 * x) += g;
                grad_in.at(c, 2 * y, 2 * x + 1) += g;
                grad_in.at(c, 2 * y + 1, 2 * x) += g;
                grad_in.at(c, 2 * y + 1, 2 * x + 1) += g;
            }
}

// Nearest-neighbour 2x upsample of `low` concatenated (channel-wise) with `skip`.
template <class T>
Tensor3<T> upsample_concat(const Tensor3<T> &low, const Tensor3<T> &skip) {
    Tensor3<T> out(low.channels + skip.channels, skip.height, skip.width);
    for (std::size_t c = 0; c < low.channels; ++c)
        for (std::size_t y = 0; y < skip.height; ++y)
            for (std::size_t x = 0; x < skip.width; ++x)
                out.at(c, y, x) = low.at(c, y / 2, x / 2);
    std::copy(skip.data.begin(), skip.data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(low.channels * skip.plane()));
    return out;
}

template <class T>
void upsample_concat_backward(const Tensor3<T> &grad, Tensor3<T> &grad_low, Tensor3<T> &grad_skip) {
    for (std::size_t c = 0; c < grad_low.channels; ++c)
        for (std::size_t y = 0; y < grad.height; ++y)
            for (std::size_t x = 0; x < grad.width; ++x)
                grad_low.at(c, y / 2, x / 2) += grad.at(c, y, x);
    const std::size_t offset = grad_low.channels * grad.plane();
    for (std::size_t i = 0; i < grad_skip.size(); ++i)
        grad_skip.data[i] += grad.data[offset + i];
}

template <class T>
Tensor3<T> softmax_channels(const Tensor3<T> &logits) {
    Tensor3<T> out(logits.channels, logits.height, logits.width);
    const std::size_t plane = logits.plane(), cn = logits.channels;
    for (std::size_t m = 0; m < plane; ++m) {
        T mx = logits.data[m];
        for (std::size_t c = 1; c < cn; ++c)
            mx = std::max(mx, logits.data[c * plane + m]);
        T z = 0;
        for (std::size_t c = 0; c < cn; ++c) {
            const T e = std::exp(logits.data[c * plane + m] - mx);
            out.data[c * plane + m] = e;
            z += e;
        }
        for (std::size_t c = 0; c < cn; ++c)
            out.data[c * plane + m] /= z;
    }
    return out;
}

struct ConvSpec {
    const char *name;
    std::size_t out, in, k;
};

std::vector<ConvSpec> conv_layout(const Architecture &a) {
    return {
        {"enc1", a.c1, a.in_channels, 3}, {"enc2", a.c2, a.c1, 3},
        {"enc3", a.c3, a.c2, 3},          {"dec3", a.c2, 2 * a.c3, 3},
        {"dec2", a.c1, 2 * a.c2, 3},      {"dec1", a.c1, 2 * a.c1, 3},
        {"head", a.classes, a.c1, 1},
    };
}

template <class T>
struct LayerRefs {
    std::size_t w, b;
};

template <class T>
LayerRefs<T> layer(const ParamSet<T> &p, const char *name) {
    return {p.index_of(std::string(name) + ".w"), p.index_of(std::string(name) + ".b")};
}

} // namespace

// ---------------------------------------------------------------------------
// Construction

template <class T>
ParamSet<T> zero_params(const Architecture &arch) {
    ParamSet<T> p;
    for (const ConvSpec &c : conv_layout(arch)) {
        p.add(std::string(c.name) + ".w", {c.out, c.in, c.k, c.k},
              std::vector<T>(c.out * c.in * c.k * c.k, T{0}));
        p.add(std::string(c.name) + ".b", {c.out}, std::vector<T>(c.out, T{0}));
    }
    p.add("proj1.w", {arch.embed_hidden, arch.c1},
          std::vector<T>(arch.embed_hidden * arch.c1, T{0}));
    p.add("proj1.b", {arch.embed_hidden}, std::vector<T>(arch.embed_hidden, T{0}));
    p.add("proj2.w", {arch.embed_dim, arch.embed_hidden},
          std::vector<T>(arch.embed_dim * arch.embed_hidden, T{0}));
    p.add("proj2.b", {arch.embed_dim}, std::vector<T>(arch.embed_dim, T{0}));
    return p;
}

template <class T>
ParamSet<T> init_params(const Architecture &arch, std::uint64_t seed) {
    ParamSet<T> p = zero_params<T>(arch);
    Rng rng(derive_seed(seed, {0x1a17}));
    for (std::size_t i = 0; i < p.group_count(); ++i) {
        ParamGroup<T> &g = p.mutable_group(i);
        if (g.dims.size() < 2)
            continue; // biases start at zero
        std::size_t fan_in = 1;
        for (std::size_t d = 1; d < g.dims.size(); ++d)
            fan_in *= g.dims[d];
        const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (T &v : g.values)
            v = static_cast<T>(stddev * rng.normal());
    }
    return p;
}

template <class T>
Architecture infer_architecture(const ParamSet<T> &params) {
    Architecture a;
    const auto &e1 = params["enc1.w"].dims;
    a.c1 = e1[0];
    a.in_channels = e1[1];
    a.c2 = params["enc2.w"].dims[0];
    a.c3 = params["enc3.w"].dims[0];
    a.classes = params["head.w"].dims[0];
    a.embed_hidden = params["proj1.w"].dims[0];
    a.embed_dim = params["proj2.w"].dims[0];
    if (!params.congruent(zero_params<T>(a)))
        throw ShapeError("parameter set does not match the fixed network layout");
    return a;
}

// ---------------------------------------------------------------------------
// Forward / backward

template <class T>
ForwardTrace<T> forward(const ParamSet<T> &params, const Architecture &arch,
                        const Tensor3<T> &image) {
    if (image.channels != arch.in_channels)
        throw ShapeError("forward: image has " + std::to_string(image.channels) +
                         " channels, network expects " + std::to_string(arch.in_channels));
    if (image.height == 0 || image.height % 8 != 0 || image.width == 0 || image.width % 8 != 0)
        throw ShapeError("forward: spatial size " + std::to_string(image.height) + "x" +
                         std::to_string(image.width) + " is not a positive multiple of 8");

    ForwardTrace<T> t;
    t.params = &params;
    t.generation = params.generation();
    t.arch = arch;
    t.input = image;

    auto conv = [&](const Tensor3<T> &in, const char *name, std::size_t k) {
        const auto r = layer(params, name);
        return conv_forward<T>(in, params.values(r.w), params.values(r.b),
                               params.group(r.w).dims[0], k);
    };

    t.z1 = conv(t.input, "enc1", 3);
    t.e1 = silu(t.z1);
    t.p1 = avgpool2(t.e1);
    t.z2 = conv(t.p1, "enc2", 3);
    t.e2 = silu(t.z2);
    t.p2 = avgpool2(t.e2);
    t.z3 = conv(t.p2, "enc3", 3);
    t.e3 = silu(t.z3);
    t.p3 = avgpool2(t.e3);

    t.cat3 = upsample_concat(t.p3, t.e3);
    t.zd3 = conv(t.cat3, "dec3", 3);
    t.d3 = silu(t.zd3);
    t.cat2 = upsample_concat(t.d3, t.e2);
    t.zd2 = conv(t.cat2, "dec2", 3);
    t.d2 = silu(t.zd2);
    t.cat1 = upsample_concat(t.d2, t.e1);
    t.zd1 = conv(t.cat1, "dec1", 3);
    t.d1 = silu(t.zd1);

    t.logits = conv(t.d1, "head", 1);
    t.probs = softmax_channels(t.logits);
    return t;
}

template <class T>
void backward(const ForwardTrace<T> &t, const Tensor3<T> &grad_probs,
              const Tensor3<T> &grad_features, ParamSet<T> &grads) {
    if (t.params == nullptr || t.params->generation() != t.generation)
        throw UsageError("backward: trace is stale (parameters changed after forward)");
    const ParamSet<T> &params = *t.params;
    if (!grads.congruent(params))
        throw ShapeError("backward: gradient buffer does not match parameters");
    if (!grad_probs.data.empty() && !grad_probs.same_shape(t.probs))
        throw ShapeError("backward: probability gradient shape mismatch");
    if (!grad_features.data.empty() && !grad_features.same_shape(t.d1))
        throw ShapeError("backward: feature gradient shape mismatch");

    auto conv_back = [&](const Tensor3<T> &in, const char *name, std::size_t k,
                         const Tensor3<T> &g_out, Tensor3<T> *g_in) {
        const auto r = layer(params, name);
        conv_backward<T>(in, params.values(r.w), g_out, k, grads.mutable_values(r.w),
                         grads.mutable_values(r.b), g_in);
    };

    // Softmax: dz_c = p_c (dp_c - sum_k p_k dp_k).
    Tensor3<T> g_logits(t.logits.channels, t.logits.height, t.logits.width);
    if (!grad_probs.data.empty()) {
        const std::size_t plane = t.probs.plane(), cn = t.probs.channels;
        for (std::size_t m = 0; m < plane; ++m) {
            T dot = 0;
            for (std::size_t c = 0; c < cn; ++c)
                dot += t.probs.data[c * plane + m] * grad_probs.data[c * plane + m];
            for (std::size_t c = 0; c < cn; ++c)
                g_logits.data[c * plane + m] =
                    t.probs.data[c * plane + m] * (grad_probs.data[c * plane + m] - dot);
        }
    }

    Tensor3<T> g_d1(t.d1.channels, t.d1.height, t.d1.width);
    conv_back(t.d1, "head", 1, g_logits, &g_d1);
    if (!grad_features.data.empty())
        for (std::size_t i = 0; i < g_d1.size(); ++i)
            g_d1.data[i] += grad_features.data[i];

    Tensor3<T> g_cat1(t.cat1.channels, t.cat1.height, t.cat1.width);
    conv_back(t.cat1, "dec1", 3, silu_backward(t.zd1, g_d1), &g_cat1);
    Tensor3<T> g_d2(t.d2.channels, t.d2.height, t.d2.width);
    Tensor3<T> g_e1(t.e1.channels, t.e1.height, t.e1.width);
    upsample_concat_backward(g_cat1, g_d2, g_e1);

    Tensor3<T> g_cat2(t.cat2.channels, t.cat2.height, t.cat2.width);
    conv_back(t.cat2, "dec2", 3, silu_backward(t.zd2, g_d2), &g_cat2);
    Tensor3<T> g_d3(t.d3.channels, t.d3.height, t.d3.width);
    Tensor3<T> g_e2(t.e2.channels, t.e2.height, t.e2.width);
    upsample_concat_backward(g_cat2, g_d3, g_e2);

    Tensor3<T> g_cat3(t.cat3.channels, t.cat3.height, t.cat3.width);
    conv_back(t.cat3, "dec3", 3, silu_backward(t.zd3, g_d3), &g_cat3);
    Tensor3<T> g_p3(t.p3.channels, t.p3.height, t.p3.width);
    Tensor3<T> g_e3(t.e3.channels, t.e3.height, t.e3.width);
    upsample_concat_backward(g_cat3, g_p3, g_e3);

    avgpool2_backward(g_p3, g_e3);
    Tensor3<T> g_p2(t.p2.channels, t.p2.height, t.p2.width);
    conv_back(t.p2, "enc3", 3, silu_backward(t.z3, g_e3), &g_p2);
    avgpool2_backward(g_p2, g_e2);
    Tensor3<T> g_p1(t.p1.channels, t.p1.height, t.p1.width);
    conv_back(t.p1, "enc2", 3, silu_backward(t.z2, g_e2), &g_p1);
    avgpool2_backward(g_p1, g_e1);
    conv_back(t.input, "enc1", 3, silu_backward(t.z1, g_e1), nullptr);
}

template <class T>
ParamSet<T> backward(const ForwardTrace<T> &trace, const Tensor3<T> &grad_probs,
                     const Tensor3<T> &grad_features) {
    if (trace.params == nullptr)
        throw UsageError("backward: empty trace");
    ParamSet<T> grads = trace.params->zeros_like();
    backward(trace, grad_probs, grad_features, grads);
    return grads;
}

// ---------------------------------------------------------------------------
// Projection head

template <class T>
ProjectionTrace<T> project_forward(const ParamSet<T> &params, std::span<const T> pooled) {
    const auto &w1 = params["proj1.w"], &b1 = params["proj1.b"];
    const auto &w2 = params["proj2.w"], &b2 = params["proj2.b"];
    const std::size_t hidden = w1.dims[0], in = w1.dims[1], out = w2.dims[0];
    if (pooled.size() != in)
        throw ShapeError("project: expected " + std::to_string(in) + " features, got " +
                         std::to_string(pooled.size()));
    ProjectionTrace<T> t;
    t.input.assign(pooled.begin(), pooled.end());
    t.hidden_pre.resize(hidden);
    t.hidden.resize(hidden);
    for (std::size_t h = 0; h < hidden; ++h) {
        T s = b1.values[h];
        for (std::size_t i = 0; i < in; ++i)
            s += w1.values[h * in + i] * pooled[i];
        t.hidden_pre[h] = s;
        t.hidden[h] = s * sigmoid(s);
    }
    t.out.resize(out);
    double norm2 = 0;
    for (std::size_t o = 0; o < out; ++o) {
        T s = b2.values[o];
        for (std::size_t h = 0; h < hidden; ++h)
            s += w2.values[o * hidden + h] * t.hidden[h];
        t.out[o] = s;
        norm2 += double(s) * double(s);
    }
    t.norm = std::sqrt(norm2);
    if (!(t.norm > 1e-12))
        throw DegenerateError("project: projection output has zero norm");
    std::vector<double> e(out);
    for (std::size_t o = 0; o < out; ++o)
        e[o] = double(t.out[o]) / t.norm;
    t.embedding = Embedding{std::move(e), true};
    return t;
}

template <class T>
std::vector<T> project_backward(const ParamSet<T> &params, const ProjectionTrace<T> &t,
                                std::span<const double> grad_embedding, ParamSet<T> &grads) {
    const std::size_t iw1 = params.index_of("proj1.w"), ib1 = params.index_of("proj1.b");
    const std::size_t iw2 = params.index_of("proj2.w"), ib2 = params.index_of("proj2.b");
    const auto w1 = params.values(iw1);
    const auto w2 = params.values(iw2);
    const std::size_t hidden = t.hidden.size(), in = t.input.size(), out = t.out.size();
    if (grad_embedding.size() != out)
        throw ShapeError("project_backward: gradient length mismatch");

    // y = o / |o|  =>  do = (dy - y (y . dy)) / |o|
    const auto &y = t.embedding.values;
    double ydy = 0;
    for (std::size_t o = 0; o < out; ++o)
        ydy += y[o] * grad_embedding[o];
    std::vector<T> g_out(out);
    for (std::size_t o = 0; o < out; ++o)
        g_out[o] = static_cast<T>((grad_embedding[o] - y[o] * ydy) / t.norm);

    auto gw2 = grads.mutable_values(iw2);
    auto gb2 = grads.mutable_values(ib2);
    std::vector<T> g_hidden(hidden, T{0});
    for (std::size_t o = 0; o < out; ++o) {
        gb2[o] += g_out[o];
        for (std::size_t h = 0; h < hidden; ++h) {
            gw2[o * hidden + h] += g_out[o] * t.hidden[h];
            g_hidden[h] += g_out[o] * w2[o * hidden + h];
        }
    }
    auto gw1 = grads.mutable_values(iw1);
    auto gb1 = grads.mutable_values(ib1);
    std::vector<T> g_in(in, T{0});
    for (std::size_t h = 0; h < hidden; ++h) {
        const T z = t.hidden_pre[h];
        const T s = sigmoid(z);
        const T gz = g_hidden[h] * s * (T(1) + z * (T(1) - s));
        gb1[h] += gz;
        for (std::size_t i = 0; i < in; ++i) {
            gw1[h * in + i] += gz * t.input[i];
            g_in[i] += gz * w1[h * in + i];
        }
    }
    return g_in;
}

template <class T>
std::vector<T> pool_patch(const Tensor3<T> &features, std::size_t row, std::size_t col,
                          std::size_t size) {
    if (row + size > features.height || col + size > features.width)
        throw ShapeError("pool_patch: patch exceeds feature map");
    std::vector<T> out(features.channels, T{0});
    const T inv = T(1) / static_cast<T>(size * size);
    for (std::size_t c = 0; c < features.channels; ++c) {
        T s = 0;
        for (std::size_t y = row; y < row + size; ++y)
            for (std::size_t x = col; x < col + size; ++x)
                s += features.at(c, y, x);
        out[c] = s * inv;
    }
    return out;
}

template <class T>
void unpool_patch(std::span<const T> grad_pooled, std::size_t row, std::size_t col,
                  std::size_t size, Tensor3<T> &grad_features) {
    const T inv = T(1) / static_cast<T>(size * size);
    for (std::size_t c = 0; c < grad_features.channels; ++c) {
        const T g = grad_pooled[c] * inv;
        for (std::size_t y = row; y < row + size; ++y)
            for (std::size_t x = col; x < col + size; ++x)
                grad_features.at(c, y, x) += g;
    }
}

template <class T>
ParamSet<T> ema_update(const ParamSet<T> &teacher, const ParamSet<T> &student, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw ParameterError("ema_update: alpha must lie in [0,1]");
    if (!teacher.congruent(student))
        throw ShapeError("ema_update: teacher and student are not shape-congruent");
    ParamSet<T> out = teacher;
    const T a = static_cast<T>(alpha), b = static_cast<T>(1.0 - alpha);
    for (std::size_t i = 0; i < out.group_count(); ++i) {
        auto dst = out.mutable_values(i);
        const auto src = student.values(i);
        for (std::size_t j = 0; j < dst.size(); ++j)
            dst[j] = a * dst[j] + b * src[j];
    }
    return out;
}

#define AGCL_INSTANTIATE(T)                                                                      \
    template ParamSet<T> init_params<T>(const Architecture &, std::uint64_t);                    \
    template ParamSet<T> zero_params<T>(const Architecture &);                                   \
    template Architecture infer_architecture<T>(const ParamSet<T> &);                            \
    template ForwardTrace<T> forward<T>(const ParamSet<T> &, const Architecture &,               \
                                        const Tensor3<T> &);                                     \
    template void backward<T>(const ForwardTrace<T> &, const Tensor3<T> &, const Tensor3<T> &,   \
                              ParamSet<T> &);                                                    \
    template ParamSet<T> backward<T>(const ForwardTrace<T> &, const Tensor3<T> &,                \
                                     const Tensor3<T> &);                                        \
    template ProjectionTrace<T> project_forward<T>(const ParamSet<T> &, std::span<const T>);     \
    template std::vector<T> project_backward<T>(const ParamSet<T> &, const ProjectionTrace<T> &, \
                                                std::span<const double>, ParamSet<T> &);         \
    template std::vector<T> pool_patch<T>(const Tensor3<T> &, std::size_t, std::size_t,          \
                                          std::size_t);                                          \
    template void unpool_patch<T>(std::span<const T>, std::size_t, std::size_t, std::size_t,     \
                                  Tensor3<T> &);                                                 \
    template ParamSet<T> ema_update<T>(const ParamSet<T> &, const ParamSet<T> &, double);

AGCL_INSTANTIATE(float)
AGCL_INSTANTIATE(double)

#undef AGCL_INSTANTIATE

// ---------------------------------------------------------------------------
// Checkpoint container

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedArray> &arrays) {
    ByteWriter w;
    w.magic("AGCL");
    w.u16(kCheckpointVersion);
    for (const NamedArray &a : arrays) {
        if (a.name.size() > 0xffff || a.dims.size() > 0xff)
            throw ParameterError("checkpoint: group '" + a.name + "' name or rank too large");
        w.u16(static_cast<std::uint16_t>(a.name.size()));
        w.raw(std::span(reinterpret_cast<const std::uint8_t *>(a.name.data()), a.name.size()));
        w.u8(static_cast<std::uint8_t>(a.dims.size()));
        std::size_t n = 1;
        for (std::size_t d : a.dims) {
            w.u32(static_cast<std::uint32_t>(d));
            n *= d;
        }
        if (n != a.values.size())
            throw ShapeError("checkpoint: group '" + a.name + "' payload does not match dims");
        for (float v : a.values)
            w.f32(v);
    }
    w.crc_trailer();
    return w.take();
}

std::vector<NamedArray> decode_checkpoint(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    r.expect_magic("AGCL");
    const std::size_t version_at = r.offset();
    const std::uint16_t version = r.u16();
    if (version != kCheckpointVersion)
        throw VersionError(version, kCheckpointVersion, version_at);
    r.verify_crc_trailer();
    std::vector<NamedArray> out;
    while (r.remaining() > 0) {
        NamedArray a;
        const std::uint16_t len = r.u16();
        a.name = r.str(len);
        const std::uint8_t rank = r.u8();
        std::size_t n = 1;
        for (std::uint8_t i = 0; i < rank; ++i) {
            a.dims.push_back(r.u32());
            n *= a.dims.back();
        }
        r.need(n * 4);
        a.values.resize(n);
        for (std::size_t i = 0; i < n; ++i)
            a.values[i] = r.f32();
        out.push_back(std::move(a));
    }
    return out;
}

void write_params(const ParamSet<float> &params, const std::filesystem::path &path) {
    std::vector<NamedArray> arrays;
    for (const auto &g : params.groups())
        arrays.push_back({g.name, g.dims, g.values});
    write_file(path, encode_checkpoint(arrays));
}

ParamSet<float> read_params(const std::filesystem::path &path) {
    ParamSet<float> p;
    for (NamedArray &a : decode_checkpoint(read_file(path)))
        p.add(std::move(a.name), std::move(a.dims), std::move(a.values));
    return p;
}

} // namespace agcl
