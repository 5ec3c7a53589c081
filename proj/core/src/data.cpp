#include "agcl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>

#include "agcl/binary_io.hpp"
#include "agcl/error.hpp"

namespace agcl {

namespace {

constexpr int kPlacementAttempts = 200;

struct Ellipse {
    double cy, cx, ry, rx, angle;

    bool contains(double y, double x) const {
        const double dy = y - cy, dx = x - cx;
        const double c = std::cos(angle), s = std::sin(angle);
        const double u = c * dx + s * dy, v = -s * dx + c * dy;
        return (u * u) / (rx * rx) + (v * v) / (ry * ry) <= 1.0;
    }
};

Sample generate_one(const DatasetSpec &spec, std::size_t id) {
    Rng rng(derive_seed(spec.seed, {0xda7a, id}));
    const std::size_t n = spec.size;
    Sample s;
    s.id = id;
    s.image = ImageTensor(1, n, n);
    s.mask = LabelMap(n, n);

    const double amp = spec.texture_amplitude;
    const double mid = rng.uniform(spec.background_min + amp, spec.background_max - amp);
    const double fy = rng.uniform(0.2, 0.9), fx = rng.uniform(0.2, 0.9);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x)
            s.image.at(0, y, x) = static_cast<float>(
                mid + amp * std::sin(fy * double(y) + fx * double(x) + phase));

    const double slice = (spec.intensity_max - spec.intensity_min) / double(spec.classes);
    for (std::size_t k = 1; k <= spec.classes; ++k) {
        const auto blobs = static_cast<std::size_t>(
            rng.integer(static_cast<long long>(spec.blobs_min), static_cast<long long>(spec.blobs_max)));
        for (std::size_t b = 0; b < blobs; ++b) {
            bool placed = false;
            for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
                // Crowded images: later attempts draw from a shrinking radius range.
                const double hi = spec.radius_max - (spec.radius_max - spec.radius_min) *
                                                        double(attempt) / kPlacementAttempts;
                const double ry = rng.uniform(spec.radius_min, hi);
                const double rx = rng.uniform(spec.radius_min, hi);
                const double r = std::max(rx, ry);
                if (2.0 * r + 2.0 > double(n))
                    break;
                Ellipse e{rng.uniform(r + 1.0, double(n) - r - 1.0),
                          rng.uniform(r + 1.0, double(n) - r - 1.0), ry, rx,
                          rng.uniform(0.0, std::numbers::pi)};
                // Reject overlap with (or contact to) existing blobs.
                bool clash = false;
                std::vector<std::size_t> pixels;
                for (std::size_t y = 0; y < n && !clash; ++y)
                    for (std::size_t x = 0; x < n; ++x) {
                        if (!e.contains(double(y), double(x)))
                            continue;
                        for (int dy = -1; dy <= 1 && !clash; ++dy)
                            for (int dx = -1; dx <= 1; ++dx) {
                                const long yy = long(y) + dy, xx = long(x) + dx;
                                if (yy >= 0 && xx >= 0 && yy < long(n) && xx < long(n) &&
                                    s.mask.at(std::size_t(yy), std::size_t(xx)) != 0) {
                                    clash = true;
                                    break;
                                }
                            }
                        if (clash)
                            break;
                        pixels.push_back(y * n + x);
                    }
                if (clash || pixels.empty())
                    continue;
                const double lo = spec.intensity_min + double(k - 1) * slice;
                const float intensity = static_cast<float>(rng.uniform(lo, lo + slice));
                for (std::size_t p : pixels) {
                    s.mask.labels[p] = static_cast<std::uint8_t>(k);
                    s.image.data[p] = intensity;
                }
                placed = true;
            }
            if (!placed)
                throw GenerationError("generate: could not place blob " + std::to_string(b) +
                                      " of class " + std::to_string(k) + " in image " +
                                      std::to_string(id));
        }
    }
    if (spec.noise_sigma > 0.0)
        for (float &v : s.image.data)
            v = static_cast<float>(double(v) + spec.noise_sigma * rng.normal());
    for (float &v : s.image.data)
        v = std::clamp(v, 0.0f, 1.0f);
    return s;
}

template <class T>
void flip_rows(std::vector<T> &data, std::size_t planes, std::size_t h, std::size_t w) {
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = 0; y < h; ++y) {
            auto row = data.begin() + static_cast<std::ptrdiff_t>((p * h + y) * w);
            std::reverse(row, row + static_cast<std::ptrdiff_t>(w));
        }
}

template <class T>
void shift(std::vector<T> &data, std::size_t planes, std::size_t h, std::size_t w, int sx, int sy) {
    if (sx == 0 && sy == 0)
        return;
    std::vector<T> out(data.size(), T{0});
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = 0; y < h; ++y) {
            const long ty = long(y) + sy;
            if (ty < 0 || ty >= long(h))
                continue;
            for (std::size_t x = 0; x < w; ++x) {
                const long tx = long(x) + sx;
                if (tx < 0 || tx >= long(w))
                    continue;
                out[(p * h + std::size_t(ty)) * w + std::size_t(tx)] = data[(p * h + y) * w + x];
            }
        }
    data = std::move(out);
}

std::string stem(std::size_t id) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04zu", id);
    return buf;
}

} // namespace

void DatasetSpec::validate() const {
    if (count == 0)
        throw ParameterError("dataset: count must be >= 1");
    if (size < 8 || size % 8 != 0)
        throw ParameterError("dataset: size must be a positive multiple of 8");
    if (classes < 1 || classes > 254)
        throw ParameterError("dataset: classes must lie in [1, 254]");
    if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0))
        throw ParameterError("dataset: labeled_fraction must lie in (0,1]");
    if (labeled_fraction * double(count) < 1.0)
        throw ParameterError("dataset: labeled_fraction * count must be >= 1");
    if (blobs_min > blobs_max)
        throw ParameterError("dataset: blobs_min > blobs_max");
    if (!(radius_min > 0.0 && radius_min <= radius_max))
        throw ParameterError("dataset: radius range invalid");
    if (!(background_min >= 0.0 && background_min + 2.0 * texture_amplitude <= background_max &&
          background_max < intensity_min && intensity_min < intensity_max && intensity_max <= 1.0))
        throw ParameterError("dataset: intensity ranges must satisfy 0 <= background < foreground <= 1");
    if (!(noise_sigma >= 0.0))
        throw ParameterError("dataset: noise_sigma must be >= 0");
}

std::size_t DatasetSpec::labeled_count() const {
    return static_cast<std::size_t>(std::ceil(labeled_fraction * double(count) - 1e-9));
}

std::vector<Sample> generate(const DatasetSpec &spec) {
    spec.validate();
    std::vector<Sample> out;
    out.reserve(spec.count);
    for (std::size_t i = 0; i < spec.count; ++i)
        out.push_back(generate_one(spec, i));

    std::vector<std::size_t> order(spec.count);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(spec.seed, {0x5b117}));
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.index(i)]);
    const std::size_t labeled = std::min(spec.labeled_count(), spec.count);
    for (std::size_t i = 0; i < labeled; ++i)
        out[order[i]].labeled = true;
    return out;
}

WeakParams draw_weak(Rng &rng) {
    WeakParams p;
    p.flip = rng.bernoulli(0.5);
    p.shift_x = static_cast<int>(rng.integer(-2, 2));
    p.shift_y = static_cast<int>(rng.integer(-2, 2));
    return p;
}

StrongParams draw_strong(Rng &rng, const WeakParams &weak, std::size_t height, std::size_t width) {
    StrongParams p;
    p.weak = weak;
    p.noise = rng.bernoulli(0.8);
    p.noise_sigma = 0.1;
    p.noise_seed = rng.next_u64();
    p.gamma = rng.bernoulli(0.8);
    p.gamma_value = rng.uniform(0.7, 1.4);
    p.cutout = rng.bernoulli(0.5);
    const std::size_t max_side = std::max<std::size_t>(1, height / 4);
    p.cutout_side = 1 + rng.index(max_side);
    p.cutout_row = rng.index(height - p.cutout_side + 1);
    p.cutout_col = rng.index(width - std::min(width, p.cutout_side) + 1);
    return p;
}

Sample apply_weak(const Sample &sample, const WeakParams &p) {
    Sample out = sample;
    const std::size_t h = sample.image.height, w = sample.image.width;
    if (p.flip) {
        flip_rows(out.image.data, out.image.channels, h, w);
        if (!out.mask.empty())
            flip_rows(out.mask.labels, 1, h, w);
    }
    shift(out.image.data, out.image.channels, h, w, p.shift_x, p.shift_y);
    if (!out.mask.empty())
        shift(out.mask.labels, 1, h, w, p.shift_x, p.shift_y);
    return out;
}

Sample apply_strong(const Sample &sample, const StrongParams &p) {
    Sample out = apply_weak(sample, p.weak);
    auto &img = out.image.data;
    if (p.gamma)
        for (float &v : img)
            v = static_cast<float>(std::pow(std::clamp(double(v), 0.0, 1.0), p.gamma_value));
    if (p.noise) {
        Rng rng(p.noise_seed);
        for (float &v : img)
            v = static_cast<float>(double(v) + p.noise_sigma * rng.normal());
    }
    if (p.cutout && p.cutout_side > 0) {
        double mean = 0;
        for (float v : img)
            mean += v;
        mean /= double(img.size());
        for (std::size_t c = 0; c < out.image.channels; ++c)
            for (std::size_t y = p.cutout_row;
                 y < std::min(out.image.height, p.cutout_row + p.cutout_side); ++y)
                for (std::size_t x = p.cutout_col;
                     x < std::min(out.image.width, p.cutout_col + p.cutout_side); ++x)
                    out.image.at(c, y, x) = static_cast<float>(mean);
    }
    for (float &v : img)
        v = std::clamp(v, 0.0f, 1.0f);
    return out;
}

Sample augment_weak(const Sample &sample, Rng &rng) { return apply_weak(sample, draw_weak(rng)); }

Sample augment_strong(const Sample &sample, Rng &rng) {
    const WeakParams weak = draw_weak(rng);
    return apply_strong(sample, draw_strong(rng, weak, sample.image.height, sample.image.width));
}

// ---------------------------------------------------------------------------
// File formats

std::vector<std::uint8_t> encode_tensor(const ImageTensor &t) {
    ByteWriter w;
    w.magic("AGT1");
    w.u8(3);
    w.u32(static_cast<std::uint32_t>(t.channels));
    w.u32(static_cast<std::uint32_t>(t.height));
    w.u32(static_cast<std::uint32_t>(t.width));
    for (float v : t.data)
        w.f32(v);
    w.crc_trailer();
    return w.take();
}

ImageTensor decode_tensor(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    r.expect_magic("AGT1");
    const std::uint8_t rank = r.u8();
    if (rank < 1 || rank > 3)
        throw FormatError("tensor rank " + std::to_string(rank) + " unsupported", 4);
    std::vector<std::size_t> dims;
    for (std::uint8_t i = 0; i < rank; ++i)
        dims.push_back(r.u32());
    while (dims.size() < 3)
        dims.insert(dims.begin(), 1);
    const std::size_t n = dims[0] * dims[1] * dims[2];
    const std::size_t expected = r.offset() + 4 * n + 4;
    if (bytes.size() != expected) {
        if (bytes.size() < expected)
            throw TruncationError(expected, bytes.size());
        throw FormatError("trailing bytes after tensor payload", expected);
    }
    ByteReader body(bytes);
    body.verify_crc_trailer();
    ImageTensor t(dims[0], dims[1], dims[2]);
    for (float &v : t.data)
        v = r.f32();
    return t;
}

void write_tensor(const ImageTensor &tensor, const std::filesystem::path &path) {
    write_file(path, encode_tensor(tensor));
}

ImageTensor read_tensor(const std::filesystem::path &path) { return decode_tensor(read_file(path)); }

std::vector<std::uint8_t> encode_mask(const LabelMap &m) {
    ByteWriter w;
    w.magic("AGM1");
    w.u32(static_cast<std::uint32_t>(m.height));
    w.u32(static_cast<std::uint32_t>(m.width));
    w.raw(m.labels);
    w.crc_trailer();
    return w.take();
}

LabelMap decode_mask(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    r.expect_magic("AGM1");
    const std::size_t h = r.u32(), w = r.u32();
    const std::size_t expected = r.offset() + h * w + 4;
    if (bytes.size() != expected) {
        if (bytes.size() < expected)
            throw TruncationError(expected, bytes.size());
        throw FormatError("trailing bytes after mask payload", expected);
    }
    ByteReader body(bytes);
    body.verify_crc_trailer();
    LabelMap m(h, w);
    const auto payload = r.raw(h * w);
    std::copy(payload.begin(), payload.end(), m.labels.begin());
    return m;
}

void write_mask(const LabelMap &mask, const std::filesystem::path &path) {
    write_file(path, encode_mask(mask));
}

LabelMap read_mask(const std::filesystem::path &path) { return decode_mask(read_file(path)); }

void write_dataset(const std::vector<Sample> &samples, const std::filesystem::path &dir) {
    std::filesystem::create_directories(dir / "images");
    std::filesystem::create_directories(dir / "masks");
    std::ostringstream split;
    for (const Sample &s : samples) {
        const std::string name = stem(s.id);
        write_tensor(s.image, dir / "images" / (name + ".agt"));
        if (!s.mask.empty())
            write_mask(s.mask, dir / "masks" / (name + ".agm"));
        split << name << ' ' << (s.labeled ? "labeled" : "unlabeled") << '\n';
    }
    const std::string text = split.str();
    write_file(dir / "split.txt",
               std::span(reinterpret_cast<const std::uint8_t *>(text.data()), text.size()));
}

std::vector<Sample> read_dataset(const std::filesystem::path &dir) {
    std::ifstream in(dir / "split.txt");
    if (!in)
        throw Error("dataset: missing " + (dir / "split.txt").string());
    std::vector<Sample> out;
    std::string name, kind;
    std::size_t line = 0;
    while (in >> name >> kind) {
        ++line;
        if (kind != "labeled" && kind != "unlabeled")
            throw FormatError("split.txt line " + std::to_string(line) + ": expected labeled|unlabeled",
                              line);
        Sample s;
        try {
            s.id = std::stoul(name);
        } catch (const std::exception &) {
            throw FormatError("split.txt line " + std::to_string(line) + ": bad id '" + name + "'",
                              line);
        }
        s.labeled = kind == "labeled";
        s.image = read_tensor(dir / "images" / (name + ".agt"));
        const auto mask_path = dir / "masks" / (name + ".agm");
        if (std::filesystem::exists(mask_path))
            s.mask = read_mask(mask_path);
        else if (s.labeled)
            throw Error("dataset: labeled sample " + name + " has no mask");
        if (!s.mask.empty() && (s.mask.height != s.image.height || s.mask.width != s.image.width))
            throw ShapeError("dataset: sample " + name + " mask and image sizes differ");
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace agcl
