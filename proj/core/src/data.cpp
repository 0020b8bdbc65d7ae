#include "fixquant/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "fixquant/fixedpoint.hpp"

namespace fixquant {

Tensor LabeledDataset::sample(std::size_t i) const {
    return gather({i});
}

Tensor LabeledDataset::gather(const std::vector<std::size_t>& indices) const {
    const std::size_t per = images.size() / images.dim(0);
    std::vector<std::size_t> shape = images.shape();
    shape[0] = indices.size();
    Tensor out(shape);
    for (std::size_t k = 0; k < indices.size(); ++k) {
        if (indices[k] >= images.dim(0)) throw Error("sample index out of range");
        std::copy_n(images.data().begin() + indices[k] * per, per,
                    out.data().begin() + k * per);
    }
    return out;
}

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

std::uint32_t read_be32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw Error("truncated IDX file " + path);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void write_be32(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {
        static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
        static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw Error("cannot open IDX images file " + images_path);
    if (read_be32(img, images_path) != kIdxImagesMagic)
        throw Error("bad magic number in IDX images file " + images_path);
    const std::size_t n = read_be32(img, images_path);
    const std::size_t rows = read_be32(img, images_path);
    const std::size_t cols = read_be32(img, images_path);

    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw Error("cannot open IDX labels file " + labels_path);
    if (read_be32(lab, labels_path) != kIdxLabelsMagic)
        throw Error("bad magic number in IDX labels file " + labels_path);
    const std::size_t n_labels = read_be32(lab, labels_path);
    if (n != n_labels)
        throw Error("IDX image count " + std::to_string(n) + " does not match label count " +
                    std::to_string(n_labels));

    LabeledDataset ds;
    ds.images = Tensor({n, rows, cols, 1});
    std::vector<unsigned char> buf(rows * cols);
    for (std::size_t i = 0; i < n; ++i) {
        if (!img.read(reinterpret_cast<char*>(buf.data()), buf.size()))
            throw Error("truncated IDX file " + images_path);
        for (std::size_t p = 0; p < buf.size(); ++p)
            ds.images[i * buf.size() + p] = buf[p] / 255.0;
    }
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        char c;
        if (!lab.read(&c, 1)) throw Error("truncated IDX file " + labels_path);
        ds.labels[i] = static_cast<unsigned char>(c);
    }
    ds.class_count =
        n ? 1 + *std::max_element(ds.labels.begin(), ds.labels.end()) : 0;
    if (ds.class_count < 10 && ds.class_count > 0) ds.class_count = 10;
    return ds;
}

void write_idx(const LabeledDataset& ds, const std::string& images_path,
               const std::string& labels_path) {
    if (ds.images.rank() != 4 || ds.images.dim(3) != 1)
        throw Error("write_idx expects single-channel [N,H,W,1] images");
    std::ofstream img(images_path, std::ios::binary);
    if (!img) throw Error("cannot write " + images_path);
    write_be32(img, kIdxImagesMagic);
    write_be32(img, static_cast<std::uint32_t>(ds.images.dim(0)));
    write_be32(img, static_cast<std::uint32_t>(ds.images.dim(1)));
    write_be32(img, static_cast<std::uint32_t>(ds.images.dim(2)));
    for (double v : ds.images.data()) {
        const double c = std::clamp(v, 0.0, 1.0);
        img.put(static_cast<char>(std::lround(c * 255.0)));
    }
    std::ofstream lab(labels_path, std::ios::binary);
    if (!lab) throw Error("cannot write " + labels_path);
    write_be32(lab, kIdxLabelsMagic);
    write_be32(lab, static_cast<std::uint32_t>(ds.labels.size()));
    for (int l : ds.labels) lab.put(static_cast<char>(l));
}

LabeledDataset synth_gaussian_blobs(int classes, int samples_per_class, int dims,
                                    std::uint64_t seed, double separation,
                                    double sigma) {
    if (classes < 2) throw Error("synth_gaussian_blobs needs at least 2 classes");
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    // fixed random unit-ish directions for the class centers
    std::vector<std::vector<double>> centers(classes, std::vector<double>(dims));
    for (auto& c : centers) {
        double norm = 0.0;
        for (auto& v : c) {
            v = normal(gen);
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (auto& v : c) v = v / norm * separation;
    }

    const std::size_t n = std::size_t(classes) * samples_per_class;
    LabeledDataset ds;
    ds.class_count = classes;
    ds.images = Tensor({n, static_cast<std::size_t>(dims)});
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int cls = static_cast<int>(i % classes);
        ds.labels[i] = cls;
        for (int d = 0; d < dims; ++d)
            ds.images[i * dims + d] = centers[cls][d] + normal(gen) * sigma;
    }
    return ds;
}

namespace {

// 7x5 digit glyphs, row-major, one string per digit
const char* const kGlyphs[10][7] = {
    {"01110", "10001", "10011", "10101", "11001", "10001", "01110"},
    {"00100", "01100", "00100", "00100", "00100", "00100", "01110"},
    {"01110", "10001", "00001", "00010", "00100", "01000", "11111"},
    {"11111", "00010", "00100", "00010", "00001", "10001", "01110"},
    {"00010", "00110", "01010", "10010", "11111", "00010", "00010"},
    {"11111", "10000", "11110", "00001", "00001", "10001", "01110"},
    {"00110", "01000", "10000", "11110", "10001", "10001", "01110"},
    {"11111", "00001", "00010", "00100", "01000", "01000", "01000"},
    {"01110", "10001", "10001", "01110", "10001", "10001", "01110"},
    {"01110", "10001", "10001", "01111", "00001", "00010", "01100"},
};

double glyph_cell(int digit, int row, int col) {
    if (row < 0 || row >= 7 || col < 0 || col >= 5) return 0.0;
    return kGlyphs[digit][row][col] == '1' ? 1.0 : 0.0;
}

// bilinear sample of a glyph at continuous cell coordinates (centers at .5)
double glyph_sample(int digit, double u, double v) {
    const double ru = u - 0.5, rv = v - 0.5;
    const int r0 = static_cast<int>(std::floor(ru));
    const int c0 = static_cast<int>(std::floor(rv));
    const double fu = ru - r0, fv = rv - c0;
    return glyph_cell(digit, r0, c0) * (1 - fu) * (1 - fv) +
           glyph_cell(digit, r0 + 1, c0) * fu * (1 - fv) +
           glyph_cell(digit, r0, c0 + 1) * (1 - fu) * fv +
           glyph_cell(digit, r0 + 1, c0 + 1) * fu * fv;
}

}  // namespace

LabeledDataset synth_digits(int samples, std::uint64_t seed) {
    if (samples < 1) throw Error("synth_digits needs at least one sample");
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    constexpr std::size_t kSize = 28;
    LabeledDataset ds;
    ds.class_count = 10;
    ds.images = Tensor({static_cast<std::size_t>(samples), kSize, kSize, 1});
    ds.labels.resize(samples);

    for (int i = 0; i < samples; ++i) {
        const int digit = i % 10;
        ds.labels[i] = digit;
        const double scale = 2.4 + 0.8 * uni(gen);          // pixels per glyph cell
        const double theta = (uni(gen) - 0.5) * 0.36;       // +-0.18 rad
        const double cy = 14.0 + (uni(gen) - 0.5) * 5.0;
        const double cx = 14.0 + (uni(gen) - 0.5) * 5.0;
        const double contrast = 0.7 + 0.3 * uni(gen);
        const double ct = std::cos(theta), st = std::sin(theta);
        for (std::size_t py = 0; py < kSize; ++py)
            for (std::size_t px = 0; px < kSize; ++px) {
                const double dy = py + 0.5 - cy;
                const double dx = px + 0.5 - cx;
                const double gy = (ct * dy + st * dx) / scale + 3.5;
                const double gx = (-st * dy + ct * dx) / scale + 2.5;
                double v = glyph_sample(digit, gy, gx) * contrast;
                v += normal(gen) * 0.06;
                v = std::clamp(v, 0.0, 1.0);
                // byte-quantized so an IDX round trip is exact
                v = std::lround(v * 255.0) / 255.0;
                ds.images[(std::size_t(i) * kSize * kSize) + py * kSize + px] = v;
            }
    }
    return ds;
}

std::vector<std::size_t> subset_indices(std::size_t total, double fraction,
                                        std::uint64_t seed) {
    if (fraction <= 0.0 || fraction > 1.0)
        throw Error("subset fraction must be in (0,1]");
    std::size_t n = static_cast<std::size_t>(fraction * static_cast<double>(total));
    if (n == 0) throw Error("subset fraction yields zero samples");
    std::vector<std::size_t> perm(total);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 gen(seed);
    std::shuffle(perm.begin(), perm.end(), gen);
    perm.resize(n);
    return perm;
}

LabeledDataset subset_by_indices(const LabeledDataset& ds,
                                 const std::vector<std::size_t>& indices) {
    LabeledDataset out;
    out.class_count = ds.class_count;
    out.images = ds.gather(indices);
    out.labels.reserve(indices.size());
    for (std::size_t i : indices) out.labels.push_back(ds.labels.at(i));
    return out;
}

LabeledDataset subset(const LabeledDataset& ds, double fraction, std::uint64_t seed) {
    return subset_by_indices(ds, subset_indices(ds.size(), fraction, seed));
}

}  // namespace fixquant
