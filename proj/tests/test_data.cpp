#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "fixquant/data.hpp"
#include "fixquant/fixedpoint.hpp"

using namespace fixquant;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("fixquant_data_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const char* name) const { return (path / name).string(); }
};

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

std::vector<unsigned char> be32(std::uint32_t v) {
    return {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
            static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
}

void append(std::vector<unsigned char>& dst, const std::vector<unsigned char>& src) {
    dst.insert(dst.end(), src.begin(), src.end());
}

}  // namespace

TEST_CASE("load_idx on a handcrafted one-image fixture") {
    TempDir dir;
    // 2x2 image, top-left pixel 255
    std::vector<unsigned char> img;
    append(img, be32(0x00000803));
    append(img, be32(1));
    append(img, be32(2));
    append(img, be32(2));
    img.insert(img.end(), {255, 0, 128, 0});
    std::vector<unsigned char> lab;
    append(lab, be32(0x00000801));
    append(lab, be32(1));
    lab.push_back(7);
    write_bytes(dir.file("img.idx"), img);
    write_bytes(dir.file("lab.idx"), lab);

    LabeledDataset ds = load_idx(dir.file("img.idx"), dir.file("lab.idx"));
    CHECK(ds.size() == 1);
    CHECK(ds.images.shape() == std::vector<std::size_t>{1, 2, 2, 1});
    CHECK(ds.images[0] == 1.0);  // 255 -> 1.0 exactly
    CHECK(ds.images[1] == 0.0);
    CHECK(ds.images[2] == 128.0 / 255.0);
    CHECK(ds.labels[0] == 7);
}

TEST_CASE("load_idx rejects malformed files") {
    TempDir dir;
    std::vector<unsigned char> img;
    append(img, be32(0x00000803));
    append(img, be32(1));
    append(img, be32(1));
    append(img, be32(1));
    img.push_back(10);
    write_bytes(dir.file("img.idx"), img);

    // labels file with the images magic
    std::vector<unsigned char> lab_badmagic;
    append(lab_badmagic, be32(0x00000803));
    append(lab_badmagic, be32(1));
    lab_badmagic.push_back(1);
    write_bytes(dir.file("lab_badmagic.idx"), lab_badmagic);
    CHECK_THROWS_AS(load_idx(dir.file("img.idx"), dir.file("lab_badmagic.idx")), Error);

    // count mismatch
    std::vector<unsigned char> lab2;
    append(lab2, be32(0x00000801));
    append(lab2, be32(2));
    lab2.insert(lab2.end(), {1, 2});
    write_bytes(dir.file("lab2.idx"), lab2);
    CHECK_THROWS_AS(load_idx(dir.file("img.idx"), dir.file("lab2.idx")), Error);

    // truncated image payload
    std::vector<unsigned char> img_short;
    append(img_short, be32(0x00000803));
    append(img_short, be32(2));
    append(img_short, be32(2));
    append(img_short, be32(2));
    img_short.insert(img_short.end(), {1, 2, 3});
    write_bytes(dir.file("img_short.idx"), img_short);
    std::vector<unsigned char> lab3;
    append(lab3, be32(0x00000801));
    append(lab3, be32(2));
    lab3.insert(lab3.end(), {1, 2});
    write_bytes(dir.file("lab3.idx"), lab3);
    CHECK_THROWS_AS(load_idx(dir.file("img_short.idx"), dir.file("lab3.idx")), Error);

    CHECK_THROWS_AS(load_idx(dir.file("nope.idx"), dir.file("lab3.idx")), Error);
}

TEST_CASE("IDX round trip reproduces synthetic digits exactly") {
    TempDir dir;
    LabeledDataset ds = synth_digits(50, 99);  // byte-quantized pixel values
    write_idx(ds, dir.file("img.idx"), dir.file("lab.idx"));
    LabeledDataset back = load_idx(dir.file("img.idx"), dir.file("lab.idx"));
    REQUIRE(back.size() == ds.size());
    REQUIRE(back.images.shape() == ds.images.shape());
    for (std::size_t i = 0; i < ds.images.size(); ++i)
        CHECK(back.images[i] == ds.images[i]);
    CHECK(back.labels == ds.labels);
}

TEST_CASE("synth_digits determinism and format") {
    LabeledDataset a = synth_digits(30, 7);
    LabeledDataset b = synth_digits(30, 7);
    LabeledDataset c = synth_digits(30, 8);
    CHECK(a.images.shape() == std::vector<std::size_t>{30, 28, 28, 1});
    CHECK(a.class_count == 10);
    bool same = true, diff = false;
    for (std::size_t i = 0; i < a.images.size(); ++i) {
        same = same && a.images[i] == b.images[i];
        diff = diff || a.images[i] != c.images[i];
    }
    CHECK(same);
    CHECK(diff);
    for (std::size_t i = 0; i < a.images.size(); ++i) {
        CHECK(a.images[i] >= 0.0);
        CHECK(a.images[i] <= 1.0);
    }
    for (int i = 0; i < 30; ++i) CHECK(a.labels[i] == i % 10);
}

TEST_CASE("synth_gaussian_blobs basic contract") {
    LabeledDataset ds = synth_gaussian_blobs(2, 100, 2, 1);
    CHECK(ds.size() == 200);
    CHECK(ds.class_count == 2);
    int count0 = 0;
    for (int l : ds.labels) count0 += (l == 0);
    CHECK(count0 == 100);

    LabeledDataset ds2 = synth_gaussian_blobs(2, 100, 2, 1);
    for (std::size_t i = 0; i < ds.images.size(); ++i)
        CHECK(ds.images[i] == ds2.images[i]);

    CHECK_THROWS_AS(synth_gaussian_blobs(1, 10, 2, 0), Error);
}

TEST_CASE("subset selection") {
    LabeledDataset ds = synth_digits(200, 3);

    LabeledDataset s = subset(ds, 0.01, 5);
    CHECK(s.size() == 2);

    LabeledDataset full = subset(ds, 1.0, 5);
    CHECK(full.size() == 200);
    std::multiset<int> a(ds.labels.begin(), ds.labels.end());
    std::multiset<int> b(full.labels.begin(), full.labels.end());
    CHECK(a == b);  // permutation of the full set

    // same seed, same subset; different seed, different subset (w.h.p.)
    auto i1 = subset_indices(200, 0.1, 9);
    auto i2 = subset_indices(200, 0.1, 9);
    auto i3 = subset_indices(200, 0.1, 10);
    CHECK(i1 == i2);
    CHECK(i1 != i3);

    CHECK_THROWS_AS(subset(ds, 0.001, 1), Error);  // zero samples
    CHECK_THROWS_AS(subset(ds, 0.0, 1), Error);
    CHECK_THROWS_AS(subset(ds, 1.5, 1), Error);
}

TEST_CASE("gather preserves order and validates indices") {
    LabeledDataset ds = synth_digits(10, 1);
    Tensor batch = ds.gather({3, 1});
    CHECK(batch.dim(0) == 2);
    Tensor s3 = ds.sample(3);
    for (std::size_t p = 0; p < 28 * 28; ++p) CHECK(batch[p] == s3[p]);
    CHECK_THROWS_AS(ds.gather({99}), Error);
}
