#include <doctest.h>

#include <cstring>
#include <fstream>

#include "helpers.hpp"
#include "orchard/checkpoint.hpp"

using namespace orchard;
using testutil::TempDir;

namespace {

ModelSpec small_spec(size_t classes = 6) {
    ModelSpec spec;
    spec.stage_block_counts = {1, 1, 1, 1};
    spec.stage_channels = {8, 16, 32, 64};
    spec.num_classes = classes;
    spec.input_size = 32;
    return spec;
}

template <typename S>
bool bits_equal(const Tensor<S>& a, const Tensor<S>& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.values().data(), b.values().data(), a.numel() * sizeof(S)) == 0;
}

}  // namespace

TEST_CASE("save then load round-trips every tensor bit-exactly") {
    TempDir dir("ckpt_roundtrip");
    auto model = ResNet34<float>::build(small_spec(), 42);

    CheckpointMeta meta;
    meta.seed = 42;
    meta.epochs_completed = 7;
    meta.best_val_accuracy = 88.25;
    meta.class_names = {"a", "b", "c", "d", "e", "f"};
    const auto path = dir.path() / "model.ckpt";
    save_checkpoint(model, meta, path);

    auto [loaded, got] = load_checkpoint<float>(path);
    CHECK(got.seed == 42);
    CHECK(got.epochs_completed == 7);
    CHECK(got.best_val_accuracy == 88.25);
    CHECK(got.num_classes == 6);
    CHECK(got.input_size == 32);
    CHECK(got.class_names == meta.class_names);

    auto a = model.named_tensors();
    auto b = loaded.named_tensors();
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].name == b[i].name);
        CHECK(bits_equal(a[i].tensor, b[i].tensor));
    }
}

TEST_CASE("truncated files fail cleanly with a format error") {
    TempDir dir("ckpt_truncate");
    auto model = ResNet34<float>::build(small_spec(), 1);
    const auto path = dir.path() / "model.ckpt";
    save_checkpoint(model, CheckpointMeta{}, path);

    auto size = std::filesystem::file_size(path);
    for (auto keep : {size / 2, size - 5, size_t{10}}) {
        std::string bytes(keep, '\0');
        {
            std::ifstream in(path, std::ios::binary);
            in.read(bytes.data(), static_cast<std::streamsize>(keep));
        }
        const auto cut = dir.path() / "cut.ckpt";
        std::ofstream(cut, std::ios::binary).write(bytes.data(), bytes.size());
        CHECK_THROWS_AS(load_checkpoint<float>(cut), FormatError);
    }
}

TEST_CASE("bad magic and bad version are format errors") {
    TempDir dir("ckpt_magic");
    const auto path = dir.path() / "bogus.ckpt";
    std::ofstream(path, std::ios::binary) << "NOTACKPTxxxxyyyy";
    CHECK_THROWS_AS(load_checkpoint<float>(path), FormatError);

    auto model = ResNet34<float>::build(small_spec(), 1);
    const auto good = dir.path() / "good.ckpt";
    save_checkpoint(model, CheckpointMeta{}, good);
    // bump the version field (bytes 8..11)
    std::fstream patch(good, std::ios::binary | std::ios::in | std::ios::out);
    patch.seekp(8);
    uint32_t v = 999;
    patch.write(reinterpret_cast<const char*>(&v), 4);
    patch.close();
    CHECK_THROWS_WITH_AS(load_checkpoint<float>(good), doctest::Contains("version"),
                         FormatError);
}

TEST_CASE("a metadata/tensor shape clash names the offending tensor") {
    TempDir dir("ckpt_clash");
    auto model = ResNet34<float>::build(small_spec(6), 1);
    const auto path = dir.path() / "model.ckpt";
    save_checkpoint(model, CheckpointMeta{}, path);

    // claim 7 classes in the metadata while head tensors stay 6-way
    std::fstream patch(path, std::ios::binary | std::ios::in | std::ios::out);
    patch.seekp(12);
    uint32_t classes = 7;
    patch.write(reinterpret_cast<const char*>(&classes), 4);
    patch.close();

    CHECK_THROWS_WITH_AS(load_checkpoint<float>(path), doctest::Contains("head.weight"),
                         IncompatibilityError);
}

TEST_CASE("loading with head replacement keeps the backbone identical to the file") {
    TempDir dir("ckpt_head");
    auto donor = ResNet34<float>::build(small_spec(1000), 5);
    const auto path = dir.path() / "imagenet.ckpt";
    CheckpointMeta meta;
    meta.class_names = {};
    save_checkpoint(donor, meta, path);

    // without the explicit request, the thousand-way head stays
    auto [plain, m1] = load_checkpoint<float>(path);
    CHECK(plain.num_classes() == 1000);

    auto [swapped, m2] = load_checkpoint_replace_head<float>(path, 6, 77);
    CHECK(swapped.num_classes() == 6);
    CHECK(swapped.head_weight().shape() == Shape{6, 64});
    CHECK(m2.num_classes == 6);

    auto want = donor.named_tensors();
    auto got = swapped.named_tensors();
    REQUIRE(want.size() == got.size());
    for (size_t i = 0; i < want.size(); ++i) {
        if (want[i].name == "head.weight" || want[i].name == "head.bias") continue;
        CHECK(bits_equal(want[i].tensor, got[i].tensor));
    }
}

TEST_CASE("raw reads expose the stored tensor list in order") {
    TempDir dir("ckpt_raw");
    auto model = ResNet34<float>::build(small_spec(), 3);
    const auto path = dir.path() / "model.ckpt";
    save_checkpoint(model, CheckpointMeta{}, path);

    auto raw = read_checkpoint_raw(path);
    auto names = model.named_tensors();
    REQUIRE(raw.tensors.size() == names.size());
    CHECK(raw.tensors.front().name == "stem.conv.weight");
    CHECK(raw.tensors.back().name == "head.bias");
    for (size_t i = 0; i < names.size(); ++i) {
        CHECK(raw.tensors[i].name == names[i].name);
        CHECK(raw.tensors[i].shape == names[i].tensor.shape());
    }
}
