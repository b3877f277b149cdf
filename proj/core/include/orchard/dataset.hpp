#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "orchard/augment.hpp"
#include "orchard/tensor.hpp"

namespace orchard {

enum class Split { Train, Val };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

// Fixed index order for the six-class leaf corpus. Directories holding
// exactly these class names adopt this order; anything else is sorted
// lexicographically.
inline constexpr std::array<const char*, 6> kLeafClasses = {
    "Scab", "Alternaria", "AppleMosaic", "MLB", "PowderyMildew", "Healthy"};

struct SampleRecord {
    std::string path;
    int label = 0;  // index into DatasetManifest::classes
    Split split = Split::Train;
};

struct DatasetManifest {
    std::vector<std::string> classes;
    uint64_t seed = 0;
    double ratio = 0.7;
    std::vector<SampleRecord> records;

    size_t count(Split split) const;
    size_t count(Split split, int label) const;
    size_t class_count(int label) const;
    void validate() const;
};

struct LabeledPath {
    std::string path;
    std::string class_name;
};

// One subdirectory per class; every regular file inside is a sample.
// Deterministic: classes and files are visited in sorted order.
std::vector<LabeledPath> scan_class_directories(const std::filesystem::path& root);

// Stratified split: per class, a seeded shuffle assigns the first
// floor(ratio * class_size) samples to train and the remainder to val.
DatasetManifest split_dataset(const std::vector<LabeledPath>& samples, double ratio,
                              uint64_t seed);

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

struct Batch {
    Tensor<float> images;           // [B,3,S,S]
    std::vector<int> labels;        // [B]
    std::vector<size_t> record_ids;  // manifest indices, for diagnostics
};

// One epoch visits every record of the split exactly once, final partial
// batch included. Shuffling draws a fresh seeded permutation per epoch;
// augmentation randomness is derived per (seed, epoch, record), so batch
// contents do not depend on assembly order.
class BatchIterator {
public:
    struct Options {
        size_t batch_size = 8;
        size_t image_size = 224;
        bool shuffle = false;
        uint64_t shuffle_seed = 0;
        std::optional<AugmentConfig> augment;
        bool skip_unreadable = false;  // default: abort on I/O failure
    };

    BatchIterator(const DatasetManifest& manifest, Split split, Options options);

    void start_epoch(size_t epoch);
    std::optional<Batch> next();

    size_t size() const { return indices_.size(); }

private:
    const DatasetManifest* manifest_;
    Options options_;
    std::vector<size_t> indices_;  // manifest indices belonging to the split
    std::vector<size_t> order_;    // per-epoch permutation of indices_
    size_t cursor_ = 0;
    size_t epoch_ = 0;
};

}  // namespace orchard
