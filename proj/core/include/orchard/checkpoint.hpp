#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "orchard/resnet.hpp"

namespace orchard {

// Little-endian binary container of named float32 tensors.
// Layout: magic "ORCHCKPT", u32 version, metadata block (u32 num_classes,
// u32 input_size, u64 seed, u32 epochs_completed, f64 best_val_accuracy,
// u32 class-name count + length-prefixed names), u32 tensor count, then per
// tensor: u32 name length + bytes, u32 rank, u64 extents, f32 data.
struct CheckpointMeta {
    uint32_t num_classes = 0;
    uint32_t input_size = 224;
    uint64_t seed = 0;
    uint32_t epochs_completed = 0;
    double best_val_accuracy = -1.0;  // negative: no validation pass recorded
    std::vector<std::string> class_names;
};

inline constexpr char kCheckpointMagic[8] = {'O', 'R', 'C', 'H', 'C', 'K', 'P', 'T'};
inline constexpr uint32_t kCheckpointVersion = 1;

template <typename ScalarT>
void save_checkpoint(ResNet34<ScalarT>& model, const CheckpointMeta& meta,
                     const std::filesystem::path& path);

// Rebuilds the model recorded in the file. Every tensor in the file must
// match the architecture by name and shape, and vice versa.
template <typename ScalarT>
std::pair<ResNet34<ScalarT>, CheckpointMeta> load_checkpoint(const std::filesystem::path& path);

// Same, then swaps in a fresh head of `new_classes` outputs. This is the
// only sanctioned way to load a checkpoint whose head size differs from
// what the caller needs.
template <typename ScalarT>
std::pair<ResNet34<ScalarT>, CheckpointMeta> load_checkpoint_replace_head(
    const std::filesystem::path& path, size_t new_classes, uint64_t head_seed);

// Raw view for tooling/tests: tensors as stored, no model reconstruction.
struct RawTensorEntry {
    std::string name;
    Shape shape;
    std::vector<float> data;
};
struct RawCheckpoint {
    CheckpointMeta meta;
    std::vector<RawTensorEntry> tensors;
};
RawCheckpoint read_checkpoint_raw(const std::filesystem::path& path);

extern template void save_checkpoint<float>(ResNet34<float>&, const CheckpointMeta&,
                                            const std::filesystem::path&);
extern template void save_checkpoint<double>(ResNet34<double>&, const CheckpointMeta&,
                                             const std::filesystem::path&);

}  // namespace orchard
