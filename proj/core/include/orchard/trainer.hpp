#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "orchard/checkpoint.hpp"
#include "orchard/dataset.hpp"
#include "orchard/metrics.hpp"
#include "orchard/resnet.hpp"

namespace orchard {

enum class Precision { F32, F64 };

struct TrainConfig {
    double learning_rate = 0.001;
    size_t batch_size = 8;
    size_t max_epochs = 100;
    uint64_t seed = 42;
    bool freeze_backbone = false;
    size_t checkpoint_every = 0;  // 0: only best + final
    Precision precision = Precision::F32;
    double momentum = 0.0;      // plain SGD by default
    double weight_decay = 0.0;  // off by default
    std::optional<AugmentConfig> augment;

    void validate() const;
};

struct EpochLog {
    size_t epoch = 0;  // 1-based in logs
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;  // percent
    double wall_seconds = 0.0;
};

void write_epoch_log_csv(const std::vector<EpochLog>& logs, const std::filesystem::path& path);
std::vector<EpochLog> read_epoch_log_csv(const std::filesystem::path& path);

// Momentum buffers keyed by parameter order; empty while momentum is 0.
template <typename ScalarT>
struct SgdState {
    std::vector<std::vector<ScalarT>> velocity;
};

// w <- w - lr * (g + weight_decay * w), with optional heavy-ball momentum.
// Every tensor in `params` must carry a grad; grads are cleared afterwards.
template <typename ScalarT>
void sgd_step(std::vector<NamedTensor<ScalarT>>& params, double learning_rate,
              double momentum = 0.0, double weight_decay = 0.0,
              SgdState<ScalarT>* state = nullptr);

struct EvalResult {
    ConfusionMatrix confusion;
    double mean_loss = 0.0;

    double accuracy_percent() const;
};

// Eval-mode pass over one split: no shuffling, no augmentation, no graph,
// no mutation of weights or running statistics. Prediction is the argmax
// of the logits, lowest index on exact ties.
template <typename ScalarT>
EvalResult evaluate(ResNet34<ScalarT>& model, const DatasetManifest& manifest, Split split,
                    size_t batch_size = 8);

struct TrainResult {
    std::vector<EpochLog> logs;
    std::filesystem::path best_checkpoint;
    std::filesystem::path final_checkpoint;
    std::filesystem::path epoch_log_csv;
    double best_val_accuracy = -1.0;  // percent; negative until first epoch
};

// Continue a run from a loaded checkpoint: epochs already done plus the
// best validation accuracy reached so far (so best-checkpoint selection
// resumes exactly).
struct ResumeState {
    size_t start_epoch = 0;
    double best_val_accuracy = -1.0;
};

// Called after each epoch; return false to stop early (counts as success).
template <typename ScalarT>
using EpochCallback = std::function<bool(const EpochLog&, ResNet34<ScalarT>&)>;

// One SGD fine-tuning run: per epoch a shuffled, optionally augmented pass
// over the train split, then a full eval-mode validation pass. Writes
// best.ckpt on validation-accuracy improvement, final.ckpt at the end and
// epoch_log.csv as it goes. Deterministic for fixed (seed, data): resumed
// runs reproduce straight runs bit-exactly (with default momentum 0).
template <typename ScalarT>
TrainResult train(ResNet34<ScalarT>& model, const DatasetManifest& manifest,
                  const TrainConfig& config, const std::filesystem::path& out_dir,
                  const ResumeState& resume = {},
                  const EpochCallback<ScalarT>& on_epoch = nullptr);

extern template void sgd_step<float>(std::vector<NamedTensor<float>>&, double, double, double,
                                     SgdState<float>*);
extern template void sgd_step<double>(std::vector<NamedTensor<double>>&, double, double, double,
                                      SgdState<double>*);
extern template EvalResult evaluate<float>(ResNet34<float>&, const DatasetManifest&, Split,
                                           size_t);
extern template EvalResult evaluate<double>(ResNet34<double>&, const DatasetManifest&, Split,
                                            size_t);
extern template TrainResult train<float>(ResNet34<float>&, const DatasetManifest&,
                                         const TrainConfig&, const std::filesystem::path&,
                                         const ResumeState&, const EpochCallback<float>&);
extern template TrainResult train<double>(ResNet34<double>&, const DatasetManifest&,
                                          const TrainConfig&, const std::filesystem::path&,
                                          const ResumeState&, const EpochCallback<double>&);

}  // namespace orchard
