#include "orchard/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "orchard/ops.hpp"

namespace orchard {

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (max_epochs < 1) throw ValidationError("max_epochs must be >= 1");
    if (momentum < 0.0 || momentum >= 1.0) throw ValidationError("momentum must lie in [0,1)");
    if (weight_decay < 0.0) throw ValidationError("weight_decay must be >= 0");
    if (augment) augment->validate();
}

void write_epoch_log_csv(const std::vector<EpochLog>& logs, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot open epoch log for writing: " + path.string());
    out << "epoch,train_loss,val_loss,val_accuracy,wall_seconds\n";
    out.precision(17);
    for (const auto& log : logs) {
        out << log.epoch << ',' << log.train_loss << ',' << log.val_loss << ','
            << log.val_accuracy << ',' << log.wall_seconds << '\n';
    }
    if (!out) throw FormatError("failed writing epoch log: " + path.string());
}

std::vector<EpochLog> read_epoch_log_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open epoch log: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw FormatError("empty epoch log: " + path.string());
    std::vector<EpochLog> logs;
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        EpochLog log;
        if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf,%lf", &log.epoch, &log.train_loss,
                        &log.val_loss, &log.val_accuracy, &log.wall_seconds) != 5) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) +
                              ": malformed epoch log row");
        }
        logs.push_back(log);
    }
    return logs;
}

template <typename S>
void sgd_step(std::vector<NamedTensor<S>>& params, double learning_rate, double momentum,
              double weight_decay, SgdState<S>* state) {
    const S lr = static_cast<S>(learning_rate);
    const S mom = static_cast<S>(momentum);
    const S wd = static_cast<S>(weight_decay);
    const bool use_momentum = momentum != 0.0;
    if (use_momentum) {
        if (!state) throw UsageError("sgd_step: momentum requires an SgdState");
        if (state->velocity.empty()) state->velocity.resize(params.size());
        if (state->velocity.size() != params.size()) {
            throw UsageError("sgd_step: SgdState does not match the parameter list");
        }
    }

    for (size_t i = 0; i < params.size(); ++i) {
        auto& t = params[i].tensor;
        if (!t.has_grad()) {
            throw TrainingError("sgd_step: trainable tensor '" + params[i].name +
                                "' has no gradient (broken graph)");
        }
        auto w = t.mutable_values();
        auto g = t.grad();
        if (use_momentum) {
            auto& v = state->velocity[i];
            if (v.size() != w.size()) v.assign(w.size(), S{0});
            for (size_t j = 0; j < w.size(); ++j) {
                const S grad = g[j] + wd * w[j];
                v[j] = mom * v[j] + grad;
                w[j] -= lr * v[j];
            }
        } else if (wd != S{0}) {
            for (size_t j = 0; j < w.size(); ++j) w[j] -= lr * (g[j] + wd * w[j]);
        } else {
            for (size_t j = 0; j < w.size(); ++j) w[j] -= lr * g[j];
        }
        t.clear_grad();
    }
}

double EvalResult::accuracy_percent() const {
    const uint64_t total = confusion.total();
    if (total == 0) return 0.0;
    return 100.0 * static_cast<double>(confusion.trace()) / static_cast<double>(total);
}

namespace {

template <typename S>
std::vector<int> argmax_rows(const Tensor<S>& logits) {
    const size_t n = logits.extent(0), k = logits.extent(1);
    auto v = logits.values();
    std::vector<int> out(n);
    for (size_t i = 0; i < n; ++i) {
        size_t best = 0;
        for (size_t j = 1; j < k; ++j) {
            if (v[i * k + j] > v[i * k + best]) best = j;  // ties keep the lowest index
        }
        out[i] = static_cast<int>(best);
    }
    return out;
}

template <typename S>
Tensor<S> batch_images(const Batch& batch) {
    if constexpr (std::is_same_v<S, float>) {
        return batch.images;
    } else {
        return cast_tensor<S>(batch.images);
    }
}

}  // namespace

template <typename S>
EvalResult evaluate(ResNet34<S>& model, const DatasetManifest& manifest, Split split,
                    size_t batch_size) {
    if (manifest.classes.size() != model.num_classes()) {
        throw ValidationError("model has " + std::to_string(model.num_classes()) +
                              " classes but the manifest lists " +
                              std::to_string(manifest.classes.size()));
    }
    NoGradGuard no_grad;

    BatchIterator::Options opts;
    opts.batch_size = batch_size;
    opts.image_size = model.spec().input_size;
    BatchIterator it(manifest, split, opts);
    it.start_epoch(0);

    EvalResult result;
    result.confusion = ConfusionMatrix::zeros(manifest.classes);
    double loss_sum = 0.0;
    size_t seen = 0;

    while (auto batch = it.next()) {
        auto images = batch_images<S>(*batch);
        auto logits = model.forward(images, RunMode::Eval);
        auto loss = softmax_cross_entropy(logits, batch->labels);
        loss_sum += static_cast<double>(loss.item()) * static_cast<double>(batch->labels.size());
        seen += batch->labels.size();
        auto predicted = argmax_rows(logits);
        for (size_t i = 0; i < predicted.size(); ++i) {
            result.confusion.counts[static_cast<size_t>(batch->labels[i])]
                                   [static_cast<size_t>(predicted[i])] += 1;
        }
    }
    result.mean_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
    return result;
}

template <typename S>
TrainResult train(ResNet34<S>& model, const DatasetManifest& manifest, const TrainConfig& config,
                  const std::filesystem::path& out_dir, const ResumeState& resume,
                  const EpochCallback<S>& on_epoch) {
    config.validate();
    manifest.validate();
    if (manifest.count(Split::Train) == 0 || manifest.count(Split::Val) == 0) {
        throw ValidationError("training needs both train and val records in the manifest");
    }
    if (manifest.classes.size() != model.num_classes()) {
        throw ValidationError("model has " + std::to_string(model.num_classes()) +
                              " classes but the manifest lists " +
                              std::to_string(manifest.classes.size()));
    }
    if (resume.start_epoch >= config.max_epochs) {
        throw ValidationError("resume epoch " + std::to_string(resume.start_epoch) +
                              " is not before max_epochs " + std::to_string(config.max_epochs));
    }
    std::filesystem::create_directories(out_dir);

    // freezing the backbone also freezes its batchnorm statistics, so the
    // whole forward pass runs with eval-mode normalization
    const RunMode train_mode = config.freeze_backbone ? RunMode::Eval : RunMode::Train;
    auto trainable = model.trainable_parameters();
    if (config.freeze_backbone) {
        std::vector<NamedTensor<S>> head_only;
        for (auto& nt : trainable) {
            if (nt.name.rfind("head.", 0) == 0) {
                head_only.push_back(nt);
            } else {
                nt.tensor.set_requires_grad(false);  // keep the graph off frozen weights
            }
        }
        trainable = std::move(head_only);
    }

    BatchIterator::Options train_opts;
    train_opts.batch_size = config.batch_size;
    train_opts.image_size = model.spec().input_size;
    train_opts.shuffle = true;
    train_opts.shuffle_seed = config.seed;
    train_opts.augment = config.augment;
    if (train_opts.augment && train_opts.augment->seed == 0) {
        train_opts.augment->seed = mix_seed(config.seed, 0xa06);
    }
    BatchIterator train_it(manifest, Split::Train, train_opts);

    TrainResult result;
    result.best_val_accuracy = resume.best_val_accuracy;
    result.best_checkpoint = out_dir / "best.ckpt";
    result.final_checkpoint = out_dir / "final.ckpt";
    result.epoch_log_csv = out_dir / "epoch_log.csv";
    SgdState<S> sgd_state;

    CheckpointMeta meta;
    meta.seed = config.seed;
    meta.class_names = manifest.classes;

    for (size_t epoch = resume.start_epoch; epoch < config.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();

        train_it.start_epoch(epoch);
        double train_loss_sum = 0.0;
        size_t train_seen = 0;
        size_t batch_index = 0;
        while (auto batch = train_it.next()) {
            auto images = batch_images<S>(*batch);
            Tensor<S> loss;
            try {
                auto logits = model.forward(images, train_mode);
                loss = softmax_cross_entropy(logits, batch->labels);
            } catch (const NumericError& e) {
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch + 1) +
                                    ", batch " + std::to_string(batch_index + 1) + ": " +
                                    e.what());
            }
            train_loss_sum +=
                static_cast<double>(loss.item()) * static_cast<double>(batch->labels.size());
            train_seen += batch->labels.size();
            backward(loss);
            sgd_step(trainable, config.learning_rate, config.momentum, config.weight_decay,
                     &sgd_state);
            ++batch_index;
        }

        auto val = evaluate(model, manifest, Split::Val, config.batch_size);

        EpochLog log;
        log.epoch = epoch + 1;
        log.train_loss = train_seen ? train_loss_sum / static_cast<double>(train_seen) : 0.0;
        log.val_loss = val.mean_loss;
        log.val_accuracy = val.accuracy_percent();
        log.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.logs.push_back(log);
        write_epoch_log_csv(result.logs, result.epoch_log_csv);

        meta.epochs_completed = static_cast<uint32_t>(epoch + 1);
        if (log.val_accuracy > result.best_val_accuracy) {
            result.best_val_accuracy = log.val_accuracy;
            meta.best_val_accuracy = result.best_val_accuracy;
            save_checkpoint(model, meta, result.best_checkpoint);
        }
        meta.best_val_accuracy = result.best_val_accuracy;
        if (config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0) {
            char name[32];
            std::snprintf(name, sizeof(name), "epoch_%04zu.ckpt", epoch + 1);
            save_checkpoint(model, meta, out_dir / name);
        }

        if (on_epoch && !on_epoch(log, model)) break;
    }

    save_checkpoint(model, meta, result.final_checkpoint);
    if (config.freeze_backbone) {
        for (auto& nt : model.trainable_parameters()) nt.tensor.set_requires_grad(true);
    }
    return result;
}

template void sgd_step<float>(std::vector<NamedTensor<float>>&, double, double, double,
                              SgdState<float>*);
template void sgd_step<double>(std::vector<NamedTensor<double>>&, double, double, double,
                               SgdState<double>*);
template EvalResult evaluate<float>(ResNet34<float>&, const DatasetManifest&, Split, size_t);
template EvalResult evaluate<double>(ResNet34<double>&, const DatasetManifest&, Split, size_t);
template TrainResult train<float>(ResNet34<float>&, const DatasetManifest&, const TrainConfig&,
                                  const std::filesystem::path&, const ResumeState&,
                                  const EpochCallback<float>&);
template TrainResult train<double>(ResNet34<double>&, const DatasetManifest&, const TrainConfig&,
                                   const std::filesystem::path&, const ResumeState&,
                                   const EpochCallback<double>&);

}  // namespace orchard
