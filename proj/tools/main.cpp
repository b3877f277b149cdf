// orchard: leaf-disease classification pipeline.
// Subcommands: split, train, eval, predict, metrics.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "orchard/checkpoint.hpp"
#include "orchard/dataset.hpp"
#include "orchard/image.hpp"
#include "orchard/metrics.hpp"
#include "orchard/ops.hpp"
#include "orchard/resnet.hpp"
#include "orchard/run_config.hpp"
#include "orchard/trainer.hpp"

namespace fs = std::filesystem;
using namespace orchard;

namespace {

int cmd_split(const std::string& data_dir, double ratio, uint64_t seed,
              const std::string& out_path) {
    auto samples = scan_class_directories(data_dir);
    auto manifest = split_dataset(samples, ratio, seed);
    write_manifest(manifest, out_path);

    std::cout << "seed = " << seed << "\nratio = " << ratio << "\n\n";
    size_t name_w = 5;
    for (const auto& c : manifest.classes) name_w = std::max(name_w, c.size());
    std::cout << std::left << std::setw(static_cast<int>(name_w + 2)) << "Class" << std::right
              << std::setw(8) << "Total" << std::setw(8) << "Train" << std::setw(8) << "Val"
              << "\n";
    size_t total = 0, train_total = 0, val_total = 0;
    for (size_t k = 0; k < manifest.classes.size(); ++k) {
        const size_t n = manifest.class_count(static_cast<int>(k));
        const size_t tr = manifest.count(Split::Train, static_cast<int>(k));
        const size_t va = manifest.count(Split::Val, static_cast<int>(k));
        total += n;
        train_total += tr;
        val_total += va;
        std::cout << std::left << std::setw(static_cast<int>(name_w + 2)) << manifest.classes[k]
                  << std::right << std::setw(8) << n << std::setw(8) << tr << std::setw(8) << va
                  << "\n";
    }
    std::cout << std::left << std::setw(static_cast<int>(name_w + 2)) << "Total" << std::right
              << std::setw(8) << total << std::setw(8) << train_total << std::setw(8) << val_total
              << "\n";
    std::cout << "\nmanifest written to " << out_path << "\n";
    return 0;
}

struct TrainCliArgs {
    std::string manifest_path;
    std::string out_dir;
    std::string config_path;
    std::string pretrained;
    std::optional<size_t> classes;
    bool resume = false;
};

template <typename S>
int run_train(const TrainCliArgs& args, const RunConfig& run_config,
              const DatasetManifest& manifest) {
    const TrainConfig config = run_config.resolved_train_config();
    const size_t target_classes = manifest.classes.size();

    ResNet34<S> model;
    ResumeState resume;

    if (args.resume) {
        const fs::path ckpt = fs::path(args.out_dir) / "final.ckpt";
        auto [m, meta] = load_checkpoint<S>(ckpt);
        if (meta.num_classes != target_classes) {
            throw ValidationError("checkpoint at " + ckpt.string() + " has " +
                                  std::to_string(meta.num_classes) +
                                  " classes but the manifest lists " +
                                  std::to_string(target_classes));
        }
        model = std::move(m);
        resume.start_epoch = meta.epochs_completed;
        resume.best_val_accuracy = meta.best_val_accuracy;
        std::cout << "resuming after epoch " << resume.start_epoch << "\n";
    } else if (!args.pretrained.empty()) {
        RawCheckpoint raw = read_checkpoint_raw(args.pretrained);
        if (raw.meta.num_classes == target_classes) {
            auto [m, meta] = load_checkpoint<S>(args.pretrained);
            model = std::move(m);
        } else if (args.classes && *args.classes == target_classes) {
            auto [m, meta] = load_checkpoint_replace_head<S>(
                args.pretrained, target_classes, run_config.checkpoint_head_seed
                                                     ? run_config.checkpoint_head_seed
                                                     : config.seed);
            model = std::move(m);
            std::cout << "replaced " << raw.meta.num_classes << "-way head with "
                      << target_classes << "-way head\n";
        } else {
            throw ValidationError(
                "pretrained checkpoint has " + std::to_string(raw.meta.num_classes) +
                " classes but the manifest lists " + std::to_string(target_classes) +
                "; pass --classes " + std::to_string(target_classes) +
                " to replace the head");
        }
    } else {
        ModelSpec spec;
        spec.num_classes = target_classes;
        spec.input_size = run_config.image_size;
        model = ResNet34<S>::build(spec, config.seed);
    }

    std::cout << "effective configuration:\n" << run_config.describe();
    std::cout << "model: " << model.spec().weighted_layer_count() << " weighted layers, "
              << model.parameter_count() << " parameters, input "
              << model.spec().input_size << "x" << model.spec().input_size << "\n\n";

    auto result = train(model, manifest, config, args.out_dir, resume);

    if (!result.logs.empty()) {
        const auto& last = result.logs.back();
        std::cout << "finished at epoch " << last.epoch << ": train loss " << last.train_loss
                  << ", val loss " << last.val_loss << ", val accuracy " << last.val_accuracy
                  << "%\n";
    }
    std::cout << "best val accuracy " << result.best_val_accuracy << "%\n"
              << "checkpoints: " << result.best_checkpoint << ", " << result.final_checkpoint
              << "\nepoch log: " << result.epoch_log_csv << "\n";
    return 0;
}

int cmd_train(const TrainCliArgs& args, RunConfig& run_config) {
    auto manifest = read_manifest(args.manifest_path);
    if (run_config.train.precision == Precision::F64) {
        return run_train<double>(args, run_config, manifest);
    }
    return run_train<float>(args, run_config, manifest);
}

int cmd_eval(const std::string& manifest_path, const std::string& split_tag,
             const std::string& checkpoint_path, const std::string& out_dir,
             size_t batch_size) {
    auto manifest = read_manifest(manifest_path);
    auto [model, meta] = load_checkpoint<float>(checkpoint_path);
    const Split split = split_from_name(split_tag);

    auto result = evaluate(model, manifest, split, batch_size);
    auto report = compute_report(result.confusion);

    fs::create_directories(out_dir);
    const fs::path cm_path = fs::path(out_dir) / "cm.csv";
    const fs::path txt_path = fs::path(out_dir) / "report.txt";
    const fs::path json_path = fs::path(out_dir) / "report.json";

    {
        std::ofstream out(cm_path);
        write_cm_csv(result.confusion, out);
    }
    const std::string text = render_report_text(report);
    {
        std::ofstream out(txt_path);
        out << text;
    }
    {
        std::ofstream out(json_path);
        out << report_to_json(report).dump(2) << "\n";
    }

    std::cout << "split = " << split_tag << ", samples = " << result.confusion.total()
              << ", mean loss = " << result.mean_loss << "\n\n"
              << text << "\nwrote " << cm_path << ", " << txt_path << ", " << json_path << "\n";
    return 0;
}

int cmd_predict(const std::string& checkpoint_path, const std::vector<std::string>& images) {
    auto [model, meta] = load_checkpoint<float>(checkpoint_path);
    std::vector<std::string> class_names = meta.class_names;
    if (class_names.size() != model.num_classes()) {
        class_names.clear();
        for (size_t k = 0; k < model.num_classes(); ++k) {
            class_names.push_back("class_" + std::to_string(k));
        }
    }

    NoGradGuard no_grad;
    size_t failures = 0;
    for (const auto& path : images) {
        Tensor<float> img;
        try {
            img = load_and_resize(path, model.spec().input_size);
        } catch (const IngestionError& e) {
            std::cerr << "error: " << e.what() << "\n";
            ++failures;
            continue;
        }
        auto v = img.values();
        std::vector<float> data(v.begin(), v.end());
        Tensor<float> batch(Shape{1, 3, model.spec().input_size, model.spec().input_size},
                            std::move(data));
        auto probs = softmax(model.forward(batch, RunMode::Eval));
        auto p = probs.values();

        size_t best = 0;
        for (size_t k = 1; k < p.size(); ++k) {
            if (p[k] > p[best]) best = k;
        }
        std::cout << path << ": " << class_names[best] << " (p=" << std::fixed
                  << std::setprecision(4) << p[best] << ")\n";
        for (size_t k = 0; k < p.size(); ++k) {
            std::cout << "    " << std::left << std::setw(16) << class_names[k] << std::right
                      << std::fixed << std::setprecision(4) << p[k] << "\n";
        }
    }
    return failures == images.size() ? 1 : 0;
}

int cmd_metrics(const std::string& cm_path, const std::string& json_out,
                const std::string& text_out) {
    auto cm = parse_cm_csv_file(cm_path);
    auto report = compute_report(cm);
    const std::string text = render_report_text(report);
    std::cout << text;
    if (!text_out.empty()) {
        std::ofstream out(text_out);
        if (!out) throw FormatError("cannot open " + text_out + " for writing");
        out << text;
    }
    if (!json_out.empty()) {
        std::ofstream out(json_out);
        if (!out) throw FormatError("cannot open " + json_out + " for writing");
        out << report_to_json(report).dump(2) << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"orchard: six-class leaf-disease classification pipeline"};
    app.require_subcommand(1);

    // split
    auto* split_cmd = app.add_subcommand("split", "Scan a class-per-directory dataset and "
                                                  "write a stratified train/val manifest");
    std::string split_data_dir, split_out;
    double split_ratio = 0.7;
    uint64_t split_seed = 42;
    split_cmd->add_option("--data-dir", split_data_dir, "Dataset root, one subdirectory per class")
        ->required();
    split_cmd->add_option("--ratio", split_ratio, "Train fraction (default 0.7)");
    split_cmd->add_option("--seed", split_seed, "Shuffle seed (default 42)");
    split_cmd->add_option("--out", split_out, "Manifest output path")->required();

    // train
    auto* train_cmd = app.add_subcommand("train", "Fine-tune the classifier on a manifest");
    TrainCliArgs train_args;
    RunConfig run_config;
    uint64_t flag_seed = 0;
    double flag_lr = 0, flag_momentum = -1, flag_weight_decay = -1;
    size_t flag_batch = 0, flag_epochs = 0, flag_image_size = 0, flag_checkpoint_every = 0;
    std::string flag_precision;
    bool flag_freeze = false, flag_augment = false;
    size_t flag_classes = 0;
    train_cmd->add_option("--manifest", train_args.manifest_path, "Dataset manifest")->required();
    train_cmd->add_option("--out", train_args.out_dir, "Output directory")->required();
    train_cmd->add_option("--config", train_args.config_path, "key = value run config file");
    train_cmd->add_option("--pretrained", train_args.pretrained, "Checkpoint to start from");
    train_cmd->add_option("--classes", flag_classes,
                          "Replace the pretrained head with this many classes");
    train_cmd->add_flag("--resume", train_args.resume,
                        "Continue from <out>/final.ckpt up to max_epochs");
    train_cmd->add_option("--lr", flag_lr, "Learning rate (default 0.001)");
    train_cmd->add_option("--batch-size", flag_batch, "Batch size (default 8)");
    train_cmd->add_option("--epochs", flag_epochs, "Epoch count (default 100)");
    train_cmd->add_option("--seed", flag_seed, "Run seed (default 42)");
    train_cmd->add_flag("--freeze-backbone", flag_freeze, "Train only the head");
    train_cmd->add_option("--momentum", flag_momentum, "SGD momentum (default 0)");
    train_cmd->add_option("--weight-decay", flag_weight_decay, "L2 penalty (default 0)");
    train_cmd->add_option("--precision", flag_precision, "f32 (default) or f64");
    train_cmd->add_option("--image-size", flag_image_size, "Model input size (default 224)");
    train_cmd->add_option("--checkpoint-every", flag_checkpoint_every,
                          "Also checkpoint every N epochs");
    train_cmd->add_flag("--augment", flag_augment, "Enable train-split augmentation");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest split");
    std::string eval_manifest, eval_split = "val", eval_ckpt, eval_out = ".";
    size_t eval_batch = 8;
    eval_cmd->add_option("--manifest", eval_manifest, "Dataset manifest")->required();
    eval_cmd->add_option("--split", eval_split, "train or val (default val)");
    eval_cmd->add_option("--checkpoint", eval_ckpt, "Model checkpoint")->required();
    eval_cmd->add_option("--out", eval_out, "Output directory (default .)");
    eval_cmd->add_option("--batch-size", eval_batch, "Eval batch size (default 8)");

    // predict
    auto* predict_cmd = app.add_subcommand("predict", "Classify images with a checkpoint");
    std::string predict_ckpt;
    std::vector<std::string> predict_images;
    predict_cmd->add_option("--checkpoint", predict_ckpt, "Model checkpoint")->required();
    predict_cmd->add_option("images", predict_images, "Image files (netpbm)")->required();

    // metrics
    auto* metrics_cmd = app.add_subcommand("metrics", "Compute a report from a confusion-matrix CSV");
    std::string metrics_cm, metrics_json, metrics_text;
    metrics_cmd->add_option("--cm", metrics_cm, "Confusion-matrix CSV")->required();
    metrics_cmd->add_option("--json", metrics_json, "Also write the report as JSON here");
    metrics_cmd->add_option("--out", metrics_text, "Also write the text report here");

    CLI11_PARSE(app, argc, argv);

    try {
        if (split_cmd->parsed()) {
            return cmd_split(split_data_dir, split_ratio, split_seed, split_out);
        }
        if (train_cmd->parsed()) {
            // defaults, then config file, then flags
            if (!train_args.config_path.empty()) {
                load_run_config_file(run_config, train_args.config_path);
            }
            if (train_cmd->count("--lr")) run_config.train.learning_rate = flag_lr;
            if (train_cmd->count("--batch-size")) run_config.train.batch_size = flag_batch;
            if (train_cmd->count("--epochs")) run_config.train.max_epochs = flag_epochs;
            if (train_cmd->count("--seed")) run_config.train.seed = flag_seed;
            if (train_cmd->count("--freeze-backbone")) run_config.train.freeze_backbone = true;
            if (train_cmd->count("--momentum")) run_config.train.momentum = flag_momentum;
            if (train_cmd->count("--weight-decay")) run_config.train.weight_decay = flag_weight_decay;
            if (train_cmd->count("--precision")) {
                run_config.apply("precision", flag_precision, "--precision");
            }
            if (train_cmd->count("--image-size")) run_config.image_size = flag_image_size;
            if (train_cmd->count("--checkpoint-every")) {
                run_config.train.checkpoint_every = flag_checkpoint_every;
            }
            if (train_cmd->count("--augment")) run_config.augment_enabled = true;
            if (train_cmd->count("--classes")) train_args.classes = flag_classes;
            return cmd_train(train_args, run_config);
        }
        if (eval_cmd->parsed()) {
            return cmd_eval(eval_manifest, eval_split, eval_ckpt, eval_out, eval_batch);
        }
        if (predict_cmd->parsed()) {
            return cmd_predict(predict_ckpt, predict_images);
        }
        if (metrics_cmd->parsed()) {
            return cmd_metrics(metrics_cm, metrics_json, metrics_text);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
