#include "orchard/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "orchard/image.hpp"

namespace orchard {

const char* split_name(Split s) { return s == Split::Train ? "train" : "val"; }

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::Train;
    if (name == "val") return Split::Val;
    throw FormatError("unknown split tag '" + name + "' (expected train|val)");
}

size_t DatasetManifest::count(Split split) const {
    size_t n = 0;
    for (const auto& r : records) n += r.split == split;
    return n;
}

size_t DatasetManifest::count(Split split, int label) const {
    size_t n = 0;
    for (const auto& r : records) n += r.split == split && r.label == label;
    return n;
}

size_t DatasetManifest::class_count(int label) const {
    size_t n = 0;
    for (const auto& r : records) n += r.label == label;
    return n;
}

void DatasetManifest::validate() const {
    if (classes.empty()) throw ValidationError("manifest has no classes");
    std::set<std::string> seen;
    for (const auto& r : records) {
        if (r.label < 0 || static_cast<size_t>(r.label) >= classes.size()) {
            throw ValidationError("manifest record with out-of-range label: " + r.path);
        }
        if (!seen.insert(r.path).second) {
            throw ValidationError("duplicate path in manifest: " + r.path);
        }
    }
}

std::vector<LabeledPath> scan_class_directories(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) {
        throw IngestionError("dataset root is not a directory: " + root.string());
    }
    std::vector<std::string> class_names;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory()) class_names.push_back(entry.path().filename().string());
    }
    std::sort(class_names.begin(), class_names.end());
    if (class_names.empty()) {
        throw IngestionError("no class subdirectories under " + root.string());
    }

    std::vector<LabeledPath> out;
    for (const auto& cls : class_names) {
        std::vector<std::string> files;
        for (const auto& entry : fs::directory_iterator(root / cls)) {
            if (entry.is_regular_file()) files.push_back(entry.path().string());
        }
        std::sort(files.begin(), files.end());
        if (files.empty()) {
            throw ValidationError("class directory '" + cls + "' holds no samples");
        }
        for (auto& f : files) out.push_back({std::move(f), cls});
    }
    return out;
}

namespace {

// Class index order: the known six-class leaf corpus keeps its fixed order;
// any other label set is ordered lexicographically.
std::vector<std::string> order_classes(const std::set<std::string>& names) {
    std::set<std::string> canonical(kLeafClasses.begin(), kLeafClasses.end());
    if (names == canonical) {
        return {kLeafClasses.begin(), kLeafClasses.end()};
    }
    return {names.begin(), names.end()};
}

// floor(ratio * n) on the exact rational value; the nudge undoes the
// shortfall of binary doubles like 0.7 * 1550 so exact products floor
// exactly.
size_t stratum_train_count(double ratio, size_t n) {
    return static_cast<size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
}

}  // namespace

DatasetManifest split_dataset(const std::vector<LabeledPath>& samples, double ratio,
                              uint64_t seed) {
    if (ratio <= 0.0 || ratio >= 1.0) {
        throw ValidationError("split ratio must lie strictly between 0 and 1");
    }
    if (samples.empty()) throw ValidationError("cannot split an empty sample list");

    std::set<std::string> names;
    for (const auto& s : samples) names.insert(s.class_name);
    DatasetManifest manifest;
    manifest.classes = order_classes(names);
    manifest.seed = seed;
    manifest.ratio = ratio;

    std::map<std::string, int> class_index;
    for (size_t i = 0; i < manifest.classes.size(); ++i) {
        class_index[manifest.classes[i]] = static_cast<int>(i);
    }

    // group per class, preserving input order before the seeded shuffle
    std::vector<std::vector<const LabeledPath*>> per_class(manifest.classes.size());
    for (const auto& s : samples) per_class[class_index[s.class_name]].push_back(&s);

    for (size_t k = 0; k < per_class.size(); ++k) {
        auto& group = per_class[k];
        if (group.empty()) {
            throw ValidationError("class '" + manifest.classes[k] + "' has no samples");
        }
        Rng rng(mix_seed(seed, k));
        rng.shuffle(group);
        const size_t train_n = stratum_train_count(ratio, group.size());
        for (size_t i = 0; i < group.size(); ++i) {
            manifest.records.push_back(SampleRecord{
                group[i]->path, static_cast<int>(k), i < train_n ? Split::Train : Split::Val});
        }
    }

    // rows ordered by class then path: diffable and independent of the
    // shuffle order used for the assignment
    std::sort(manifest.records.begin(), manifest.records.end(),
              [](const SampleRecord& a, const SampleRecord& b) {
                  return a.label != b.label ? a.label < b.label : a.path < b.path;
              });
    manifest.validate();
    return manifest;
}

namespace {

std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    size_t pos = 0;
    while (true) {
        size_t tab = line.find('\t', pos);
        if (tab == std::string::npos) {
            out.push_back(line.substr(pos));
            break;
        }
        out.push_back(line.substr(pos, tab - pos));
        pos = tab + 1;
    }
    return out;
}

std::string join_comma(const std::vector<std::string>& parts) {
    std::string out;
    for (size_t i = 0; i < parts.size(); ++i) {
        if (i) out += ',';
        out += parts[i];
    }
    return out;
}

std::vector<std::string> split_comma(const std::string& s) {
    std::vector<std::string> out;
    size_t pos = 0;
    while (true) {
        size_t c = s.find(',', pos);
        if (c == std::string::npos) {
            out.push_back(s.substr(pos));
            break;
        }
        out.push_back(s.substr(pos, c - pos));
        pos = c + 1;
    }
    return out;
}

[[noreturn]] void manifest_error(const std::filesystem::path& path, size_t line,
                                 const std::string& what) {
    throw FormatError(path.string() + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open manifest for writing: " + path.string());
    out << "orchard-manifest\t1\n";
    out << "classes\t" << join_comma(manifest.classes) << "\n";
    out << "seed\t" << manifest.seed << "\n";
    out << "ratio\t" << format_double(manifest.ratio) << "\n";
    out << "columns\tpath\tlabel\tsplit\n";
    for (const auto& r : manifest.records) {
        out << r.path << '\t' << manifest.classes[static_cast<size_t>(r.label)] << '\t'
            << split_name(r.split) << '\n';
    }
    if (!out) throw FormatError("failed writing manifest: " + path.string());
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open manifest: " + path.string());

    DatasetManifest manifest;
    std::string line;
    size_t lineno = 0;

    auto next_line = [&]() -> bool {
        if (!std::getline(in, line)) return false;
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return true;
    };

    if (!next_line() || line != "orchard-manifest\t1") {
        manifest_error(path, lineno ? lineno : 1, "missing 'orchard-manifest 1' header");
    }

    std::map<std::string, int> class_index;
    bool saw_columns = false;
    while (next_line()) {
        if (line.empty()) continue;
        auto fields = split_tabs(line);
        if (!saw_columns) {
            if (fields[0] == "classes" && fields.size() == 2) {
                manifest.classes = split_comma(fields[1]);
                for (size_t i = 0; i < manifest.classes.size(); ++i) {
                    if (manifest.classes[i].empty()) {
                        manifest_error(path, lineno, "empty class name");
                    }
                    if (!class_index.emplace(manifest.classes[i], static_cast<int>(i)).second) {
                        manifest_error(path, lineno,
                                       "duplicate class name " + manifest.classes[i]);
                    }
                }
            } else if (fields[0] == "seed" && fields.size() == 2) {
                manifest.seed = std::stoull(fields[1]);
            } else if (fields[0] == "ratio" && fields.size() == 2) {
                double v = 0;
                auto [p, ec] = std::from_chars(fields[1].data(),
                                               fields[1].data() + fields[1].size(), v);
                if (ec != std::errc{} || p != fields[1].data() + fields[1].size()) {
                    manifest_error(path, lineno, "malformed ratio");
                }
                manifest.ratio = v;
            } else if (fields[0] == "columns") {
                if (manifest.classes.empty()) {
                    manifest_error(path, lineno, "columns line before classes line");
                }
                saw_columns = true;
            } else {
                manifest_error(path, lineno, "unknown header line '" + fields[0] + "'");
            }
            continue;
        }
        if (fields.size() != 3) {
            manifest_error(path, lineno, "expected 3 tab-separated fields, got " +
                                             std::to_string(fields.size()));
        }
        auto it = class_index.find(fields[1]);
        if (it == class_index.end()) {
            manifest_error(path, lineno, "unknown class '" + fields[1] + "'");
        }
        Split split;
        try {
            split = split_from_name(fields[2]);
        } catch (const FormatError& e) {
            manifest_error(path, lineno, e.what());
        }
        manifest.records.push_back(SampleRecord{fields[0], it->second, split});
    }
    if (!saw_columns) manifest_error(path, lineno ? lineno : 1, "manifest has no columns line");
    try {
        manifest.validate();
    } catch (const ValidationError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return manifest;
}

BatchIterator::BatchIterator(const DatasetManifest& manifest, Split split, Options options)
    : manifest_(&manifest), options_(std::move(options)) {
    if (options_.batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (options_.augment) options_.augment->validate();
    for (size_t i = 0; i < manifest.records.size(); ++i) {
        if (manifest.records[i].split == split) indices_.push_back(i);
    }
    order_ = indices_;
}

void BatchIterator::start_epoch(size_t epoch) {
    epoch_ = epoch;
    cursor_ = 0;
    order_ = indices_;
    if (options_.shuffle) {
        Rng rng(mix_seed(options_.shuffle_seed, 0xe90c4, epoch));
        rng.shuffle(order_);
    }
}

std::optional<Batch> BatchIterator::next() {
    if (cursor_ >= order_.size()) return std::nullopt;
    const size_t s = options_.image_size;
    const size_t plane = 3 * s * s;

    std::vector<float> data;
    std::vector<int> labels;
    std::vector<size_t> ids;
    data.reserve(options_.batch_size * plane);

    while (cursor_ < order_.size() && labels.size() < options_.batch_size) {
        const size_t rec_id = order_[cursor_++];
        const SampleRecord& rec = manifest_->records[rec_id];
        Tensor<float> img;
        try {
            img = load_and_resize(rec.path, s);
        } catch (const IngestionError& e) {
            if (options_.skip_unreadable) {
                std::cerr << "warning: skipping unreadable sample: " << e.what() << "\n";
                continue;
            }
            throw;
        }
        if (options_.augment) {
            Rng rng(mix_seed(options_.augment->seed ^ 0xa96e4fULL, epoch_, rec_id));
            img = augment(img, *options_.augment, rng);
        }
        auto v = img.values();
        data.insert(data.end(), v.begin(), v.end());
        labels.push_back(rec.label);
        ids.push_back(rec_id);
    }
    if (labels.empty()) return std::nullopt;

    Batch batch;
    batch.images = Tensor<float>(Shape{labels.size(), 3, s, s}, std::move(data));
    batch.labels = std::move(labels);
    batch.record_ids = std::move(ids);
    return batch;
}

}  // namespace orchard
