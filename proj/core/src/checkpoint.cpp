#include "orchard/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <unordered_map>

namespace orchard {

namespace {

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const char* what) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw FormatError(std::string("checkpoint truncated while reading ") + what);
    return v;
}

void write_string(std::ostream& out, const std::string& s) {
    write_pod<uint32_t>(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in, const char* what) {
    auto len = read_pod<uint32_t>(in, what);
    if (len > (1u << 20)) throw FormatError(std::string("implausible string length in ") + what);
    std::string s(len, '\0');
    in.read(s.data(), len);
    if (!in) throw FormatError(std::string("checkpoint truncated while reading ") + what);
    return s;
}

void write_meta(std::ostream& out, const CheckpointMeta& meta) {
    write_pod(out, meta.num_classes);
    write_pod(out, meta.input_size);
    write_pod(out, meta.seed);
    write_pod(out, meta.epochs_completed);
    write_pod(out, meta.best_val_accuracy);
    write_pod<uint32_t>(out, static_cast<uint32_t>(meta.class_names.size()));
    for (const auto& name : meta.class_names) write_string(out, name);
}

CheckpointMeta read_meta(std::istream& in) {
    CheckpointMeta meta;
    meta.num_classes = read_pod<uint32_t>(in, "num_classes");
    meta.input_size = read_pod<uint32_t>(in, "input_size");
    meta.seed = read_pod<uint64_t>(in, "seed");
    meta.epochs_completed = read_pod<uint32_t>(in, "epochs_completed");
    meta.best_val_accuracy = read_pod<double>(in, "best_val_accuracy");
    auto n = read_pod<uint32_t>(in, "class name count");
    for (uint32_t i = 0; i < n; ++i) meta.class_names.push_back(read_string(in, "class name"));
    return meta;
}

void read_header(std::istream& in) {
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw FormatError("not a checkpoint file (bad magic)");
    }
    auto version = read_pod<uint32_t>(in, "version");
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version) +
                          " (expected " + std::to_string(kCheckpointVersion) + ")");
    }
}

}  // namespace

template <typename S>
void save_checkpoint(ResNet34<S>& model, const CheckpointMeta& meta,
                     const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open checkpoint for writing: " + path.string());

    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    write_pod(out, kCheckpointVersion);
    CheckpointMeta m = meta;
    m.num_classes = static_cast<uint32_t>(model.num_classes());
    m.input_size = static_cast<uint32_t>(model.spec().input_size);
    write_meta(out, m);

    auto tensors = model.named_tensors();
    write_pod<uint32_t>(out, static_cast<uint32_t>(tensors.size()));
    std::vector<float> buf;
    for (auto& nt : tensors) {
        write_string(out, nt.name);
        const auto& shape = nt.tensor.shape();
        write_pod<uint32_t>(out, static_cast<uint32_t>(shape.size()));
        for (size_t e : shape) write_pod<uint64_t>(out, static_cast<uint64_t>(e));
        buf.resize(nt.tensor.numel());
        auto src = nt.tensor.values();
        for (size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(src[i]);
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    out.flush();
    if (!out) throw FormatError("failed writing checkpoint: " + path.string());
}

RawCheckpoint read_checkpoint_raw(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint: " + path.string());
    read_header(in);

    RawCheckpoint raw;
    raw.meta = read_meta(in);
    auto count = read_pod<uint32_t>(in, "tensor count");
    raw.tensors.reserve(count);
    for (uint32_t t = 0; t < count; ++t) {
        RawTensorEntry entry;
        entry.name = read_string(in, "tensor name");
        auto rank = read_pod<uint32_t>(in, "tensor rank");
        if (rank > 8) throw FormatError("implausible tensor rank in " + entry.name);
        size_t numel = 1;
        for (uint32_t a = 0; a < rank; ++a) {
            auto e = read_pod<uint64_t>(in, "tensor extent");
            if (e == 0) throw FormatError("zero extent in tensor " + entry.name);
            entry.shape.push_back(static_cast<size_t>(e));
            numel *= static_cast<size_t>(e);
        }
        entry.data.resize(numel);
        in.read(reinterpret_cast<char*>(entry.data.data()),
                static_cast<std::streamsize>(numel * sizeof(float)));
        if (!in) throw FormatError("checkpoint truncated inside tensor " + entry.name);
        raw.tensors.push_back(std::move(entry));
    }
    // must be at EOF now
    char extra;
    in.read(&extra, 1);
    if (!in.eof()) throw FormatError("trailing bytes after last tensor in " + path.string());
    return raw;
}

template <typename S>
std::pair<ResNet34<S>, CheckpointMeta> load_checkpoint(const std::filesystem::path& path) {
    RawCheckpoint raw = read_checkpoint_raw(path);
    if (raw.meta.num_classes == 0) throw FormatError("checkpoint metadata lacks a class count");

    ModelSpec spec;
    spec.num_classes = raw.meta.num_classes;
    spec.input_size = raw.meta.input_size;
    auto model = ResNet34<S>::build_zeroed(spec);

    std::unordered_map<std::string, const RawTensorEntry*> by_name;
    for (const auto& e : raw.tensors) {
        if (!by_name.emplace(e.name, &e).second) {
            throw FormatError("duplicate tensor name in checkpoint: " + e.name);
        }
    }

    size_t used = 0;
    for (auto& nt : model.named_tensors()) {
        auto it = by_name.find(nt.name);
        if (it == by_name.end()) {
            throw IncompatibilityError("checkpoint is missing tensor " + nt.name);
        }
        const RawTensorEntry& entry = *it->second;
        if (entry.shape != nt.tensor.shape()) {
            throw IncompatibilityError("tensor " + nt.name + " has shape " +
                                       shape_to_string(entry.shape) + " but the model expects " +
                                       shape_to_string(nt.tensor.shape()));
        }
        auto dst = nt.tensor.mutable_values();
        for (size_t i = 0; i < entry.data.size(); ++i) dst[i] = static_cast<S>(entry.data[i]);
        ++used;
    }
    if (used != raw.tensors.size()) {
        throw IncompatibilityError("checkpoint holds " + std::to_string(raw.tensors.size()) +
                                   " tensors but the model uses " + std::to_string(used));
    }
    return {std::move(model), std::move(raw.meta)};
}

template <typename S>
std::pair<ResNet34<S>, CheckpointMeta> load_checkpoint_replace_head(
    const std::filesystem::path& path, size_t new_classes, uint64_t head_seed) {
    auto [model, meta] = load_checkpoint<S>(path);
    model.replace_head(new_classes, head_seed);
    meta.num_classes = static_cast<uint32_t>(new_classes);
    meta.class_names.clear();
    return {std::move(model), std::move(meta)};
}

template void save_checkpoint<float>(ResNet34<float>&, const CheckpointMeta&,
                                     const std::filesystem::path&);
template void save_checkpoint<double>(ResNet34<double>&, const CheckpointMeta&,
                                      const std::filesystem::path&);
template std::pair<ResNet34<float>, CheckpointMeta> load_checkpoint<float>(
    const std::filesystem::path&);
template std::pair<ResNet34<double>, CheckpointMeta> load_checkpoint<double>(
    const std::filesystem::path&);
template std::pair<ResNet34<float>, CheckpointMeta> load_checkpoint_replace_head<float>(
    const std::filesystem::path&, size_t, uint64_t);
template std::pair<ResNet34<double>, CheckpointMeta> load_checkpoint_replace_head<double>(
    const std::filesystem::path&, size_t, uint64_t);

}  // namespace orchard
