#include "orchard/run_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace orchard {

namespace {

[[noreturn]] void config_error(const std::string& where, const std::string& what) {
    throw FormatError(where + ": " + what);
}

double parse_double(const std::string& v, const std::string& where) {
    double out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) {
        config_error(where, "expected a number, got '" + v + "'");
    }
    return out;
}

uint64_t parse_u64(const std::string& v, const std::string& where) {
    uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) {
        config_error(where, "expected a non-negative integer, got '" + v + "'");
    }
    return out;
}

bool parse_bool(const std::string& v, const std::string& where) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    config_error(where, "expected a boolean, got '" + v + "'");
}

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

void RunConfig::apply(const std::string& key, const std::string& value,
                      const std::string& where) {
    if (key == "learning_rate") {
        train.learning_rate = parse_double(value, where);
    } else if (key == "batch_size") {
        train.batch_size = static_cast<size_t>(parse_u64(value, where));
    } else if (key == "max_epochs") {
        train.max_epochs = static_cast<size_t>(parse_u64(value, where));
    } else if (key == "seed") {
        train.seed = parse_u64(value, where);
    } else if (key == "freeze_backbone") {
        train.freeze_backbone = parse_bool(value, where);
    } else if (key == "checkpoint_every") {
        train.checkpoint_every = static_cast<size_t>(parse_u64(value, where));
    } else if (key == "momentum") {
        train.momentum = parse_double(value, where);
    } else if (key == "weight_decay") {
        train.weight_decay = parse_double(value, where);
    } else if (key == "precision") {
        if (value == "f32") {
            train.precision = Precision::F32;
        } else if (value == "f64") {
            train.precision = Precision::F64;
        } else {
            config_error(where, "precision must be f32 or f64, got '" + value + "'");
        }
    } else if (key == "image_size") {
        image_size = static_cast<size_t>(parse_u64(value, where));
    } else if (key == "augment.enabled") {
        augment_enabled = parse_bool(value, where);
    } else if (key == "augment.rotation_max_deg") {
        augment.rotation_max_deg = parse_double(value, where);
    } else if (key == "augment.translate_max_frac") {
        augment.translate_max_frac = parse_double(value, where);
    } else if (key == "augment.reflect_prob") {
        augment.reflect_prob = parse_double(value, where);
    } else if (key == "augment.scale_min") {
        augment.scale_min = parse_double(value, where);
    } else if (key == "augment.scale_max") {
        augment.scale_max = parse_double(value, where);
    } else if (key == "augment.seed") {
        augment.seed = parse_u64(value, where);
    } else {
        config_error(where, "unknown configuration key '" + key + "'");
    }
}

TrainConfig RunConfig::resolved_train_config() const {
    TrainConfig out = train;
    if (augment_enabled) {
        out.augment = augment;
    } else {
        out.augment.reset();
    }
    return out;
}

std::string RunConfig::describe() const {
    std::ostringstream os;
    os << "learning_rate = " << train.learning_rate << "\n"
       << "batch_size = " << train.batch_size << "\n"
       << "max_epochs = " << train.max_epochs << "\n"
       << "seed = " << train.seed << "\n"
       << "freeze_backbone = " << (train.freeze_backbone ? "true" : "false") << "\n"
       << "checkpoint_every = " << train.checkpoint_every << "\n"
       << "momentum = " << train.momentum << "\n"
       << "weight_decay = " << train.weight_decay << "\n"
       << "precision = " << (train.precision == Precision::F32 ? "f32" : "f64") << "\n"
       << "image_size = " << image_size << "\n"
       << "augment.enabled = " << (augment_enabled ? "true" : "false") << "\n";
    if (augment_enabled) {
        os << "augment.rotation_max_deg = " << augment.rotation_max_deg << "\n"
           << "augment.translate_max_frac = " << augment.translate_max_frac << "\n"
           << "augment.reflect_prob = " << augment.reflect_prob << "\n"
           << "augment.scale_min = " << augment.scale_min << "\n"
           << "augment.scale_max = " << augment.scale_max << "\n"
           << "augment.seed = " << augment.seed << "\n";
    }
    return os.str();
}

void load_run_config_file(RunConfig& config, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open config file: " + path.string());
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string where = path.string() + ":" + std::to_string(lineno);
        std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        size_t eq = stripped.find('=');
        if (eq == std::string::npos) {
            config_error(where, "expected 'key = value'");
        }
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (key.empty()) config_error(where, "empty key");
        config.apply(key, value, where);
    }
}

}  // namespace orchard
