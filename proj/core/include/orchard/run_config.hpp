#pragma once

#include <filesystem>
#include <string>

#include "orchard/trainer.hpp"

namespace orchard {

// Effective settings of a training run. Sources are merged in fixed order:
// built-in defaults, then the config file, then command-line flags; the
// winning values are echoed before the run starts.
struct RunConfig {
    TrainConfig train;
    bool augment_enabled = false;
    AugmentConfig augment;  // used when augment_enabled
    size_t image_size = 224;
    uint64_t checkpoint_head_seed = 0;  // head re-init when replacing a head

    // Applies one key=value pair; `where` prefixes error messages.
    void apply(const std::string& key, const std::string& value, const std::string& where);

    // Finalize: copy augment block into train.augment when enabled.
    TrainConfig resolved_train_config() const;

    std::string describe() const;
};

// Parses a `key = value` file with '#' comments; errors carry line numbers.
void load_run_config_file(RunConfig& config, const std::filesystem::path& path);

}  // namespace orchard
