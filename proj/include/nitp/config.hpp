#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "nitp/flops.hpp"
#include "nitp/model.hpp"
#include "nitp/objectives.hpp"
#include "nitp/optim.hpp"

namespace nitp {

// Parsed flat key-value sections. Unknown sections/keys are rejected by the
// typed loaders below (fail-closed).
using IniSections = std::map<std::string, std::map<std::string, std::string>>;

IniSections parse_ini(const std::string& text);
IniSections parse_ini_file(const std::filesystem::path& path);

struct RunConfig {
    ModelConfig model;
    ObjectiveConfig objective;
    TrainConfig train;
    std::string corpus_path;
    std::string out_dir;

    void validate() const;  // cross-field checks
};

RunConfig load_run_config(const std::filesystem::path& path);
RunConfig run_config_from_sections(const IniSections& sections);

ArchSpec load_arch_config(const std::filesystem::path& path);

}  // namespace nitp
