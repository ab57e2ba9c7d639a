#pragma once

#include <string>
#include <vector>

#include "nitp/config.hpp"
#include "nitp/trainer.hpp"

namespace nitp {

struct AblationArm {
    std::string name;
    RunConfig config;
    MetricsRecord final_record;
    std::string error;  // nonempty when the arm aborted (e.g. divergence)
};

struct AblationReport {
    std::string axis;
    std::vector<AblationArm> arms;
    std::string to_text() const;
};

// Trains the paired configurations of one design axis (target_layer | shift |
// loss | lambda | start_step | projector | sg) at desk scale, each into its
// own subdirectory of base.out_dir, plus a lambda=0 baseline arm.
AblationReport run_ablation(const RunConfig& base, const std::string& axis);

std::vector<std::string> ablation_axes();

}  // namespace nitp
