#include "nitp/ablate.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace nitp {

namespace {

int64_t clamp_layer(double frac, int64_t num_layers) {
    int64_t k = static_cast<int64_t>(std::llround(frac * static_cast<double>(num_layers)));
    return std::clamp<int64_t>(k, 1, num_layers);
}

}  // namespace

std::vector<std::string> ablation_axes() {
    return {"target_layer", "shift", "loss", "lambda", "start_step", "projector", "sg"};
}

AblationReport run_ablation(const RunConfig& base, const std::string& axis) {
    std::vector<std::pair<std::string, RunConfig>> arms;
    auto variant = [&](const std::string& name) -> RunConfig& {
        arms.emplace_back(name, base);
        return arms.back().second;
    };

    variant("baseline_ntp").objective.lambda = 0.0;
    if (axis == "target_layer") {
        int64_t L = base.model.num_layers;
        std::vector<std::pair<std::string, int64_t>> picks = {{"shallow", clamp_layer(0.2, L)},
                                                              {"middle", clamp_layer(0.5, L)},
                                                              {"deep", clamp_layer(0.8, L)}};
        for (auto& [name, layer] : picks) {
            bool dup = false;
            for (auto& [n2, cfg] : arms) dup = dup || (cfg.objective.lambda > 0 && cfg.objective.target_layer == layer);
            if (dup) continue;
            variant(name + "_L" + std::to_string(layer)).objective.target_layer = layer;
        }
    } else if (axis == "shift") {
        variant("next_token").objective.temporal_shift = TemporalShift::next_token;
        variant("current_step").objective.temporal_shift = TemporalShift::current_step;
    } else if (axis == "loss") {
        variant("cosine").objective.loss_family = LossFamily::cosine;
        variant("mse").objective.loss_family = LossFamily::mse;
        variant("smooth_l1").objective.loss_family = LossFamily::smooth_l1;
        variant("kl").objective.loss_family = LossFamily::kl;
        variant("generic_cosine_reg").objective.loss_family = LossFamily::generic_cosine_reg;
    } else if (axis == "lambda") {
        for (double l : {0.5, 1.0, 2.0}) {
            std::ostringstream name;
            name << "lambda_" << l;
            variant(name.str()).objective.lambda = l;
        }
    } else if (axis == "start_step") {
        for (double frac : {0.0, 0.1, 0.2, 0.3}) {
            int64_t s = static_cast<int64_t>(std::llround(frac * static_cast<double>(base.train.total_steps)));
            variant("start_" + std::to_string(s)).objective.nitp_start_step = s;
        }
    } else if (axis == "projector") {
        variant("projector_on").objective.use_projector = true;
        variant("projector_off").objective.use_projector = false;
    } else if (axis == "sg") {
        variant("sg_on").objective.stop_gradient_targets = true;
        variant("sg_off").objective.stop_gradient_targets = false;
    } else {
        throw std::invalid_argument("unknown ablation axis '" + axis + "'");
    }

    AblationReport rep;
    rep.axis = axis;
    for (auto& [name, cfg] : arms) {
        cfg.out_dir = (std::filesystem::path(base.out_dir) / axis / name).string();
        AblationArm arm;
        arm.name = name;
        arm.config = cfg;
        try {
            arm.final_record = train(cfg);
        } catch (const std::exception& e) {
            arm.error = e.what();  // a diverging arm is itself a result
        }
        rep.arms.push_back(std::move(arm));
    }
    return rep;
}

std::string AblationReport::to_text() const {
    std::ostringstream os;
    os << "ablation axis: " << axis << "\n";
    os << std::left << std::setw(24) << "arm" << std::right << std::setw(12) << "ntp_loss" << std::setw(12)
       << "nitp_loss" << std::setw(12) << "eff_rank" << std::setw(12) << "avg_cos" << "\n";
    for (const AblationArm& a : arms) {
        if (!a.error.empty()) {
            os << std::left << std::setw(24) << a.name << "aborted: " << a.error << "\n";
            continue;
        }
        os << std::left << std::setw(24) << a.name << std::right << std::fixed << std::setprecision(4)
           << std::setw(12) << a.final_record.ntp_loss << std::setw(12) << a.final_record.nitp_loss;
        if (a.final_record.snapshot) {
            os << std::setw(12) << a.final_record.snapshot->effective_rank << std::setw(12)
               << a.final_record.snapshot->avg_cosine;
        } else {
            os << std::setw(12) << "-" << std::setw(12) << "-";
        }
        os << "\n";
        os.unsetf(std::ios::fixed);
    }
    return os.str();
}

}  // namespace nitp
