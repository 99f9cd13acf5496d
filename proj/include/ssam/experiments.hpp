#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssam/train.hpp"

namespace ssam::pipeline {

enum class GradcheckScope { Primitives, Experts, Losses, Router, All };

GradcheckScope parse_scope(const std::string& s);

struct GradcheckLine {
  std::string name;
  double worst_rel_err = 0;
  double worst_abs_err = 0;
  bool pass = true;
};

struct GradcheckOptions {
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  bool corrupt_dice = false;  // negative control: dice gradient scaled by 1.1
};

/// Finite-difference checks in double precision on (N, 4, 8, 8) inputs,
/// one line per component with the worst error over all seeds.
std::vector<GradcheckLine> run_gradcheck(GradcheckScope scope, const GradcheckOptions& opts = {});

/// "name worst_rel_err pass|fail" per line.
std::string format_gradcheck(const std::vector<GradcheckLine>& lines);

/// Identity forward; backward multiplies the incoming gradient by factor.
Tensor<double> skew_gradient(const Tensor<double>& x, double factor);

enum class AblationAxis { Insertion, Experts, LambdaSparse };

AblationAxis parse_axis(const std::string& s);
std::string axis_name(AblationAxis a);
std::vector<std::string> default_settings(AblationAxis a);

struct AblationRow {
  std::string axis, setting;
  std::uint64_t seed = 0;
  metrics::MetricsReport val;
  double final_loss = 0;
  double wall_s = 0;
};

/// One train_teacher plus validation per (setting, seed). Expert settings
/// are '+'-joined names such as "PI+SPD"; ContractError for an empty subset.
std::vector<AblationRow> run_ablation(AblationAxis axis, const std::vector<std::string>& settings,
                                      const std::vector<std::uint64_t>& seeds, const TrainConfig& base,
                                      const data::Manifest& manifest, const Progress& progress = {});

/// Applies one setting of the axis to a config.
TrainConfig apply_setting(AblationAxis axis, const std::string& setting, TrainConfig cfg);

std::string ablation_header();
std::string ablation_row(const AblationRow& r);

}  // namespace ssam::pipeline
