#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "acr/autodiff.hpp"
#include "acr/trainer.hpp"

namespace acr {

struct GradCheckSuiteOptions {
  double tolerance = 1e-4;  // max relative error
  double step = 1e-5;
  std::size_t coordinates_per_tensor = 3;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string name;
  GradCheckReport report;
  bool passed = false;
};

/// Finite-difference check of every differentiable tape op with random
/// inputs, one entry per (op, input).
std::vector<GradCheckEntry> check_op_gradients(const GradCheckSuiteOptions& options = {});

/// Checks d{L_cls, L_act, L_aff}/d(parameters) through the model built from
/// `config`, on one synthetic image and each configured augmentation. One
/// entry per (loss, augmentation, parameter tensor).
std::vector<GradCheckEntry> check_loss_gradients(const TrainConfig& config,
                                                 const GradCheckSuiteOptions& options = {});

bool all_passed(const std::vector<GradCheckEntry>& entries);
nlohmann::json to_json(const std::vector<GradCheckEntry>& entries);

}  // namespace acr
