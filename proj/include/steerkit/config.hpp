#pragma once

#include <cstdint>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "steerkit/correct_field.hpp"
#include "steerkit/steer_global.hpp"
#include "steerkit/torus_connect.hpp"
#include "steerkit/vectorfield.hpp"

namespace steerkit {

// Throws ConfigError naming the first key of j outside `allowed`.
void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where);

Box box_from_json(const nlohmann::json& j);
nlohmann::json box_to_json(const Box& b);

struct FieldCheckParams {
  std::optional<Box> box;  // default: [0, 2 pi]^d
  int samples = 2000;
  double divergence_tol = 1e-6;
  std::vector<double> vmd_box_sizes{10.0, 20.0, 40.0, 80.0};
  double vmd_threshold = 0.01;
  int vmd_resolution = 64;
};

struct CorrectParams {
  double epsilon = 0.1;
  CorrectionSettings settings;
  bool certify = true;
  CertifyOptions certify_options;
};

struct RecurrenceParams {
  Vec center;
  double delta = 1e-3;
  double radius = 1e-2;
  double T_min = 1.0;
  double T_max = 200.0;
  int n_candidates = 16;
  bool include_center = true;
  bool backward = false;
  double tol = 1e-10;
  // Search the corrected field instead of the input field.
  std::optional<double> correct_epsilon;
  std::optional<Box> correct_roi;
};

struct TorusParams {
  Vec p, q;
  double epsilon = 0.1;
  ConnectOptions options;
};

struct VerifyParams {
  double factor = 10.0;
};

struct RunConfig {
  FieldSpec field;
  std::uint64_t seed = 1;
  std::string output = "out";
  std::optional<FieldCheckParams> field_check;
  std::optional<CorrectParams> correct;
  std::optional<RecurrenceParams> recurrence;
  std::optional<PlanRequest> plan;
  std::optional<TorusParams> torus_connect;
  VerifyParams verify;
};

// Schema validation happens here: unknown keys, wrong types and missing
// required values all raise ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
// Applies a seed to every seeded section.
void apply_seed(RunConfig& c, std::uint64_t seed);

}  // namespace steerkit
