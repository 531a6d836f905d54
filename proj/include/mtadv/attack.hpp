#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mtadv/model.hpp"
#include "mtadv/tensor.hpp"

namespace mtadv {

enum class AttackVariant { fgsm, pgd, wgd, apgd };

AttackVariant variant_from_string(const std::string& s);
std::string variant_to_string(AttackVariant v);

struct AttackConfig {
  double epsilon = 8.0 / 255.0;
  PNorm p = PNorm::linf;
  std::size_t steps = 25;
  double step_size = 2.0 / 255.0;
  bool random_start = false;
  AttackVariant variant = AttackVariant::pgd;
  std::set<std::string> attacked;
  std::uint64_t seed = 0;
  std::optional<std::pair<double, double>> input_bounds;
  // WGD rate weighting as written in the loss-ratio definition
  // (rho_i = Ltilde_i / mean Ltilde) when false; reciprocal-ratio
  // weighting when true.
  bool rate_inverted = false;

  void validate() const;
};

struct StepRecord {
  std::size_t t = 0;                       // 0 = state before the first step
  std::map<std::string, double> task_loss;  // unweighted L_i at x + delta_t
  double joint = 0.0;                       // sum w_i L_i over attacked set
  double delta_norm = 0.0;                  // ||delta_t||_p
  std::map<std::string, double> rho;        // wgd only
  double step_size = 0.0;                   // apgd only
};

struct AttackTrace {
  Tensor delta;
  std::vector<StepRecord> per_step;

  double initial_joint() const { return per_step.front().joint; }
  double final_joint() const { return per_step.back().joint; }
  double loss_increase() const { return final_joint() - initial_joint(); }
};

// Nearest point of the epsilon-ball in the same norm; linf clamps each
// coordinate, l2 rescales radially. Idempotent.
Tensor project(const Tensor& delta, double epsilon, PNorm p);

AttackTrace fgsm(const MultiTaskModel& model, const Tensor& x,
                 const std::map<std::string, Tensor>& ybar,
                 const AttackConfig& cfg);

AttackTrace pgd(const MultiTaskModel& model, const Tensor& x,
                const std::map<std::string, Tensor>& ybar,
                const AttackConfig& cfg);

AttackTrace wgd(const MultiTaskModel& model, const Tensor& x,
                const std::map<std::string, Tensor>& ybar,
                const AttackConfig& cfg);

AttackTrace apgd(const MultiTaskModel& model, const Tensor& x,
                 const std::map<std::string, Tensor>& ybar,
                 const AttackConfig& cfg);

// Dispatch on cfg.variant.
AttackTrace run_attack(const MultiTaskModel& model, const Tensor& x,
                       const std::map<std::string, Tensor>& ybar,
                       const AttackConfig& cfg);

// Row-per-step CSV: step,t,task_id,loss,delta_norm,rho,step_size.
// Per-step joint row first (empty task_id), then one row per task.
std::string trace_to_csv(const AttackTrace& trace);

}  // namespace mtadv
