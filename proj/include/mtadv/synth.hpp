#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mtadv/model.hpp"
#include "mtadv/tensor.hpp"

namespace mtadv {

// One generated task. sharpness scales the frequency of the regression
// target sin(beta * B z); sharper targets force steeper trained responses
// and therefore larger input gradients, which is the per-task
// vulnerability knob.
struct SynthTaskSpec {
  std::string id;
  TaskKind kind = TaskKind::regression;
  std::size_t target_dim = 1;
  double sharpness = 1.0;  // beta >= 1
};

struct SynthSpec {
  std::size_t latent_dim = 4;
  std::size_t input_dim = 8;
  std::size_t n_examples = 64;
  std::vector<SynthTaskSpec> tasks;
  double noise_std = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthDataset {
  Dataset examples;  // inputs in [0,1], targets per task
  SynthSpec spec;
};

// Owns the seeded mixing maps A, B_i, C_i; targets are recomputable from a
// latent vector through task_target.
class SynthGenerator {
 public:
  explicit SynthGenerator(SynthSpec spec);

  SynthDataset generate() const;

  // Deterministic target for one latent vector.
  Tensor task_target(const Tensor& z, const SynthTaskSpec& task) const;

  const SynthSpec& spec() const { return spec_; }
  const Tensor& mixing_map() const { return mixing_; }  // input_dim x latent_dim
  const Tensor& task_map(const std::string& id) const;  // target_dim x latent_dim

 private:
  SynthSpec spec_;
  Tensor mixing_;                          // A
  std::map<std::string, Tensor> task_maps_;  // B_i or C_i
};

SynthDataset generate_dataset(const SynthSpec& spec);

// TaskSpec list matching the generated targets (cross-entropy for
// classification tasks, l1 for regression).
std::vector<TaskSpec> model_tasks_for(const SynthSpec& spec);

// Same container format as model checkpoints: text header plus
// little-endian float64 block; bit-exact round trip.
void save_dataset(const SynthDataset& ds, const std::string& path);
SynthDataset load_dataset(const std::string& path);

}  // namespace mtadv
