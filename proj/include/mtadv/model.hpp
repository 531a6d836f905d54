#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mtadv/graph.hpp"
#include "mtadv/tensor.hpp"

namespace mtadv {

enum class TaskKind { classification, regression };
enum class LossKind { cross_entropy, l1, mse };
enum class ErrorKind { one_minus_accuracy, one_minus_iou, mse, l1 };

std::string task_kind_name(TaskKind k);
std::string loss_kind_name(LossKind k);
std::string error_kind_name(ErrorKind k);
TaskKind task_kind_from_string(const std::string& s);
LossKind loss_kind_from_string(const std::string& s);
ErrorKind error_kind_from_string(const std::string& s);

struct TaskSpec {
  std::string id;
  TaskKind kind = TaskKind::regression;
  Shape target_shape;
  LossKind loss = LossKind::l1;
  ErrorKind error = ErrorKind::l1;

  void validate() const;  // classification => cross_entropy, regression => l1|mse
};

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 8;
  double learning_rate = 0.05;
  std::uint64_t seed = 0;
  bool momentum = false;  // plain SGD by default, 0.9 momentum otherwise
};

struct Example {
  Tensor x;
  std::map<std::string, Tensor> targets;  // task id -> y_i
};

using Dataset = std::vector<Example>;

// Hard-parameter-sharing model: one encoder graph (x -> features), one
// 2-layer decoder graph per task (features -> pred), per-task weights w_i.
// Immutable after construction; evaluation methods are const and
// thread-safe.
class MultiTaskModel {
 public:
  MultiTaskModel(ComputationGraph encoder,
                 std::map<std::string, ComputationGraph> decoders,
                 std::map<std::string, double> weights,
                 std::vector<TaskSpec> tasks);

  const std::vector<TaskSpec>& tasks() const { return tasks_; }
  const TaskSpec& task(const std::string& id) const;
  bool has_task(const std::string& id) const;
  std::vector<std::string> task_ids() const;

  const std::map<std::string, double>& weights() const { return weights_; }
  double weight(const std::string& id) const;

  const ComputationGraph& encoder() const { return encoder_; }
  const ComputationGraph& decoder(const std::string& id) const;

  // Composed graph over the given task subset. Outputs: "joint"
  // (= sum of w_i * loss_i over the subset), "loss.<id>" and "pred.<id>"
  // per task, "features". Inputs: "x" and "y.<id>". Cached per subset.
  std::shared_ptr<const ComputationGraph> joint_graph(
      const std::set<std::string>& attacked) const;

  // Binds x plus the subset's targets, ready for forward/grad calls.
  std::map<std::string, Tensor> bind_inputs(
      const Tensor& x, const std::map<std::string, Tensor>& ybar,
      const std::set<std::string>& attacked) const;

  std::set<std::string> all_task_set() const;

 private:
  // Composed graphs are immutable, so copies of a model may share the cache.
  struct GraphCache {
    std::mutex mutex;
    std::map<std::string, std::shared_ptr<const ComputationGraph>> map;
  };

  ComputationGraph encoder_;
  std::map<std::string, ComputationGraph> decoders_;
  std::map<std::string, double> weights_;
  std::vector<TaskSpec> tasks_;
  std::shared_ptr<GraphCache> cache_ = std::make_shared<GraphCache>();
};

// Deterministic model factory. encoder_spec = [input_dim, hidden..,
// feature_dim]; tanh after every encoder layer. Decoders are affine ->
// tanh -> affine with a fixed hidden width. Empty weights means uniform
// 1/M.
MultiTaskModel build_model(const std::vector<std::size_t>& encoder_spec,
                           const std::vector<TaskSpec>& tasks,
                           const std::vector<double>& weights,
                           std::uint64_t seed);

double task_loss(const MultiTaskModel& model, const Tensor& x, const Tensor& y,
                 const std::string& task);

// Sum of w_i * L_i over the attacked subset.
double joint_loss(const MultiTaskModel& model, const Tensor& x,
                  const std::map<std::string, Tensor>& ybar,
                  const std::set<std::string>& attacked);

// d(joint loss)/dx at x.
Tensor joint_loss_grad(const MultiTaskModel& model, const Tensor& x,
                       const std::map<std::string, Tensor>& ybar,
                       const std::set<std::string>& attacked);

// d(unweighted task loss)/dx, the r_i of the vulnerability metrics.
Tensor task_loss_grad(const MultiTaskModel& model, const Tensor& x,
                      const Tensor& y, const std::string& task);

struct TrainResult {
  MultiTaskModel model;
  std::vector<double> epoch_loss;  // mean joint loss per epoch
  std::size_t steps = 0;           // SGD updates performed
};

TrainResult train(const MultiTaskModel& model, const Dataset& data,
                  const TrainConfig& cfg);

// Task-specific error f_i for one example (not differentiated).
double task_error(const MultiTaskModel& model, const Tensor& x, const Tensor& y,
                  const std::string& task);

// Mean f_i over the dataset.
double clean_error(const MultiTaskModel& model, const Dataset& data,
                   const std::string& task);

// Checkpoint container: text header + little-endian float64 block.
// Round-trips bit-exactly.
void save_model(const MultiTaskModel& model, const std::string& path,
                std::uint64_t seed = 0);
MultiTaskModel load_model(const std::string& path);

}  // namespace mtadv
