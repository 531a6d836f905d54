#pragma once

#include <map>
#include <string>
#include <vector>

#include "mtadv/tensor.hpp"

namespace mtadv {

// Primitive set: affine map, elementwise nonlinearities, loss nodes and a
// weighted-sum reduction. Enough to express a shared encoder, per-task
// decoders and their losses as one differentiable graph.
enum class OpKind {
  input,
  parameter,
  affine,              // args: x, W, b     -> W*x + b
  relu,                // args: x
  tanh_fn,             // args: x
  sigmoid,             // args: x
  softmax_cross_entropy,  // args: logits, target -> scalar
  mean_l1,             // args: pred, target -> scalar
  mean_squared_error,  // args: pred, target -> scalar
  weighted_sum,        // args: scalars...; coeffs per arg -> scalar
};

std::string op_kind_name(OpKind k);

struct GraphNode {
  OpKind kind = OpKind::input;
  std::string name;            // binding name for input/parameter nodes
  std::vector<int> args;       // indices of predecessor nodes
  std::vector<double> coeffs;  // weighted_sum only
  Shape shape;                 // output shape
};

// Acyclic computation graph in topological (construction) order.
// Immutable once built, except for set_parameter which the trainer uses
// on its privately owned copy.
class ComputationGraph {
 public:
  ComputationGraph() = default;

  const std::vector<GraphNode>& nodes() const { return nodes_; }
  const std::map<std::string, Tensor>& parameters() const { return params_; }
  const std::map<std::string, int>& inputs() const { return inputs_; }
  const std::map<std::string, int>& outputs() const { return outputs_; }

  const Tensor& parameter(const std::string& name) const;
  void set_parameter(const std::string& name, Tensor value);

  bool has_input(const std::string& name) const {
    return inputs_.count(name) > 0;
  }
  bool has_output(const std::string& name) const {
    return outputs_.count(name) > 0;
  }

  int output_node(const std::string& name) const;

 private:
  friend class GraphBuilder;
  std::vector<GraphNode> nodes_;
  std::map<std::string, Tensor> params_;
  std::map<std::string, int> inputs_;   // name -> node index
  std::map<std::string, int> outputs_;  // name -> node index
};

// Incremental construction with shape validation at every step.
class GraphBuilder {
 public:
  int input(const std::string& name, Shape shape);
  int parameter(const std::string& name, Tensor value);
  // out = W*x + b with W: (out_dim x in_dim), b: (out_dim)
  int affine(int x, int W, int b);
  int relu(int x);
  int tanh_fn(int x);
  int sigmoid(int x);
  int softmax_cross_entropy(int logits, int target);
  int mean_l1(int pred, int target);
  int mean_squared_error(int pred, int target);
  int weighted_sum(const std::vector<int>& args,
                   const std::vector<double>& coeffs);

  void mark_output(const std::string& name, int node);

  // Appends a copy of `g`, remapping each of g's inputs either to an
  // existing node (input_binding) or to a fresh input. Parameter names are
  // prefixed; g's outputs are returned as (name -> new node index) without
  // being marked as outputs here.
  std::map<std::string, int> splice(const ComputationGraph& g,
                                    const std::map<std::string, int>& input_binding,
                                    const std::string& prefix);

  ComputationGraph build();

 private:
  int add_node(GraphNode node);
  const Shape& shape_of(int node) const;
  ComputationGraph g_;
};

// Runs the graph; returns every marked output. Pure.
std::map<std::string, Tensor> forward_eval(
    const ComputationGraph& g, const std::map<std::string, Tensor>& inputs);

// d(output)/d(input) by reverse-mode accumulation; output must be scalar.
// An input the output does not depend on yields a zero gradient.
Tensor grad_input(const ComputationGraph& g,
                  const std::map<std::string, Tensor>& inputs,
                  const std::string& scalar_output,
                  const std::string& input_name = "x");

// Gradient of sum_k coeff_k * output_k w.r.t. one input, in a single
// backward pass. Used by attacks whose task weights change per step.
Tensor grad_input_weighted(const ComputationGraph& g,
                           const std::map<std::string, Tensor>& inputs,
                           const std::map<std::string, double>& output_coeffs,
                           const std::string& input_name = "x");

// Gradients of a scalar output w.r.t. every parameter (trainer use).
std::map<std::string, Tensor> grad_params(
    const ComputationGraph& g, const std::map<std::string, Tensor>& inputs,
    const std::string& scalar_output);

}  // namespace mtadv
