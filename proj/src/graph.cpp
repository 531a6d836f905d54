#include "mtadv/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mtadv {

std::string op_kind_name(OpKind k) {
  switch (k) {
    case OpKind::input: return "input";
    case OpKind::parameter: return "parameter";
    case OpKind::affine: return "affine";
    case OpKind::relu: return "relu";
    case OpKind::tanh_fn: return "tanh";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::softmax_cross_entropy: return "softmax_cross_entropy";
    case OpKind::mean_l1: return "mean_l1";
    case OpKind::mean_squared_error: return "mean_squared_error";
    case OpKind::weighted_sum: return "weighted_sum";
  }
  return "?";
}

const Tensor& ComputationGraph::parameter(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end())
    throw std::invalid_argument("graph: unknown parameter '" + name + "'");
  return it->second;
}

void ComputationGraph::set_parameter(const std::string& name, Tensor value) {
  auto it = params_.find(name);
  if (it == params_.end())
    throw std::invalid_argument("graph: unknown parameter '" + name + "'");
  if (it->second.shape() != value.shape())
    throw std::invalid_argument("graph: parameter '" + name + "' shape mismatch");
  it->second = std::move(value);
}

int ComputationGraph::output_node(const std::string& name) const {
  auto it = outputs_.find(name);
  if (it == outputs_.end())
    throw std::invalid_argument("graph: unknown output '" + name + "'");
  return it->second;
}

int GraphBuilder::add_node(GraphNode node) {
  g_.nodes_.push_back(std::move(node));
  return static_cast<int>(g_.nodes_.size()) - 1;
}

const Shape& GraphBuilder::shape_of(int node) const {
  if (node < 0 || node >= static_cast<int>(g_.nodes_.size()))
    throw std::invalid_argument("builder: bad node index " + std::to_string(node));
  return g_.nodes_[node].shape;
}

int GraphBuilder::input(const std::string& name, Shape shape) {
  if (g_.inputs_.count(name))
    throw std::invalid_argument("builder: duplicate input '" + name + "'");
  GraphNode n;
  n.kind = OpKind::input;
  n.name = name;
  n.shape = std::move(shape);
  int id = add_node(std::move(n));
  g_.inputs_[name] = id;
  return id;
}

int GraphBuilder::parameter(const std::string& name, Tensor value) {
  if (g_.params_.count(name))
    throw std::invalid_argument("builder: duplicate parameter '" + name + "'");
  if (!value.all_finite())
    throw std::invalid_argument("builder: parameter '" + name + "' has non-finite values");
  GraphNode n;
  n.kind = OpKind::parameter;
  n.name = name;
  n.shape = value.shape();
  g_.params_[name] = std::move(value);
  return add_node(std::move(n));
}

int GraphBuilder::affine(int x, int W, int b) {
  const Shape& xs = shape_of(x);
  const Shape& Ws = shape_of(W);
  const Shape& bs = shape_of(b);
  if (xs.size() != 1 || Ws.size() != 2 || bs.size() != 1)
    throw std::invalid_argument("affine: expects vector x, matrix W, vector b");
  if (Ws[1] != xs[0] || Ws[0] != bs[0])
    throw std::invalid_argument("affine: incompatible shapes W=" +
                                shape_to_string(Ws) + " x=" + shape_to_string(xs) +
                                " b=" + shape_to_string(bs));
  GraphNode n;
  n.kind = OpKind::affine;
  n.args = {x, W, b};
  n.shape = {Ws[0]};
  return add_node(std::move(n));
}

int GraphBuilder::relu(int x) {
  GraphNode n;
  n.kind = OpKind::relu;
  n.args = {x};
  n.shape = shape_of(x);
  return add_node(std::move(n));
}

int GraphBuilder::tanh_fn(int x) {
  GraphNode n;
  n.kind = OpKind::tanh_fn;
  n.args = {x};
  n.shape = shape_of(x);
  return add_node(std::move(n));
}

int GraphBuilder::sigmoid(int x) {
  GraphNode n;
  n.kind = OpKind::sigmoid;
  n.args = {x};
  n.shape = shape_of(x);
  return add_node(std::move(n));
}

static void require_matching_vectors(const Shape& a, const Shape& b,
                                     const char* op) {
  if (a.size() != 1 || b.size() != 1 || a[0] != b[0])
    throw std::invalid_argument(std::string(op) + ": shapes " +
                                shape_to_string(a) + " and " + shape_to_string(b) +
                                " must be equal-length vectors");
}

int GraphBuilder::softmax_cross_entropy(int logits, int target) {
  require_matching_vectors(shape_of(logits), shape_of(target),
                           "softmax_cross_entropy");
  GraphNode n;
  n.kind = OpKind::softmax_cross_entropy;
  n.args = {logits, target};
  n.shape = {1};
  return add_node(std::move(n));
}

int GraphBuilder::mean_l1(int pred, int target) {
  require_matching_vectors(shape_of(pred), shape_of(target), "mean_l1");
  GraphNode n;
  n.kind = OpKind::mean_l1;
  n.args = {pred, target};
  n.shape = {1};
  return add_node(std::move(n));
}

int GraphBuilder::mean_squared_error(int pred, int target) {
  require_matching_vectors(shape_of(pred), shape_of(target),
                           "mean_squared_error");
  GraphNode n;
  n.kind = OpKind::mean_squared_error;
  n.args = {pred, target};
  n.shape = {1};
  return add_node(std::move(n));
}

int GraphBuilder::weighted_sum(const std::vector<int>& args,
                               const std::vector<double>& coeffs) {
  if (args.empty() || args.size() != coeffs.size())
    throw std::invalid_argument("weighted_sum: needs equal nonzero arg/coeff counts");
  for (int a : args)
    if (shape_of(a) != Shape{1})
      throw std::invalid_argument("weighted_sum: all args must be scalar");
  GraphNode n;
  n.kind = OpKind::weighted_sum;
  n.args = args;
  n.coeffs = coeffs;
  n.shape = {1};
  return add_node(std::move(n));
}

void GraphBuilder::mark_output(const std::string& name, int node) {
  if (g_.outputs_.count(name))
    throw std::invalid_argument("builder: duplicate output '" + name + "'");
  shape_of(node);  // validates node index
  g_.outputs_[name] = node;
}

std::map<std::string, int> GraphBuilder::splice(
    const ComputationGraph& g, const std::map<std::string, int>& input_binding,
    const std::string& prefix) {
  std::vector<int> remap(g.nodes_.size(), -1);
  for (std::size_t i = 0; i < g.nodes_.size(); ++i) {
    const GraphNode& n = g.nodes_[i];
    switch (n.kind) {
      case OpKind::input: {
        auto it = input_binding.find(n.name);
        if (it != input_binding.end()) {
          if (shape_of(it->second) != n.shape)
            throw std::invalid_argument("splice: binding for input '" + n.name +
                                        "' has wrong shape");
          remap[i] = it->second;
        } else {
          remap[i] = input(prefix + n.name, n.shape);
        }
        break;
      }
      case OpKind::parameter:
        remap[i] = parameter(prefix + n.name, g.params_.at(n.name));
        break;
      default: {
        GraphNode copy = n;
        for (int& a : copy.args) {
          a = remap[a];
          if (a < 0) throw std::logic_error("splice: forward reference");
        }
        remap[i] = add_node(std::move(copy));
      }
    }
  }
  std::map<std::string, int> outs;
  for (const auto& [name, idx] : g.outputs_) outs[name] = remap[idx];
  return outs;
}

ComputationGraph GraphBuilder::build() { return std::move(g_); }

namespace {

// Single evaluation of a graph: per-node values, then adjoints.
struct Evaluator {
  const ComputationGraph& g;
  std::vector<Tensor> value;

  explicit Evaluator(const ComputationGraph& graph) : g(graph) {}

  void forward(const std::map<std::string, Tensor>& inputs) {
    const auto& nodes = g.nodes();
    value.assign(nodes.size(), Tensor());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const GraphNode& n = nodes[i];
      switch (n.kind) {
        case OpKind::input: {
          auto it = inputs.find(n.name);
          if (it == inputs.end())
            throw std::invalid_argument("forward_eval: input '" + n.name +
                                        "' not bound");
          if (it->second.shape() != n.shape)
            throw std::invalid_argument(
                "forward_eval: input '" + n.name + "' has shape " +
                shape_to_string(it->second.shape()) + ", graph expects " +
                shape_to_string(n.shape));
          value[i] = it->second;
          break;
        }
        case OpKind::parameter:
          value[i] = g.parameters().at(n.name);
          break;
        case OpKind::affine: {
          const Tensor& x = value[n.args[0]];
          const Tensor& W = value[n.args[1]];
          const Tensor& b = value[n.args[2]];
          const std::size_t m = W.shape()[0], k = W.shape()[1];
          Tensor out({m});
          for (std::size_t r = 0; r < m; ++r) {
            double s = b[r];
            const std::size_t row = r * k;
            for (std::size_t c = 0; c < k; ++c) s += W[row + c] * x[c];
            out[r] = s;
          }
          value[i] = std::move(out);
          break;
        }
        case OpKind::relu: {
          Tensor out = value[n.args[0]];
          for (std::size_t j = 0; j < out.size(); ++j)
            out[j] = out[j] > 0.0 ? out[j] : 0.0;
          value[i] = std::move(out);
          break;
        }
        case OpKind::tanh_fn: {
          Tensor out = value[n.args[0]];
          for (std::size_t j = 0; j < out.size(); ++j) out[j] = std::tanh(out[j]);
          value[i] = std::move(out);
          break;
        }
        case OpKind::sigmoid: {
          Tensor out = value[n.args[0]];
          for (std::size_t j = 0; j < out.size(); ++j)
            out[j] = 1.0 / (1.0 + std::exp(-out[j]));
          value[i] = std::move(out);
          break;
        }
        case OpKind::softmax_cross_entropy: {
          const Tensor& z = value[n.args[0]];
          const Tensor& t = value[n.args[1]];
          double zmax = z[0];
          for (std::size_t j = 1; j < z.size(); ++j) zmax = std::max(zmax, z[j]);
          double sum = 0.0;
          for (std::size_t j = 0; j < z.size(); ++j) sum += std::exp(z[j] - zmax);
          const double lse = zmax + std::log(sum);
          double tmass = 0.0, tz = 0.0;
          for (std::size_t j = 0; j < z.size(); ++j) {
            tmass += t[j];
            tz += t[j] * z[j];
          }
          value[i] = Tensor::scalar(tmass * lse - tz);
          break;
        }
        case OpKind::mean_l1: {
          const Tensor& a = value[n.args[0]];
          const Tensor& b = value[n.args[1]];
          double s = 0.0;
          for (std::size_t j = 0; j < a.size(); ++j) s += std::abs(a[j] - b[j]);
          value[i] = Tensor::scalar(s / static_cast<double>(a.size()));
          break;
        }
        case OpKind::mean_squared_error: {
          const Tensor& a = value[n.args[0]];
          const Tensor& b = value[n.args[1]];
          double s = 0.0;
          for (std::size_t j = 0; j < a.size(); ++j) {
            const double d = a[j] - b[j];
            s += d * d;
          }
          value[i] = Tensor::scalar(s / static_cast<double>(a.size()));
          break;
        }
        case OpKind::weighted_sum: {
          double s = 0.0;
          for (std::size_t j = 0; j < n.args.size(); ++j)
            s += n.coeffs[j] * value[n.args[j]][0];
          value[i] = Tensor::scalar(s);
          break;
        }
      }
      if (!value[i].all_finite())
        throw std::runtime_error("forward_eval: non-finite value at node " +
                                 std::to_string(i) + " (" +
                                 op_kind_name(n.kind) + ")");
    }
  }

  // Seeds: scalar adjoint per node index. Returns adjoint per node.
  std::vector<Tensor> backward(const std::map<int, double>& seeds) {
    const auto& nodes = g.nodes();
    std::vector<Tensor> adj(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) adj[i] = Tensor(nodes[i].shape);
    for (const auto& [idx, w] : seeds) {
      if (nodes[idx].shape != Shape{1})
        throw std::invalid_argument("grad: output node " + std::to_string(idx) +
                                    " is not scalar");
      adj[idx][0] += w;
    }
    for (int i = static_cast<int>(nodes.size()) - 1; i >= 0; --i) {
      const GraphNode& n = nodes[i];
      const Tensor& ybar = adj[i];
      switch (n.kind) {
        case OpKind::input:
        case OpKind::parameter:
          break;
        case OpKind::affine: {
          const Tensor& x = value[n.args[0]];
          const Tensor& W = value[n.args[1]];
          Tensor& dx = adj[n.args[0]];
          Tensor& dW = adj[n.args[1]];
          Tensor& db = adj[n.args[2]];
          const std::size_t m = W.shape()[0], k = W.shape()[1];
          for (std::size_t r = 0; r < m; ++r) {
            const double yr = ybar[r];
            if (yr == 0.0) continue;
            const std::size_t row = r * k;
            for (std::size_t c = 0; c < k; ++c) {
              dx[c] += W[row + c] * yr;
              dW[row + c] += yr * x[c];
            }
            db[r] += yr;
          }
          break;
        }
        case OpKind::relu: {
          const Tensor& x = value[n.args[0]];
          Tensor& dx = adj[n.args[0]];
          for (std::size_t j = 0; j < x.size(); ++j)
            if (x[j] > 0.0) dx[j] += ybar[j];
          break;
        }
        case OpKind::tanh_fn: {
          const Tensor& y = value[i];
          Tensor& dx = adj[n.args[0]];
          for (std::size_t j = 0; j < y.size(); ++j)
            dx[j] += ybar[j] * (1.0 - y[j] * y[j]);
          break;
        }
        case OpKind::sigmoid: {
          const Tensor& y = value[i];
          Tensor& dx = adj[n.args[0]];
          for (std::size_t j = 0; j < y.size(); ++j)
            dx[j] += ybar[j] * y[j] * (1.0 - y[j]);
          break;
        }
        case OpKind::softmax_cross_entropy: {
          // d/dz = tmass * softmax(z) - t; target treated as constant
          const Tensor& z = value[n.args[0]];
          const Tensor& t = value[n.args[1]];
          Tensor& dz = adj[n.args[0]];
          double zmax = z[0];
          for (std::size_t j = 1; j < z.size(); ++j) zmax = std::max(zmax, z[j]);
          double sum = 0.0;
          for (std::size_t j = 0; j < z.size(); ++j) sum += std::exp(z[j] - zmax);
          double tmass = 0.0;
          for (std::size_t j = 0; j < t.size(); ++j) tmass += t[j];
          const double g0 = ybar[0];
          for (std::size_t j = 0; j < z.size(); ++j) {
            const double p = std::exp(z[j] - zmax) / sum;
            dz[j] += g0 * (tmass * p - t[j]);
          }
          break;
        }
        case OpKind::mean_l1: {
          const Tensor& a = value[n.args[0]];
          const Tensor& b = value[n.args[1]];
          Tensor& da = adj[n.args[0]];
          Tensor& db = adj[n.args[1]];
          const double c = ybar[0] / static_cast<double>(a.size());
          for (std::size_t j = 0; j < a.size(); ++j) {
            const double d = a[j] - b[j];
            const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
            da[j] += c * s;
            db[j] -= c * s;
          }
          break;
        }
        case OpKind::mean_squared_error: {
          const Tensor& a = value[n.args[0]];
          const Tensor& b = value[n.args[1]];
          Tensor& da = adj[n.args[0]];
          Tensor& db = adj[n.args[1]];
          const double c = 2.0 * ybar[0] / static_cast<double>(a.size());
          for (std::size_t j = 0; j < a.size(); ++j) {
            const double d = a[j] - b[j];
            da[j] += c * d;
            db[j] -= c * d;
          }
          break;
        }
        case OpKind::weighted_sum: {
          for (std::size_t j = 0; j < n.args.size(); ++j)
            adj[n.args[j]][0] += n.coeffs[j] * ybar[0];
          break;
        }
      }
    }
    return adj;
  }
};

}  // namespace

std::map<std::string, Tensor> forward_eval(
    const ComputationGraph& g, const std::map<std::string, Tensor>& inputs) {
  Evaluator ev(g);
  ev.forward(inputs);
  std::map<std::string, Tensor> out;
  for (const auto& [name, idx] : g.outputs()) out[name] = ev.value[idx];
  return out;
}

Tensor grad_input(const ComputationGraph& g,
                  const std::map<std::string, Tensor>& inputs,
                  const std::string& scalar_output,
                  const std::string& input_name) {
  return grad_input_weighted(g, inputs, {{scalar_output, 1.0}}, input_name);
}

Tensor grad_input_weighted(const ComputationGraph& g,
                           const std::map<std::string, Tensor>& inputs,
                           const std::map<std::string, double>& output_coeffs,
                           const std::string& input_name) {
  auto in_it = g.inputs().find(input_name);
  if (in_it == g.inputs().end())
    throw std::invalid_argument("grad_input: unknown input '" + input_name + "'");
  Evaluator ev(g);
  ev.forward(inputs);
  std::map<int, double> seeds;
  for (const auto& [name, w] : output_coeffs) seeds[g.output_node(name)] += w;
  auto adj = ev.backward(seeds);
  return adj[in_it->second];
}

std::map<std::string, Tensor> grad_params(
    const ComputationGraph& g, const std::map<std::string, Tensor>& inputs,
    const std::string& scalar_output) {
  Evaluator ev(g);
  ev.forward(inputs);
  auto adj = ev.backward({{g.output_node(scalar_output), 1.0}});
  std::map<std::string, Tensor> out;
  const auto& nodes = g.nodes();
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].kind == OpKind::parameter) out[nodes[i].name] = adj[i];
  return out;
}

}  // namespace mtadv
