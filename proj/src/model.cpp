#include "mtadv/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "mtadv/rng.hpp"

namespace mtadv {

std::string task_kind_name(TaskKind k) {
  return k == TaskKind::classification ? "classification" : "regression";
}
std::string loss_kind_name(LossKind k) {
  switch (k) {
    case LossKind::cross_entropy: return "cross_entropy";
    case LossKind::l1: return "l1";
    case LossKind::mse: return "mse";
  }
  return "?";
}
std::string error_kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::one_minus_accuracy: return "one_minus_accuracy";
    case ErrorKind::one_minus_iou: return "one_minus_iou";
    case ErrorKind::mse: return "mse";
    case ErrorKind::l1: return "l1";
  }
  return "?";
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "classification") return TaskKind::classification;
  if (s == "regression") return TaskKind::regression;
  throw std::invalid_argument("unknown task kind '" + s + "'");
}
LossKind loss_kind_from_string(const std::string& s) {
  if (s == "cross_entropy") return LossKind::cross_entropy;
  if (s == "l1") return LossKind::l1;
  if (s == "mse") return LossKind::mse;
  throw std::invalid_argument("unknown loss kind '" + s + "'");
}
ErrorKind error_kind_from_string(const std::string& s) {
  if (s == "one_minus_accuracy") return ErrorKind::one_minus_accuracy;
  if (s == "one_minus_iou") return ErrorKind::one_minus_iou;
  if (s == "mse") return ErrorKind::mse;
  if (s == "l1") return ErrorKind::l1;
  throw std::invalid_argument("unknown error kind '" + s + "'");
}

void TaskSpec::validate() const {
  if (id.empty()) throw std::invalid_argument("TaskSpec: empty id");
  if (target_shape.empty() || shape_size(target_shape) == 0)
    throw std::invalid_argument("TaskSpec '" + id + "': bad target shape");
  if (kind == TaskKind::classification && loss != LossKind::cross_entropy)
    throw std::invalid_argument("TaskSpec '" + id +
                                "': classification requires cross_entropy loss");
  if (kind == TaskKind::regression && loss == LossKind::cross_entropy)
    throw std::invalid_argument("TaskSpec '" + id +
                                "': regression requires l1 or mse loss");
}

MultiTaskModel::MultiTaskModel(ComputationGraph encoder,
                               std::map<std::string, ComputationGraph> decoders,
                               std::map<std::string, double> weights,
                               std::vector<TaskSpec> tasks)
    : encoder_(std::move(encoder)),
      decoders_(std::move(decoders)),
      weights_(std::move(weights)),
      tasks_(std::move(tasks)) {
  if (tasks_.empty()) throw std::invalid_argument("model: empty task list");
  double wsum = 0.0;
  for (const TaskSpec& t : tasks_) {
    t.validate();
    if (!decoders_.count(t.id))
      throw std::invalid_argument("model: missing decoder for task '" + t.id + "'");
    auto w = weights_.find(t.id);
    if (w == weights_.end())
      throw std::invalid_argument("model: missing weight for task '" + t.id + "'");
    if (w->second < 0.0)
      throw std::invalid_argument("model: negative weight for task '" + t.id + "'");
    wsum += w->second;
  }
  if (decoders_.size() != tasks_.size() || weights_.size() != tasks_.size())
    throw std::invalid_argument("model: decoder/weight keys must match task ids");
  if (!(wsum > 0.0))
    throw std::invalid_argument("model: at least one task weight must be positive");
  if (!encoder_.has_input("x") || !encoder_.has_output("features"))
    throw std::invalid_argument("model: encoder must map input 'x' to output 'features'");
  for (const auto& [id, dec] : decoders_)
    if (!dec.has_input("features") || !dec.has_output("pred"))
      throw std::invalid_argument("model: decoder '" + id +
                                  "' must map 'features' to 'pred'");
}

const TaskSpec& MultiTaskModel::task(const std::string& id) const {
  for (const TaskSpec& t : tasks_)
    if (t.id == id) return t;
  throw std::invalid_argument("model: unknown task '" + id + "'");
}

bool MultiTaskModel::has_task(const std::string& id) const {
  for (const TaskSpec& t : tasks_)
    if (t.id == id) return true;
  return false;
}

std::vector<std::string> MultiTaskModel::task_ids() const {
  std::vector<std::string> ids;
  for (const TaskSpec& t : tasks_) ids.push_back(t.id);
  return ids;
}

double MultiTaskModel::weight(const std::string& id) const {
  auto it = weights_.find(id);
  if (it == weights_.end())
    throw std::invalid_argument("model: unknown task '" + id + "'");
  return it->second;
}

const ComputationGraph& MultiTaskModel::decoder(const std::string& id) const {
  auto it = decoders_.find(id);
  if (it == decoders_.end())
    throw std::invalid_argument("model: unknown task '" + id + "'");
  return it->second;
}

std::set<std::string> MultiTaskModel::all_task_set() const {
  std::set<std::string> s;
  for (const TaskSpec& t : tasks_) s.insert(t.id);
  return s;
}

std::shared_ptr<const ComputationGraph> MultiTaskModel::joint_graph(
    const std::set<std::string>& attacked) const {
  if (attacked.empty())
    throw std::invalid_argument("joint_graph: empty attacked set");
  std::string key;
  for (const std::string& id : attacked) {
    if (!has_task(id))
      throw std::invalid_argument("joint_graph: unknown task '" + id + "'");
    key += id;
    key += '\x1f';
  }
  {
    std::lock_guard<std::mutex> lock(cache_->mutex);
    auto it = cache_->map.find(key);
    if (it != cache_->map.end()) return it->second;
  }

  GraphBuilder b;
  int x = b.input("x", encoder_.nodes()[encoder_.inputs().at("x")].shape);
  auto enc_outs = b.splice(encoder_, {{"x", x}}, "enc.");
  int features = enc_outs.at("features");

  std::vector<int> losses;
  std::vector<double> coeffs;
  for (const std::string& id : attacked) {
    const TaskSpec& spec = task(id);
    auto dec_outs =
        b.splice(decoders_.at(id), {{"features", features}}, "dec." + id + ".");
    int pred = dec_outs.at("pred");
    int target = b.input("y." + id, spec.target_shape);
    int loss = -1;
    switch (spec.loss) {
      case LossKind::cross_entropy:
        loss = b.softmax_cross_entropy(pred, target);
        break;
      case LossKind::l1:
        loss = b.mean_l1(pred, target);
        break;
      case LossKind::mse:
        loss = b.mean_squared_error(pred, target);
        break;
    }
    b.mark_output("pred." + id, pred);
    b.mark_output("loss." + id, loss);
    losses.push_back(loss);
    coeffs.push_back(weights_.at(id));
  }
  b.mark_output("features", features);
  b.mark_output("joint", b.weighted_sum(losses, coeffs));

  auto built = std::make_shared<const ComputationGraph>(b.build());
  std::lock_guard<std::mutex> lock(cache_->mutex);
  auto [it, inserted] = cache_->map.emplace(key, built);
  return it->second;
}

std::map<std::string, Tensor> MultiTaskModel::bind_inputs(
    const Tensor& x, const std::map<std::string, Tensor>& ybar,
    const std::set<std::string>& attacked) const {
  std::map<std::string, Tensor> inputs;
  inputs["x"] = x;
  for (const std::string& id : attacked) {
    auto it = ybar.find(id);
    if (it == ybar.end())
      throw std::invalid_argument("bind_inputs: missing target for task '" + id +
                                  "'");
    inputs["y." + id] = it->second;
  }
  return inputs;
}

namespace {

Tensor glorot_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Tensor W({rows, cols});
  for (std::size_t i = 0; i < W.size(); ++i) W[i] = rng.uniform(-bound, bound);
  return W;
}

// affine -> tanh stack; final layer also tanh so features are bounded
ComputationGraph build_encoder(const std::vector<std::size_t>& spec, Rng& rng) {
  if (spec.size() < 2)
    throw std::invalid_argument("build_model: encoder spec needs >= 2 dims");
  GraphBuilder b;
  int h = b.input("x", {spec[0]});
  for (std::size_t l = 0; l + 1 < spec.size(); ++l) {
    const std::string tag = std::to_string(l);
    int W = b.parameter("W" + tag, glorot_matrix(spec[l + 1], spec[l], rng));
    int bias = b.parameter("b" + tag, Tensor({spec[l + 1]}));
    h = b.tanh_fn(b.affine(h, W, bias));
  }
  b.mark_output("features", h);
  return b.build();
}

constexpr std::size_t kDecoderHidden = 16;

// fixed two-layer decoder: affine -> tanh -> affine
ComputationGraph build_decoder(std::size_t feature_dim, std::size_t out_dim,
                               Rng& rng) {
  GraphBuilder b;
  int h = b.input("features", {feature_dim});
  int W0 = b.parameter("W0", glorot_matrix(kDecoderHidden, feature_dim, rng));
  int b0 = b.parameter("b0", Tensor({kDecoderHidden}));
  int W1 = b.parameter("W1", glorot_matrix(out_dim, kDecoderHidden, rng));
  int b1 = b.parameter("b1", Tensor({out_dim}));
  int pred = b.affine(b.tanh_fn(b.affine(h, W0, b0)), W1, b1);
  b.mark_output("pred", pred);
  return b.build();
}

}  // namespace

MultiTaskModel build_model(const std::vector<std::size_t>& encoder_spec,
                           const std::vector<TaskSpec>& tasks,
                           const std::vector<double>& weights,
                           std::uint64_t seed) {
  if (tasks.empty()) throw std::invalid_argument("build_model: empty task list");
  if (!weights.empty() && weights.size() != tasks.size())
    throw std::invalid_argument("build_model: weights length must match tasks");

  Rng rng(derive_seed(seed, fnv1a("model-init")));
  ComputationGraph encoder = build_encoder(encoder_spec, rng);
  const std::size_t feature_dim = encoder_spec.back();

  std::map<std::string, ComputationGraph> decoders;
  std::map<std::string, double> wmap;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const TaskSpec& t = tasks[i];
    if (decoders.count(t.id))
      throw std::invalid_argument("build_model: duplicate task id '" + t.id + "'");
    decoders.emplace(t.id,
                     build_decoder(feature_dim, shape_size(t.target_shape), rng));
    wmap[t.id] = weights.empty() ? 1.0 / static_cast<double>(tasks.size())
                                 : weights[i];
  }
  return MultiTaskModel(std::move(encoder), std::move(decoders), std::move(wmap),
                        tasks);
}

double task_loss(const MultiTaskModel& model, const Tensor& x, const Tensor& y,
                 const std::string& task) {
  auto g = model.joint_graph({task});
  auto out = forward_eval(*g, model.bind_inputs(x, {{task, y}}, {task}));
  return out.at("loss." + task)[0];
}

double joint_loss(const MultiTaskModel& model, const Tensor& x,
                  const std::map<std::string, Tensor>& ybar,
                  const std::set<std::string>& attacked) {
  if (attacked.empty())
    throw std::invalid_argument("joint_loss: empty attacked set");
  auto g = model.joint_graph(attacked);
  auto out = forward_eval(*g, model.bind_inputs(x, ybar, attacked));
  return out.at("joint")[0];
}

Tensor joint_loss_grad(const MultiTaskModel& model, const Tensor& x,
                       const std::map<std::string, Tensor>& ybar,
                       const std::set<std::string>& attacked) {
  auto g = model.joint_graph(attacked);
  return grad_input(*g, model.bind_inputs(x, ybar, attacked), "joint", "x");
}

Tensor task_loss_grad(const MultiTaskModel& model, const Tensor& x,
                      const Tensor& y, const std::string& task) {
  auto g = model.joint_graph({task});
  return grad_input(*g, model.bind_inputs(x, {{task, y}}, {task}),
                    "loss." + task, "x");
}

TrainResult train(const MultiTaskModel& model, const Dataset& data,
                  const TrainConfig& cfg) {
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  if (!(cfg.learning_rate > 0.0))
    throw std::invalid_argument("train: learning_rate must be > 0");
  if (cfg.batch_size == 0)
    throw std::invalid_argument("train: batch_size must be >= 1");

  const auto all = model.all_task_set();
  // private trainable copy of the composed all-task graph
  ComputationGraph g = *model.joint_graph(all);

  std::map<std::string, Tensor> velocity;
  for (const auto& [name, p] : g.parameters()) velocity[name] = Tensor(p.shape());

  Rng rng(derive_seed(cfg.seed, fnv1a("train-shuffle")));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result{model, {}, 0};
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates with our own Rng so the permutation is reproducible
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.below(i)]);

    double epoch_loss_sum = 0.0;
    std::size_t epoch_examples = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::map<std::string, Tensor> grad_sum;
      double batch_loss = 0.0;
      try {
        for (std::size_t k = start; k < end; ++k) {
          const Example& ex = data[order[k]];
          auto inputs = model.bind_inputs(ex.x, ex.targets, all);
          auto outs = forward_eval(g, inputs);
          batch_loss += outs.at("joint")[0];
          auto grads = grad_params(g, inputs, "joint");
          if (grad_sum.empty()) {
            grad_sum = std::move(grads);
          } else {
            for (auto& [name, acc] : grad_sum) {
              const Tensor& ginc = grads.at(name);
              for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += ginc[j];
            }
          }
        }
      } catch (const std::runtime_error& e) {
        throw std::runtime_error("train: loss diverged at epoch " +
                                 std::to_string(epoch) + ": " + e.what());
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      batch_loss *= inv;
      if (!std::isfinite(batch_loss))
        throw std::runtime_error("train: loss diverged (non-finite) at epoch " +
                                 std::to_string(epoch));
      epoch_loss_sum += batch_loss * static_cast<double>(end - start);
      epoch_examples += end - start;

      for (auto& [name, gsum] : grad_sum) {
        Tensor p = g.parameter(name);
        Tensor& v = velocity.at(name);
        for (std::size_t j = 0; j < p.size(); ++j) {
          const double step = cfg.learning_rate * gsum[j] * inv;
          if (cfg.momentum) {
            v[j] = 0.9 * v[j] + step;
            p[j] -= v[j];
          } else {
            p[j] -= step;
          }
        }
        g.set_parameter(name, std::move(p));
      }
      ++result.steps;
    }
    result.epoch_loss.push_back(epoch_loss_sum /
                                static_cast<double>(epoch_examples));
  }

  // copy updated parameters back into per-component graphs
  ComputationGraph enc = model.encoder();
  for (const auto& [name, val] : enc.parameters())
    enc.set_parameter(name, g.parameter("enc." + name));
  std::map<std::string, ComputationGraph> decs;
  for (const TaskSpec& t : model.tasks()) {
    ComputationGraph d = model.decoder(t.id);
    for (const auto& [name, val] : d.parameters())
      d.set_parameter(name, g.parameter("dec." + t.id + "." + name));
    decs.emplace(t.id, std::move(d));
  }
  result.model = MultiTaskModel(std::move(enc), std::move(decs), model.weights(),
                                model.tasks());
  return result;
}

namespace {

std::size_t argmax(const Tensor& t) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < t.size(); ++i)
    if (t[i] > t[best]) best = i;
  return best;
}

}  // namespace

double task_error(const MultiTaskModel& model, const Tensor& x, const Tensor& y,
                  const std::string& task) {
  const TaskSpec& spec = model.task(task);
  auto g = model.joint_graph({task});
  auto out = forward_eval(*g, model.bind_inputs(x, {{task, y}}, {task}));
  const Tensor& pred = out.at("pred." + task);
  switch (spec.error) {
    case ErrorKind::one_minus_accuracy:
      return argmax(pred) == argmax(y) ? 0.0 : 1.0;
    case ErrorKind::one_minus_iou: {
      // hard 0.5 threshold on predictions and targets
      std::size_t inter = 0, uni = 0;
      for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] > 0.5;
        const bool t = y[i] > 0.5;
        inter += (p && t) ? 1 : 0;
        uni += (p || t) ? 1 : 0;
      }
      const double iou =
          uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
      return 1.0 - iou;
    }
    case ErrorKind::mse: {
      double s = 0.0;
      for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - y[i];
        s += d * d;
      }
      return s / static_cast<double>(pred.size());
    }
    case ErrorKind::l1: {
      double s = 0.0;
      for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - y[i]);
      return s / static_cast<double>(pred.size());
    }
  }
  throw std::logic_error("task_error: unhandled error kind");
}

double clean_error(const MultiTaskModel& model, const Dataset& data,
                   const std::string& task) {
  if (data.empty()) throw std::invalid_argument("clean_error: empty dataset");
  double s = 0.0;
  for (const Example& ex : data) {
    auto it = ex.targets.find(task);
    if (it == ex.targets.end())
      throw std::invalid_argument("clean_error: example lacks target for task '" +
                                  task + "'");
    s += task_error(model, ex.x, it->second, task);
  }
  return s / static_cast<double>(data.size());
}

}  // namespace mtadv
