#include "mtadv/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "mtadv/rng.hpp"
#include "mtadv/vuln.hpp"

namespace fs = std::filesystem;

namespace mtadv {

CombinationPolicy policy_from_string(const std::string& s) {
  if (s == "pairs") return CombinationPolicy::pairs;
  if (s == "incremental") return CombinationPolicy::incremental;
  if (s == "all_subsets_up_to_k") return CombinationPolicy::all_subsets_up_to_k;
  throw std::invalid_argument("unknown combination policy '" + s + "'");
}

void ExperimentConfig::validate() const {
  if (dataset_path.empty()) dataset.validate();
  if (attacks.empty())
    throw std::invalid_argument("config: at least one attack required");
  if (encoder.empty())
    throw std::invalid_argument("config: encoder spec is empty");
  if (output_dir.empty())
    throw std::invalid_argument("config: output_dir is empty");
  if (!weights.empty() && !dataset.tasks.empty() &&
      weights.size() != dataset.tasks.size())
    throw std::invalid_argument("config: weights length must match dataset tasks");
}

// ---------------------------------------------------------------------------
// config parsing

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  const std::string last = trim(cur);
  if (!last.empty()) out.push_back(last);
  return out;
}

std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> out;
  for (const std::string& tok : split(s, ',')) out.push_back(std::stod(tok));
  return out;
}

std::vector<std::size_t> parse_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  for (const std::string& tok : split(s, ',')) out.push_back(std::stoull(tok));
  return out;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw std::invalid_argument("config: bad boolean '" + s + "'");
}

// id:kind:target_dim[:sharpness]
SynthTaskSpec parse_task(const std::string& s) {
  const auto f = split(s, ':');
  if (f.size() < 3 || f.size() > 4)
    throw std::invalid_argument("config: bad task spec '" + s +
                                "' (want id:kind:target_dim[:sharpness])");
  SynthTaskSpec t;
  t.id = f[0];
  t.kind = task_kind_from_string(f[1]);
  t.target_dim = std::stoull(f[2]);
  t.sharpness = f.size() == 4 ? std::stod(f[3]) : 1.0;
  return t;
}

void apply_key(ExperimentConfig& cfg, AttackConfig& base_attack,
               std::vector<std::string>& variants, const std::string& key,
               const std::string& value) {
  if (key == "seed") cfg.seed = std::stoull(value);
  else if (key == "output_dir") cfg.output_dir = value;
  else if (key == "dataset.path") cfg.dataset_path = value;
  else if (key == "dataset.latent_dim") cfg.dataset.latent_dim = std::stoull(value);
  else if (key == "dataset.input_dim") cfg.dataset.input_dim = std::stoull(value);
  else if (key == "dataset.n_examples") cfg.dataset.n_examples = std::stoull(value);
  else if (key == "dataset.noise_std") cfg.dataset.noise_std = std::stod(value);
  else if (key == "dataset.seed") cfg.dataset.seed = std::stoull(value);
  else if (key == "dataset.tasks") {
    cfg.dataset.tasks.clear();
    for (const std::string& tok : split(value, ','))
      cfg.dataset.tasks.push_back(parse_task(tok));
  } else if (key == "model.encoder") cfg.encoder = parse_sizes(value);
  else if (key == "model.weights") cfg.weights = parse_doubles(value);
  else if (key == "train.epochs") cfg.train.epochs = std::stoull(value);
  else if (key == "train.batch_size") cfg.train.batch_size = std::stoull(value);
  else if (key == "train.learning_rate") cfg.train.learning_rate = std::stod(value);
  else if (key == "train.momentum") cfg.train.momentum = parse_bool(value);
  else if (key == "train.seed") cfg.train.seed = std::stoull(value);
  else if (key == "attack.variant") variants = split(value, ',');
  else if (key == "attack.epsilon") base_attack.epsilon = std::stod(value);
  else if (key == "attack.steps") base_attack.steps = std::stoull(value);
  else if (key == "attack.step_size") base_attack.step_size = std::stod(value);
  else if (key == "attack.norm") base_attack.p = pnorm_from_string(value);
  else if (key == "attack.random_start") base_attack.random_start = parse_bool(value);
  else if (key == "attack.rate_inverted") base_attack.rate_inverted = parse_bool(value);
  else if (key == "attack.bounds") {
    const auto b = parse_doubles(value);
    if (b.size() != 2) throw std::invalid_argument("config: attack.bounds wants lo,hi");
    base_attack.input_bounds = {{b[0], b[1]}};
  } else if (key == "sweep.epsilon") cfg.sweep.epsilon = parse_doubles(value);
  else if (key == "sweep.steps") cfg.sweep.steps = parse_sizes(value);
  else if (key == "sweep.norm") {
    cfg.sweep.norms.clear();
    for (const std::string& tok : split(value, ','))
      cfg.sweep.norms.push_back(pnorm_from_string(tok));
  } else if (key == "sweep.policy") cfg.sweep.policy = policy_from_string(value);
  else if (key == "sweep.max_subset") cfg.sweep.max_subset = std::stoull(value);
  else if (key == "sweep.encoders") {
    cfg.sweep.encoders.clear();
    for (const std::string& tok : split(value, ';'))
      cfg.sweep.encoders.push_back(parse_sizes(tok));
  } else if (key == "sweep.epochs") cfg.sweep.epochs = parse_sizes(value);
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

ExperimentConfig finish_config(ExperimentConfig cfg, AttackConfig base,
                               const std::vector<std::string>& variants) {
  if (variants.empty()) {
    base.variant = AttackVariant::pgd;
    cfg.attacks.push_back(base);
  } else {
    for (const std::string& v : variants) {
      AttackConfig a = base;
      a.variant = variant_from_string(v);
      if (a.variant == AttackVariant::fgsm) {
        a.steps = 1;
        a.random_start = false;
        a.p = PNorm::linf;
      }
      cfg.attacks.push_back(a);
    }
  }
  cfg.validate();
  return cfg;
}

void flatten_json(const nlohmann::json& j, const std::string& prefix,
                  std::vector<std::pair<std::string, std::string>>& out) {
  if (j.is_object()) {
    for (const auto& [k, v] : j.items())
      flatten_json(v, prefix.empty() ? k : prefix + "." + k, out);
  } else if (j.is_array()) {
    std::string joined;
    for (const auto& v : j) {
      if (!joined.empty()) joined += ',';
      if (v.is_string()) joined += v.get<std::string>();
      else joined += v.dump();
    }
    out.emplace_back(prefix, joined);
  } else if (j.is_string()) {
    out.emplace_back(prefix, j.get<std::string>());
  } else {
    out.emplace_back(prefix, j.dump());
  }
}

}  // namespace

ExperimentConfig ExperimentConfig::from_text(const std::string& text) {
  ExperimentConfig cfg;
  AttackConfig base;
  base.attacked = {"_"};  // placeholder; the sweep assigns attacked sets
  std::vector<std::string> variants;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: bad line '" + line + "'");
    apply_key(cfg, base, variants, trim(line.substr(0, eq)),
              trim(line.substr(eq + 1)));
  }
  return finish_config(std::move(cfg), std::move(base), variants);
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  std::vector<std::pair<std::string, std::string>> kv;
  flatten_json(j, "", kv);
  ExperimentConfig cfg;
  AttackConfig base;
  base.attacked = {"_"};
  std::vector<std::string> variants;
  for (const auto& [k, v] : kv) apply_key(cfg, base, variants, k, v);
  return finish_config(std::move(cfg), std::move(base), variants);
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open '" + path + "'");
  std::stringstream buf;
  buf << is.rdbuf();
  const std::string text = buf.str();
  const std::string trimmed = trim(text);
  if ((path.size() > 5 && path.substr(path.size() - 5) == ".json") ||
      (!trimmed.empty() && trimmed[0] == '{'))
    return from_json(text);
  return from_text(text);
}

// ---------------------------------------------------------------------------
// sweep execution

std::size_t worker_count() {
  if (const char* env = std::getenv("MTADVLAB_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

namespace {

std::string join_ids(const std::vector<std::string>& ids) {
  std::string s;
  for (const std::string& id : ids) {
    if (!s.empty()) s += '+';
    s += id;
  }
  return s;
}

std::string encoder_id_string(const std::vector<std::size_t>& dims) {
  std::string s;
  for (std::size_t d : dims) {
    if (!s.empty()) s += '-';
    s += std::to_string(d);
  }
  return s;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string canonical_synth_string(const SynthSpec& s) {
  std::string out = "k=" + std::to_string(s.latent_dim) +
                    ";d=" + std::to_string(s.input_dim) +
                    ";n=" + std::to_string(s.n_examples) +
                    ";noise=" + format_double(s.noise_std) +
                    ";seed=" + std::to_string(s.seed) + ";tasks=";
  for (const SynthTaskSpec& t : s.tasks)
    out += t.id + ':' + task_kind_name(t.kind) + ':' +
           std::to_string(t.target_dim) + ':' + format_double(t.sharpness) + ',';
  return out;
}

struct ModelCell {
  std::vector<std::string> tasks;  // dataset order
  std::vector<std::size_t> encoder_dims;
  std::size_t epochs = 0;
  std::string cache_key;
};

struct MetricCell {
  std::size_t model_index = 0;
  std::string main_task;
  std::vector<std::string> aux;
  AttackConfig attack;
};

struct Plan {
  std::vector<ModelCell> models;
  std::vector<MetricCell> metrics;
};

std::vector<double> subset_weights(const SynthSpec& spec,
                                   const std::vector<double>& weights,
                                   const std::vector<std::string>& tasks) {
  if (weights.empty()) return {};
  std::vector<double> w;
  for (const std::string& id : tasks)
    for (std::size_t i = 0; i < spec.tasks.size(); ++i)
      if (spec.tasks[i].id == id) w.push_back(weights[i]);
  return w;
}

std::vector<TaskSpec> subset_task_specs(const SynthSpec& spec,
                                        const std::vector<std::string>& ids) {
  const auto all = model_tasks_for(spec);
  std::vector<TaskSpec> out;
  for (const std::string& id : ids)
    for (const TaskSpec& t : all)
      if (t.id == id) out.push_back(t);
  return out;
}

std::string canonical_model_string(const SynthSpec& spec,
                                   const std::vector<double>& weights,
                                   const TrainConfig& train,
                                   const ModelCell& cell,
                                   const std::string& dataset_key) {
  std::string s = "enc=" + encoder_id_string(cell.encoder_dims) + ";tasks=";
  for (const TaskSpec& t : subset_task_specs(spec, cell.tasks))
    s += t.id + ':' + task_kind_name(t.kind) + ':' +
         std::to_string(shape_size(t.target_shape)) + ':' +
         loss_kind_name(t.loss) + ',';
  s += ";weights=";
  const auto w = subset_weights(spec, weights, cell.tasks);
  if (w.empty()) s += "uniform";
  for (double v : w) s += format_double(v) + ',';
  s += ";train=" + std::to_string(cell.epochs) + ',' +
       std::to_string(train.batch_size) + ',' +
       format_double(train.learning_rate) + ',' + std::to_string(train.seed) +
       ',' + (train.momentum ? "mom" : "sgd");
  s += ";data=" + dataset_key;
  return s;
}

// task combinations by policy -> (model task set, main, aux) triples
struct Combo {
  std::vector<std::string> tasks;
  std::string main_task;
  std::vector<std::string> aux;
};

std::vector<Combo> combos_for_policy(const SweepAxes& axes,
                                     const std::vector<std::string>& ids) {
  std::vector<Combo> out;
  switch (axes.policy) {
    case CombinationPolicy::pairs: {
      for (const std::string& id : ids) out.push_back({{id}, id, {}});
      for (const std::string& main : ids)
        for (const std::string& aux : ids) {
          if (main == aux) continue;
          // model trains on the unordered pair; rows name (main, aux)
          std::vector<std::string> tasks;
          for (const std::string& id : ids)
            if (id == main || id == aux) tasks.push_back(id);
          out.push_back({tasks, main, {aux}});
        }
      break;
    }
    case CombinationPolicy::incremental: {
      std::vector<std::string> prefix;
      for (const std::string& id : ids) {
        prefix.push_back(id);
        Combo c;
        c.tasks = ids;  // one model with every task
        c.main_task = ids.front();
        c.aux.assign(prefix.begin() + 1, prefix.end());
        out.push_back(std::move(c));
      }
      break;
    }
    case CombinationPolicy::all_subsets_up_to_k: {
      const std::size_t n = ids.size();
      for (std::size_t mask = 1; mask < (1u << n); ++mask) {
        std::vector<std::string> subset;
        for (std::size_t i = 0; i < n; ++i)
          if (mask & (1u << i)) subset.push_back(ids[i]);
        if (subset.size() > axes.max_subset) continue;
        for (const std::string& main : subset) {
          Combo c;
          c.tasks = subset;
          c.main_task = main;
          for (const std::string& id : subset)
            if (id != main) c.aux.push_back(id);
          out.push_back(std::move(c));
        }
      }
      break;
    }
  }
  return out;
}

Plan build_plan(const ExperimentConfig& cfg, const SynthSpec& spec,
                const std::string& dataset_key) {
  std::vector<std::string> ids;
  for (const SynthTaskSpec& t : spec.tasks) ids.push_back(t.id);

  const auto combos = combos_for_policy(cfg.sweep, ids);
  const auto encoders =
      cfg.sweep.encoders.empty()
          ? std::vector<std::vector<std::size_t>>{cfg.encoder}
          : cfg.sweep.encoders;
  const auto epoch_list = cfg.sweep.epochs.empty()
                              ? std::vector<std::size_t>{cfg.train.epochs}
                              : cfg.sweep.epochs;

  Plan plan;
  std::map<std::string, std::size_t> model_index;
  for (const auto& enc : encoders)
    for (std::size_t epochs : epoch_list)
      for (const Combo& combo : combos) {
        ModelCell cell;
        cell.tasks = combo.tasks;
        cell.encoder_dims = enc;
        cell.epochs = epochs;
        const std::string canon = canonical_model_string(
            spec, cfg.weights, cfg.train, cell, dataset_key);
        cell.cache_key = hex64(fnv1a(canon));
        auto [it, inserted] =
            model_index.emplace(cell.cache_key, plan.models.size());
        if (inserted) plan.models.push_back(cell);
        const std::size_t midx = it->second;

        for (const AttackConfig& atk : cfg.attacks) {
          const auto eps_list = cfg.sweep.epsilon.empty()
                                    ? std::vector<double>{atk.epsilon}
                                    : cfg.sweep.epsilon;
          const auto steps_list = cfg.sweep.steps.empty()
                                      ? std::vector<std::size_t>{atk.steps}
                                      : cfg.sweep.steps;
          const auto norm_list = cfg.sweep.norms.empty()
                                     ? std::vector<PNorm>{atk.p}
                                     : cfg.sweep.norms;
          for (double eps : eps_list)
            for (std::size_t steps : steps_list)
              for (PNorm norm : norm_list) {
                if (atk.variant == AttackVariant::fgsm &&
                    (steps != 1 || norm != PNorm::linf))
                  continue;  // fgsm is the single-step linf case by definition
                MetricCell mc;
                mc.model_index = midx;
                mc.main_task = combo.main_task;
                mc.aux = combo.aux;
                mc.attack = atk;
                mc.attack.epsilon = eps;
                mc.attack.steps = steps;
                mc.attack.p = norm;
                const std::string cell_key =
                    cell.cache_key + '|' + combo.main_task + '|' +
                    join_ids(combo.aux) + '|' + variant_to_string(atk.variant) +
                    '|' + format_double(eps) + '|' + std::to_string(steps) +
                    '|' + pnorm_to_string(norm);
                mc.attack.seed = derive_seed(cfg.seed, fnv1a(cell_key));
                plan.metrics.push_back(std::move(mc));
              }
        }
      }
  return plan;
}

MultiTaskModel obtain_model(const ExperimentConfig& cfg, const SynthSpec& spec,
                            const ModelCell& cell, const Dataset& data,
                            RunStats& stats, std::ostream& log) {
  const fs::path cache_dir = fs::path(cfg.output_dir) / "cache";
  fs::create_directories(cache_dir);
  const fs::path ckpt = cache_dir / (cell.cache_key + ".ckpt");
  if (fs::exists(ckpt)) {
    ++stats.cache_hits;
    log << "model " << cell.cache_key << " cache-hit steps=0\n";
    return load_model(ckpt.string());
  }

  std::vector<std::size_t> dims;
  dims.push_back(spec.input_dim);
  for (std::size_t d : cell.encoder_dims) dims.push_back(d);

  MultiTaskModel fresh =
      build_model(dims, subset_task_specs(spec, cell.tasks),
                  subset_weights(spec, cfg.weights, cell.tasks), cfg.train.seed);
  TrainConfig tc = cfg.train;
  tc.epochs = cell.epochs;
  TrainResult tr = train(fresh, data, tc);
  stats.training_steps += tr.steps;
  log << "model " << cell.cache_key << " trained steps=" << tr.steps << "\n";
  save_model(tr.model, ckpt.string(), cfg.train.seed);
  return tr.model;
}

// relative vulnerability of `main_task` when `attacked` is attacked
double relative_vuln_of(const MultiTaskModel& model, const Dataset& data,
                        const std::set<std::string>& attacked,
                        const std::string& main_task, const AttackConfig& atk) {
  AttackConfig cfg = atk;
  cfg.attacked = attacked;
  std::vector<double> clean, adv;
  for (std::size_t k = 0; k < data.size(); ++k) {
    cfg.seed = atk.seed ^ static_cast<std::uint64_t>(k);
    const AttackTrace trace = run_attack(model, data[k].x, data[k].targets, cfg);
    const Tensor adv_x = add(data[k].x, trace.delta);
    const Tensor& y = data[k].targets.at(main_task);
    clean.push_back(task_error(model, data[k].x, y, main_task));
    adv.push_back(task_error(model, adv_x, y, main_task));
  }
  return relative_task_vulnerability(clean, adv).value;
}

std::vector<SweepRow> evaluate_cell(const ExperimentConfig& cfg,
                                    const MetricCell& cell,
                                    const ModelCell& model_cell,
                                    const MultiTaskModel& model,
                                    const Dataset& data) {
  SweepRow base;
  base.main_task = cell.main_task;
  base.auxiliary_set = join_ids(cell.aux);
  base.encoder_id = encoder_id_string(model_cell.encoder_dims);
  base.epochs = model_cell.epochs;
  base.attack_variant = variant_to_string(cell.attack.variant);
  base.epsilon = cell.attack.epsilon;
  base.p = pnorm_to_string(cell.attack.p);
  base.steps = cell.attack.steps;
  base.seed = cfg.seed;

  std::vector<SweepRow> rows;
  auto push = [&](const std::string& metric, auto&& compute) {
    SweepRow r = base;
    try {
      r.metric_name = metric;
      r.value = compute();
    } catch (const std::exception& e) {
      r.is_error = true;
      r.metric_name = "error";
      r.error_text = metric + ": " + e.what();
      r.value = 0.0;
    }
    rows.push_back(std::move(r));
  };

  // the attacked set is the row's own combination (equal to the model's
  // task set for the pairs/subset policies, a prefix of it for the
  // incremental policy)
  std::set<std::string> all_set = {cell.main_task};
  all_set.insert(cell.aux.begin(), cell.aux.end());
  const std::set<std::string> main_only = {cell.main_task};
  const bool multi = all_set.size() >= 2;
  const bool is_wgd = cell.attack.variant == AttackVariant::wgd;

  push("clean_error", [&] { return clean_error(model, data, cell.main_task); });

  if (!is_wgd) {  // wgd needs >= 2 attacked tasks
    push("vuln_single", [&] {
      return adversarial_vulnerability(model, data, main_only, cell.attack);
    });
    push("rel_vuln_single", [&] {
      return relative_vuln_of(model, data, main_only, cell.main_task, cell.attack);
    });
    push("first_order_single", [&] {
      return first_order_estimate(model, data, main_only, cell.attack.epsilon,
                                  cell.attack.p);
    });
  }
  if (multi) {
    push("vuln_multi", [&] {
      return adversarial_vulnerability(model, data, all_set, cell.attack);
    });
    push("rel_vuln_multi", [&] {
      return relative_vuln_of(model, data, all_set, cell.main_task, cell.attack);
    });
    push("first_order_multi", [&] {
      return first_order_estimate(model, data, all_set, cell.attack.epsilon,
                                  cell.attack.p);
    });
  }
  return rows;
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.output_dir);
  std::ofstream log(fs::path(cfg.output_dir) / "run.log", std::ios::app);

  SynthDataset ds;
  std::string dataset_key;
  if (!cfg.dataset_path.empty()) {
    ds = load_dataset(cfg.dataset_path);
    std::ifstream f(cfg.dataset_path, std::ios::binary);
    std::stringstream buf;
    buf << f.rdbuf();
    dataset_key = hex64(fnv1a(buf.str()));
  } else {
    ds = generate_dataset(cfg.dataset);
    dataset_key = hex64(fnv1a(canonical_synth_string(cfg.dataset)));
  }
  const SynthSpec& spec = ds.spec;

  RunResult result;
  const Plan plan = build_plan(cfg, spec, dataset_key);
  result.stats.cells = plan.metrics.size();

  // training is serial (the cache makes repeats free); metric cells fan out
  std::vector<MultiTaskModel> models;
  models.reserve(plan.models.size());
  for (const ModelCell& cell : plan.models)
    models.push_back(
        obtain_model(cfg, spec, cell, ds.examples, result.stats, log));

  std::vector<std::vector<SweepRow>> slots(plan.metrics.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= plan.metrics.size()) return;
      const MetricCell& mc = plan.metrics[i];
      slots[i] = evaluate_cell(cfg, mc, plan.models[mc.model_index],
                               models[mc.model_index], ds.examples);
    }
  };
  const std::size_t n_workers =
      std::min(worker_count(), std::max<std::size_t>(1, plan.metrics.size()));
  if (n_workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n_workers; ++i) pool.emplace_back(work);
    for (std::thread& t : pool) t.join();
  }

  for (auto& rows : slots)
    for (SweepRow& r : rows) {
      if (r.is_error) ++result.stats.error_rows;
      result.table.rows.push_back(std::move(r));
    }
  result.table.sort_rows();
  log << "run cells=" << result.stats.cells
      << " training_steps=" << result.stats.training_steps
      << " cache_hits=" << result.stats.cache_hits
      << " error_rows=" << result.stats.error_rows << "\n";
  return result;
}

RunResult incremental_task_sweep(const ExperimentConfig& cfg,
                                 const std::vector<std::string>& order) {
  cfg.validate();
  if (order.size() < 2)
    throw std::invalid_argument("incremental_task_sweep: order needs >= 2 tasks");
  fs::create_directories(cfg.output_dir);
  std::ofstream log(fs::path(cfg.output_dir) / "run.log", std::ios::app);

  SynthDataset ds;
  std::string dataset_key;
  if (!cfg.dataset_path.empty()) {
    ds = load_dataset(cfg.dataset_path);
    std::ifstream f(cfg.dataset_path, std::ios::binary);
    std::stringstream buf;
    buf << f.rdbuf();
    dataset_key = hex64(fnv1a(buf.str()));
  } else {
    ds = generate_dataset(cfg.dataset);
    dataset_key = hex64(fnv1a(canonical_synth_string(cfg.dataset)));
  }
  const SynthSpec& spec = ds.spec;
  for (const std::string& id : order) {
    bool found = false;
    for (const SynthTaskSpec& t : spec.tasks) found = found || t.id == id;
    if (!found)
      throw std::invalid_argument("incremental_task_sweep: unknown task '" + id +
                                  "'");
  }

  RunResult result;
  ModelCell cell;
  // model task order follows the dataset, training is order-independent
  for (const SynthTaskSpec& t : spec.tasks)
    if (std::find(order.begin(), order.end(), t.id) != order.end())
      cell.tasks.push_back(t.id);
  cell.encoder_dims = cfg.encoder;
  cell.epochs = cfg.train.epochs;
  cell.cache_key = hex64(fnv1a(
      canonical_model_string(spec, cfg.weights, cfg.train, cell, dataset_key)));
  MultiTaskModel model =
      obtain_model(cfg, spec, cell, ds.examples, result.stats, log);

  for (const AttackConfig& atk : cfg.attacks) {
    // one seed for the whole ordering so prefix rows are differencable
    const std::string series_key =
        cell.cache_key + "|incremental|" + variant_to_string(atk.variant) + '|' +
        format_double(atk.epsilon) + '|' + std::to_string(atk.steps) + '|' +
        pnorm_to_string(atk.p);
    AttackConfig cfg_atk = atk;
    cfg_atk.seed = derive_seed(cfg.seed, fnv1a(series_key));

    std::set<std::string> enabled;
    for (std::size_t n = 0; n < order.size(); ++n) {
      enabled.insert(order[n]);
      if (cfg_atk.variant == AttackVariant::wgd && enabled.size() < 2)
        continue;  // wgd undefined on a single task
      SweepRow r;
      r.main_task = order.front();
      r.auxiliary_set =
          join_ids(std::vector<std::string>(order.begin() + 1,
                                            order.begin() + n + 1));
      r.encoder_id = encoder_id_string(cfg.encoder);
      r.epochs = cfg.train.epochs;
      r.attack_variant = variant_to_string(atk.variant);
      r.epsilon = atk.epsilon;
      r.p = pnorm_to_string(atk.p);
      r.steps = atk.steps;
      r.seed = cfg.seed;
      r.metric_name = "vulnerability";
      try {
        r.value =
            adversarial_vulnerability(model, ds.examples, enabled, cfg_atk);
      } catch (const std::exception& e) {
        r.is_error = true;
        r.metric_name = "error";
        r.error_text = e.what();
        ++result.stats.error_rows;
      }
      result.table.rows.push_back(std::move(r));

      SweepRow f = result.table.rows.back();
      if (!f.is_error) {
        f.metric_name = "first_order";
        f.value = first_order_estimate(model, ds.examples, enabled, atk.epsilon,
                                       atk.p);
        result.table.rows.push_back(std::move(f));
      }
      ++result.stats.cells;
    }
  }
  result.table.sort_rows();
  return result;
}

StatResult surrogate_correlation(const SweepTable& target,
                                 const SweepTable& surrogate,
                                 const std::string& statistic) {
  // join on everything except the encoder/epoch axes and the seed
  auto key_of = [](const SweepRow& r) {
    return r.main_task + '|' + r.auxiliary_set + '|' + r.attack_variant + '|' +
           format_double(r.epsilon) + '|' + r.p + '|' + std::to_string(r.steps) +
           '|' + r.metric_name;
  };
  auto collect = [&](const SweepTable& t) {
    std::map<std::string, std::pair<double, std::size_t>> acc;
    for (const SweepRow& r : t.rows) {
      if (r.is_error) continue;
      auto& slot = acc[key_of(r)];
      slot.first += r.value;
      slot.second += 1;
    }
    std::map<std::string, double> mean;
    for (const auto& [k, v] : acc) mean[k] = v.first / v.second;
    return mean;
  };

  const auto t = collect(target);
  const auto s = collect(surrogate);
  std::vector<double> tv, sv;
  std::string unmatched;
  for (const auto& [k, v] : t) {
    auto it = s.find(k);
    if (it == s.end()) {
      unmatched += k + " (target only); ";
      continue;
    }
    tv.push_back(v);
    sv.push_back(it->second);
  }
  for (const auto& [k, v] : s)
    if (!t.count(k)) unmatched += k + " (surrogate only); ";
  if (!unmatched.empty())
    throw std::invalid_argument("surrogate_correlation: unmatched keys: " +
                                unmatched);
  if (tv.empty())
    throw std::invalid_argument("surrogate_correlation: no paired rows");

  if (statistic == "pearson") return pearson(tv, sv);
  if (statistic == "kendall") return kendall_tau(tv, sv);
  if (statistic == "wilcoxon")
    return wilcoxon_signed_rank(tv, sv, Alternative::two_sided);
  if (statistic == "wilcoxon_greater")
    return wilcoxon_signed_rank(tv, sv, Alternative::greater);
  throw std::invalid_argument("surrogate_correlation: unknown statistic '" +
                              statistic + "'");
}

// ---------------------------------------------------------------------------
// output emission

namespace {

struct Series {
  std::vector<std::pair<double, double>> points;  // sorted by x
};

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f"};

std::string svg_chart(const std::string& title, const std::string& xlabel,
                      const std::string& ylabel,
                      const std::map<std::string, Series>& series) {
  constexpr double W = 640, H = 420, L = 70, R = 200, T = 40, B = 50;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& [name, s] : series)
    for (const auto& [x, y] : s.points) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  if (xmin > xmax) {
    xmin = 0;
    xmax = 1;
    ymin = 0;
    ymax = 1;
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  const double plot_w = W - L - R, plot_h = H - T - B;
  auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * plot_w; };
  auto py = [&](double y) { return T + (ymax - y) / (ymax - ymin) * plot_h; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W
     << "\" height=\"" << H << "\">\n";
  os << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << L << "\" y=\"24\" font-size=\"15\" font-family=\"sans-serif\">"
     << title << "</text>\n";
  // axes
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\""
     << (H - B) << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << (H - B) << "\" x2=\"" << (W - R)
     << "\" y2=\"" << (H - B) << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << (L + plot_w / 2) << "\" y=\"" << (H - 14)
     << "\" font-size=\"12\" font-family=\"sans-serif\" text-anchor=\"middle\">"
     << xlabel << "</text>\n";
  os << "<text x=\"14\" y=\"" << (T + plot_h / 2)
     << "\" font-size=\"12\" font-family=\"sans-serif\" text-anchor=\"middle\" "
        "transform=\"rotate(-90 14 "
     << (T + plot_h / 2) << ")\">" << ylabel << "</text>\n";
  // min/max tick labels
  os << "<text x=\"" << L << "\" y=\"" << (H - B + 16)
     << "\" font-size=\"10\" font-family=\"sans-serif\">" << format_double(xmin)
     << "</text>\n";
  os << "<text x=\"" << (W - R) << "\" y=\"" << (H - B + 16)
     << "\" font-size=\"10\" font-family=\"sans-serif\" text-anchor=\"end\">"
     << format_double(xmax) << "</text>\n";
  os << "<text x=\"" << (L - 6) << "\" y=\"" << (H - B)
     << "\" font-size=\"10\" font-family=\"sans-serif\" text-anchor=\"end\">"
     << format_double(ymin) << "</text>\n";
  os << "<text x=\"" << (L - 6) << "\" y=\"" << (T + 10)
     << "\" font-size=\"10\" font-family=\"sans-serif\" text-anchor=\"end\">"
     << format_double(ymax) << "</text>\n";

  std::size_t color = 0;
  double legend_y = T + 10;
  for (const auto& [name, s] : series) {
    const char* stroke = kPalette[color % (sizeof(kPalette) / sizeof(*kPalette))];
    os << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& [x, y] : s.points) os << px(x) << ',' << py(y) << ' ';
    os << "\"/>\n";
    for (const auto& [x, y] : s.points)
      os << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y)
         << "\" r=\"2.5\" fill=\"" << stroke << "\"/>\n";
    os << "<text x=\"" << (W - R + 12) << "\" y=\"" << legend_y
       << "\" font-size=\"11\" font-family=\"sans-serif\" fill=\"" << stroke
       << "\">" << name << "</text>\n";
    legend_y += 16;
    ++color;
  }
  os << "</svg>\n";
  return os.str();
}

// preferred metric for charts, falling back to whatever is present
std::string chart_metric(const SweepTable& table) {
  static const char* preferred[] = {"vuln_multi", "vulnerability", "vuln_single",
                                    "rel_vuln_multi", "rel_vuln_single"};
  std::set<std::string> present;
  for (const SweepRow& r : table.rows)
    if (!r.is_error) present.insert(r.metric_name);
  for (const char* m : preferred)
    if (present.count(m)) return m;
  return present.empty() ? "" : *present.begin();
}

std::string axis_chart(const SweepTable& table, const std::string& axis) {
  const std::string metric = chart_metric(table);
  std::map<std::string, std::map<double, std::pair<double, std::size_t>>> acc;
  for (const SweepRow& r : table.rows) {
    if (r.is_error || r.metric_name != metric) continue;
    double x = 0.0;
    if (axis == "epsilon") x = r.epsilon;
    else if (axis == "steps") x = static_cast<double>(r.steps);
    else if (axis == "epochs") x = static_cast<double>(r.epochs);
    else if (axis == "norm") x = (r.p == "l1" ? 1.0 : (r.p == "l2" ? 2.0 : 3.0));
    else if (axis == "encoder") x = static_cast<double>(r.encoder_id.size());
    const std::string series = r.main_task + (r.auxiliary_set.empty()
                                                  ? ""
                                                  : "+" + r.auxiliary_set);
    auto& slot = acc[series][x];
    slot.first += r.value;
    slot.second += 1;
  }
  std::map<std::string, Series> series;
  for (const auto& [name, pts] : acc) {
    Series s;
    for (const auto& [x, sum_n] : pts)
      s.points.emplace_back(x, sum_n.first / sum_n.second);
    series[name] = std::move(s);
  }
  return svg_chart(metric + " vs " + axis, axis, metric, series);
}

}  // namespace

std::vector<std::string> emit_outputs(const SweepTable& table,
                                      const std::string& dir,
                                      const SweepAxes& axes) {
  fs::create_directories(dir);
  std::vector<std::string> files;

  SweepTable sorted = table;
  sorted.sort_rows();
  const fs::path csv_path = fs::path(dir) / "results.csv";
  {
    std::ofstream os(csv_path, std::ios::binary);
    if (!os) throw std::runtime_error("emit_outputs: cannot write " +
                                      csv_path.string());
    os << sorted.to_csv();
  }
  files.push_back(csv_path.string());

  auto emit_axis = [&](const std::string& axis) {
    const fs::path p = fs::path(dir) / ("axis_" + axis + ".svg");
    std::ofstream os(p, std::ios::binary);
    if (!os) throw std::runtime_error("emit_outputs: cannot write " + p.string());
    os << axis_chart(sorted, axis);
    files.push_back(p.string());
  };
  if (!axes.epsilon.empty()) emit_axis("epsilon");
  if (!axes.steps.empty()) emit_axis("steps");
  if (!axes.norms.empty()) emit_axis("norm");
  if (!axes.encoders.empty()) emit_axis("encoder");
  if (!axes.epochs.empty()) emit_axis("epochs");
  return files;
}

}  // namespace mtadv
