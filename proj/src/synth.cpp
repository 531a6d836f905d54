#include "mtadv/synth.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "mtadv/rng.hpp"

namespace mtadv {

void SynthSpec::validate() const {
  if (latent_dim == 0 || input_dim == 0)
    throw std::invalid_argument("SynthSpec: dims must be positive");
  if (latent_dim > input_dim)
    throw std::invalid_argument("SynthSpec: latent_dim must not exceed input_dim");
  if (n_examples == 0) throw std::invalid_argument("SynthSpec: n_examples == 0");
  if (noise_std < 0.0) throw std::invalid_argument("SynthSpec: negative noise_std");
  if (tasks.empty()) throw std::invalid_argument("SynthSpec: no tasks");
  std::set<std::string> seen;
  for (const SynthTaskSpec& t : tasks) {
    if (t.id.empty()) throw std::invalid_argument("SynthSpec: empty task id");
    if (!seen.insert(t.id).second)
      throw std::invalid_argument("SynthSpec: duplicate task id '" + t.id + "'");
    if (t.target_dim == 0)
      throw std::invalid_argument("SynthSpec: task '" + t.id + "' target_dim == 0");
    if (t.kind == TaskKind::classification && t.target_dim < 2)
      throw std::invalid_argument("SynthSpec: classification task '" + t.id +
                                  "' needs >= 2 classes");
    if (t.sharpness < 1.0)
      throw std::invalid_argument("SynthSpec: task '" + t.id + "' sharpness < 1");
  }
}

namespace {

Tensor gaussian_matrix(std::size_t rows, std::size_t cols, double scale, Rng& rng) {
  Tensor m({rows, cols});
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = scale * rng.normal();
  return m;
}

Tensor matvec(const Tensor& m, const Tensor& v) {
  const std::size_t rows = m.shape()[0], cols = m.shape()[1];
  Tensor out({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += m[r * cols + c] * v[c];
    out[r] = s;
  }
  return out;
}

double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

// Task maps are scaled so beta * B z spans roughly half a sine period at
// beta = 8; past that the targets stop being learnable by the small
// encoders and the gradient-norm knob inverts.
constexpr double kTaskMapScale = 0.06;

SynthGenerator::SynthGenerator(SynthSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  Rng rng(derive_seed(spec_.seed, fnv1a("synth-maps")));
  const double scale = 1.0 / std::sqrt(static_cast<double>(spec_.latent_dim));
  mixing_ = gaussian_matrix(spec_.input_dim, spec_.latent_dim, scale, rng);
  for (const SynthTaskSpec& t : spec_.tasks)
    task_maps_.emplace(t.id, gaussian_matrix(t.target_dim, spec_.latent_dim,
                                             kTaskMapScale * scale, rng));
}

const Tensor& SynthGenerator::task_map(const std::string& id) const {
  auto it = task_maps_.find(id);
  if (it == task_maps_.end())
    throw std::invalid_argument("SynthGenerator: unknown task '" + id + "'");
  return it->second;
}

Tensor SynthGenerator::task_target(const Tensor& z,
                                   const SynthTaskSpec& task) const {
  if (z.shape() != Shape{spec_.latent_dim})
    throw std::invalid_argument("task_target: latent vector has wrong shape");
  const Tensor scores = matvec(task_map(task.id), z);
  if (task.kind == TaskKind::classification) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i)
      if (scores[i] > scores[best]) best = i;
    Tensor onehot({task.target_dim});
    onehot[best] = 1.0;
    return onehot;
  }
  Tensor y({task.target_dim});
  for (std::size_t i = 0; i < y.size(); ++i)
    y[i] = std::sin(task.sharpness * scores[i]);
  return y;
}

SynthDataset SynthGenerator::generate() const {
  Rng rng(derive_seed(spec_.seed, fnv1a("synth-examples")));
  SynthDataset ds;
  ds.spec = spec_;
  ds.examples.reserve(spec_.n_examples);
  for (std::size_t k = 0; k < spec_.n_examples; ++k) {
    Tensor z({spec_.latent_dim});
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = rng.normal();
    Tensor raw = matvec(mixing_, z);
    Tensor x({spec_.input_dim});
    for (std::size_t i = 0; i < x.size(); ++i) {
      double v = raw[i];
      if (spec_.noise_std > 0.0) v += spec_.noise_std * rng.normal();
      x[i] = logistic(v);
    }
    Example ex;
    ex.x = std::move(x);
    for (const SynthTaskSpec& t : spec_.tasks)
      ex.targets[t.id] = task_target(z, t);
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

SynthDataset generate_dataset(const SynthSpec& spec) {
  return SynthGenerator(spec).generate();
}

std::vector<TaskSpec> model_tasks_for(const SynthSpec& spec) {
  std::vector<TaskSpec> tasks;
  for (const SynthTaskSpec& t : spec.tasks) {
    TaskSpec ts;
    ts.id = t.id;
    ts.target_shape = {t.target_dim};
    if (t.kind == TaskKind::classification) {
      ts.kind = TaskKind::classification;
      ts.loss = LossKind::cross_entropy;
      ts.error = ErrorKind::one_minus_accuracy;
    } else {
      ts.kind = TaskKind::regression;
      ts.loss = LossKind::l1;
      ts.error = ErrorKind::l1;
    }
    tasks.push_back(std::move(ts));
  }
  return tasks;
}

namespace {

void write_le_doubles(std::ostream& os, const std::vector<double>& v) {
  for (double d : v) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, sizeof(bits));
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
    os.write(reinterpret_cast<const char*>(buf), 8);
  }
}

void read_le_doubles(std::istream& is, std::vector<double>& v) {
  for (double& d : v) {
    unsigned char buf[8];
    is.read(reinterpret_cast<char*>(buf), 8);
    if (!is) throw std::runtime_error("dataset: truncated float block");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    std::memcpy(&d, &bits, sizeof(d));
  }
}

std::string next_line(std::istream& is) {
  std::string line;
  if (!std::getline(is, line))
    throw std::runtime_error("dataset: unexpected end of header");
  return line;
}

std::string hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

}  // namespace

void save_dataset(const SynthDataset& ds, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_dataset: cannot open '" + path + "'");
  const SynthSpec& s = ds.spec;
  os << "mtadv-dataset v1\n";
  os << "seed " << s.seed << '\n';
  os << "dims " << s.latent_dim << ' ' << s.input_dim << ' ' << s.n_examples
     << '\n';
  os << "noise " << hexfloat(s.noise_std) << '\n';
  os << "tasks " << s.tasks.size() << '\n';
  for (const SynthTaskSpec& t : s.tasks)
    os << "task " << t.id << ' ' << task_kind_name(t.kind) << ' ' << t.target_dim
       << ' ' << hexfloat(t.sharpness) << '\n';

  std::vector<double> block;
  for (const Example& ex : ds.examples) {
    block.insert(block.end(), ex.x.data().begin(), ex.x.data().end());
    for (const SynthTaskSpec& t : s.tasks) {
      const Tensor& y = ex.targets.at(t.id);
      block.insert(block.end(), y.data().begin(), y.data().end());
    }
  }
  os << "block " << block.size() << '\n';
  os << "end-header\n";
  write_le_doubles(os, block);
  if (!os) throw std::runtime_error("save_dataset: write failed");
}

SynthDataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_dataset: cannot open '" + path + "'");
  if (next_line(is) != "mtadv-dataset v1")
    throw std::runtime_error("load_dataset: bad magic");
  SynthSpec s;
  {
    std::istringstream ls(next_line(is));
    std::string kw;
    ls >> kw >> s.seed;
    if (kw != "seed") throw std::runtime_error("load_dataset: expected seed");
  }
  {
    std::istringstream ls(next_line(is));
    std::string kw;
    ls >> kw >> s.latent_dim >> s.input_dim >> s.n_examples;
    if (kw != "dims") throw std::runtime_error("load_dataset: expected dims");
  }
  {
    std::istringstream ls(next_line(is));
    std::string kw, v;
    ls >> kw >> v;
    if (kw != "noise") throw std::runtime_error("load_dataset: expected noise");
    s.noise_std = std::strtod(v.c_str(), nullptr);
  }
  std::size_t n_tasks = 0;
  {
    std::istringstream ls(next_line(is));
    std::string kw;
    ls >> kw >> n_tasks;
    if (kw != "tasks") throw std::runtime_error("load_dataset: expected tasks");
  }
  for (std::size_t i = 0; i < n_tasks; ++i) {
    std::istringstream ls(next_line(is));
    std::string kw, kind, sharp;
    SynthTaskSpec t;
    ls >> kw >> t.id >> kind >> t.target_dim >> sharp;
    t.kind = task_kind_from_string(kind);
    t.sharpness = std::strtod(sharp.c_str(), nullptr);
    s.tasks.push_back(std::move(t));
  }
  std::size_t block_len = 0;
  {
    std::istringstream ls(next_line(is));
    std::string kw;
    ls >> kw >> block_len;
    if (kw != "block") throw std::runtime_error("load_dataset: expected block");
  }
  if (next_line(is) != "end-header")
    throw std::runtime_error("load_dataset: expected end-header");
  std::vector<double> block(block_len);
  read_le_doubles(is, block);

  SynthDataset ds;
  ds.spec = s;
  std::size_t off = 0;
  auto take = [&](std::size_t n, Shape shape) {
    if (off + n > block.size())
      throw std::runtime_error("load_dataset: float block too short");
    Tensor t(std::move(shape),
             std::vector<double>(block.begin() + off, block.begin() + off + n));
    off += n;
    return t;
  };
  for (std::size_t k = 0; k < s.n_examples; ++k) {
    Example ex;
    ex.x = take(s.input_dim, {s.input_dim});
    for (const SynthTaskSpec& t : s.tasks)
      ex.targets[t.id] = take(t.target_dim, {t.target_dim});
    ds.examples.push_back(std::move(ex));
  }
  if (off != block.size())
    throw std::runtime_error("load_dataset: float block size mismatch");
  return ds;
}

}  // namespace mtadv
