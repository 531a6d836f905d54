#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mtadv/model.hpp"

namespace mtadv {

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
    if (!is) throw std::runtime_error("checkpoint: truncated parameter block");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    std::memcpy(&d, &bits, sizeof(d));
  }
}

std::string hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

void write_shape(std::ostream& os, const Shape& s) {
  os << s.size();
  for (std::size_t e : s) os << ' ' << e;
}

Shape read_shape(std::istringstream& ls) {
  std::size_t n;
  if (!(ls >> n)) throw std::runtime_error("checkpoint: bad shape");
  Shape s(n);
  for (std::size_t i = 0; i < n; ++i)
    if (!(ls >> s[i])) throw std::runtime_error("checkpoint: bad shape extent");
  return s;
}

void write_graph(std::ostream& os, const std::string& tag,
                 const ComputationGraph& g) {
  os << "graph " << tag << ' ' << g.nodes().size() << '\n';
  for (std::size_t i = 0; i < g.nodes().size(); ++i) {
    const GraphNode& n = g.nodes()[i];
    os << "node " << op_kind_name(n.kind);
    if (n.kind == OpKind::input || n.kind == OpKind::parameter) {
      os << ' ' << n.name << ' ';
      write_shape(os, n.shape);
    } else {
      os << ' ' << n.args.size();
      for (int a : n.args) os << ' ' << a;
      if (n.kind == OpKind::weighted_sum)
        for (double c : n.coeffs) os << ' ' << hexfloat(c);
    }
    os << '\n';
  }
  for (const auto& [name, idx] : g.outputs())
    os << "output " << name << ' ' << idx << '\n';
  os << "endgraph\n";
}

OpKind op_kind_from_name(const std::string& s) {
  if (s == "input") return OpKind::input;
  if (s == "parameter") return OpKind::parameter;
  if (s == "affine") return OpKind::affine;
  if (s == "relu") return OpKind::relu;
  if (s == "tanh") return OpKind::tanh_fn;
  if (s == "sigmoid") return OpKind::sigmoid;
  if (s == "softmax_cross_entropy") return OpKind::softmax_cross_entropy;
  if (s == "mean_l1") return OpKind::mean_l1;
  if (s == "mean_squared_error") return OpKind::mean_squared_error;
  if (s == "weighted_sum") return OpKind::weighted_sum;
  throw std::runtime_error("checkpoint: unknown op kind '" + s + "'");
}

std::string next_line(std::istream& is) {
  std::string line;
  if (!std::getline(is, line))
    throw std::runtime_error("checkpoint: unexpected end of header");
  return line;
}

// Rebuilds a graph from its header section. Parameter tensors are created
// with the recorded shapes; values are filled from the binary block later.
struct PendingGraph {
  std::string tag;
  GraphBuilder builder;
  std::map<int, int> remap;  // file index -> builder index
  ComputationGraph graph;
  std::vector<std::string> param_order;
};

PendingGraph read_graph(std::istream& is, const std::string& first_line) {
  std::istringstream hl(first_line);
  std::string kw, tag;
  std::size_t count;
  hl >> kw >> tag >> count;
  if (kw != "graph") throw std::runtime_error("checkpoint: expected graph section");
  PendingGraph pg;
  pg.tag = tag;
  for (std::size_t i = 0; i < count; ++i) {
    std::istringstream ls(next_line(is));
    std::string nw, kind_name;
    ls >> nw >> kind_name;
    if (nw != "node") throw std::runtime_error("checkpoint: expected node line");
    OpKind kind = op_kind_from_name(kind_name);
    int idx = -1;
    switch (kind) {
      case OpKind::input: {
        std::string name;
        ls >> name;
        idx = pg.builder.input(name, read_shape(ls));
        break;
      }
      case OpKind::parameter: {
        std::string name;
        ls >> name;
        idx = pg.builder.parameter(name, Tensor(read_shape(ls)));
        pg.param_order.push_back(name);
        break;
      }
      default: {
        std::size_t argc;
        ls >> argc;
        std::vector<int> args(argc);
        for (std::size_t a = 0; a < argc; ++a) {
          int fidx;
          ls >> fidx;
          args[a] = pg.remap.at(fidx);
        }
        switch (kind) {
          case OpKind::affine:
            idx = pg.builder.affine(args.at(0), args.at(1), args.at(2));
            break;
          case OpKind::relu:
            idx = pg.builder.relu(args.at(0));
            break;
          case OpKind::tanh_fn:
            idx = pg.builder.tanh_fn(args.at(0));
            break;
          case OpKind::sigmoid:
            idx = pg.builder.sigmoid(args.at(0));
            break;
          case OpKind::softmax_cross_entropy:
            idx = pg.builder.softmax_cross_entropy(args.at(0), args.at(1));
            break;
          case OpKind::mean_l1:
            idx = pg.builder.mean_l1(args.at(0), args.at(1));
            break;
          case OpKind::mean_squared_error:
            idx = pg.builder.mean_squared_error(args.at(0), args.at(1));
            break;
          case OpKind::weighted_sum: {
            std::vector<double> coeffs(argc);
            for (std::size_t a = 0; a < argc; ++a) {
              std::string tok;
              ls >> tok;
              coeffs[a] = std::strtod(tok.c_str(), nullptr);
            }
            idx = pg.builder.weighted_sum(args, coeffs);
            break;
          }
          default:
            throw std::runtime_error("checkpoint: bad node kind");
        }
      }
    }
    pg.remap[static_cast<int>(i)] = idx;
  }
  for (std::string line = next_line(is); line != "endgraph"; line = next_line(is)) {
    std::istringstream ls(line);
    std::string kw2, name;
    int fidx;
    ls >> kw2 >> name >> fidx;
    if (kw2 != "output") throw std::runtime_error("checkpoint: expected output line");
    pg.builder.mark_output(name, pg.remap.at(fidx));
  }
  pg.graph = pg.builder.build();
  return pg;
}

}  // namespace

void save_model(const MultiTaskModel& model, const std::string& path,
                std::uint64_t seed) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_model: cannot open '" + path + "'");
  os << "mtadv-model v1\n";
  os << "seed " << seed << '\n';
  os << "tasks " << model.tasks().size() << '\n';
  for (const TaskSpec& t : model.tasks()) {
    os << "task " << t.id << ' ' << task_kind_name(t.kind) << ' ';
    write_shape(os, t.target_shape);
    os << ' ' << loss_kind_name(t.loss) << ' ' << error_kind_name(t.error) << '\n';
  }
  for (const TaskSpec& t : model.tasks())
    os << "weight " << t.id << ' ' << hexfloat(model.weight(t.id)) << '\n';

  write_graph(os, "encoder", model.encoder());
  for (const TaskSpec& t : model.tasks())
    write_graph(os, "dec." + t.id, model.decoder(t.id));

  // parameter block layout: encoder params in name order, then each
  // decoder's params in task order
  std::vector<double> block;
  std::size_t n_params = 0;
  for (const auto& [name, p] : model.encoder().parameters()) {
    block.insert(block.end(), p.data().begin(), p.data().end());
    ++n_params;
  }
  for (const TaskSpec& t : model.tasks())
    for (const auto& [name, p] : model.decoder(t.id).parameters()) {
      block.insert(block.end(), p.data().begin(), p.data().end());
      ++n_params;
    }
  os << "block " << n_params << ' ' << block.size() << '\n';
  os << "end-header\n";
  write_le_doubles(os, block);
  if (!os) throw std::runtime_error("save_model: write failed for '" + path + "'");
}

MultiTaskModel load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_model: cannot open '" + path + "'");
  if (next_line(is) != "mtadv-model v1")
    throw std::runtime_error("load_model: bad magic in '" + path + "'");

  std::string line = next_line(is);
  {
    std::istringstream ls(line);
    std::string kw;
    std::uint64_t seed;
    ls >> kw >> seed;
    if (kw != "seed") throw std::runtime_error("load_model: expected seed line");
  }

  std::size_t n_tasks = 0;
  {
    std::istringstream ls(next_line(is));
    std::string kw;
    ls >> kw >> n_tasks;
    if (kw != "tasks") throw std::runtime_error("load_model: expected tasks line");
  }
  std::vector<TaskSpec> tasks(n_tasks);
  for (std::size_t i = 0; i < n_tasks; ++i) {
    std::istringstream ls(next_line(is));
    std::string kw, kind, loss, error;
    ls >> kw >> tasks[i].id >> kind;
    tasks[i].kind = task_kind_from_string(kind);
    tasks[i].target_shape = read_shape(ls);
    ls >> loss >> error;
    tasks[i].loss = loss_kind_from_string(loss);
    tasks[i].error = error_kind_from_string(error);
  }
  std::map<std::string, double> weights;
  for (std::size_t i = 0; i < n_tasks; ++i) {
    std::istringstream ls(next_line(is));
    std::string kw, id, val;
    ls >> kw >> id >> val;
    if (kw != "weight") throw std::runtime_error("load_model: expected weight line");
    weights[id] = std::strtod(val.c_str(), nullptr);
  }

  PendingGraph enc = read_graph(is, next_line(is));
  if (enc.tag != "encoder")
    throw std::runtime_error("load_model: expected encoder graph");
  std::map<std::string, PendingGraph> decs;
  std::vector<std::string> dec_order;
  for (std::size_t i = 0; i < n_tasks; ++i) {
    PendingGraph d = read_graph(is, next_line(is));
    dec_order.push_back(d.tag.substr(4));
    decs.emplace(d.tag.substr(4), std::move(d));
  }

  std::size_t n_params = 0, block_len = 0;
  {
    std::istringstream ls(next_line(is));
    std::string kw;
    ls >> kw >> n_params >> block_len;
    if (kw != "block") throw std::runtime_error("load_model: expected block line");
  }
  if (next_line(is) != "end-header")
    throw std::runtime_error("load_model: expected end-header");

  std::vector<double> block(block_len);
  read_le_doubles(is, block);

  std::size_t off = 0;
  auto fill = [&](ComputationGraph& g) {
    // parameters() is an ordered map, matching the save order
    for (const auto& [name, p] : g.parameters()) {
      if (off + p.size() > block.size())
        throw std::runtime_error("load_model: parameter block too short");
      Tensor t(p.shape(), std::vector<double>(block.begin() + off,
                                              block.begin() + off + p.size()));
      off += p.size();
      g.set_parameter(name, std::move(t));
    }
  };
  fill(enc.graph);
  std::map<std::string, ComputationGraph> dec_graphs;
  for (const std::string& id : dec_order) {
    fill(decs.at(id).graph);
    dec_graphs.emplace(id, std::move(decs.at(id).graph));
  }
  if (off != block.size())
    throw std::runtime_error("load_model: parameter block size mismatch");

  return MultiTaskModel(std::move(enc.graph), std::move(dec_graphs),
                        std::move(weights), std::move(tasks));
}

}  // namespace mtadv
