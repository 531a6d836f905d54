#include "mtadv/sweep.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace mtadv {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

bool SweepTable::has_errors() const {
  for (const SweepRow& r : rows)
    if (r.is_error) return true;
  return false;
}

namespace {

auto row_key(const SweepRow& r) {
  return std::make_tuple(r.main_task, r.auxiliary_set, r.encoder_id, r.epochs,
                         r.attack_variant, format_double(r.epsilon), r.p,
                         r.steps, r.metric_name, r.seed);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace

void SweepTable::sort_rows() {
  std::stable_sort(rows.begin(), rows.end(),
                   [](const SweepRow& a, const SweepRow& b) {
                     return row_key(a) < row_key(b);
                   });
}

std::string SweepTable::to_csv() const {
  std::string csv =
      "main_task,auxiliary_set,encoder_id,epochs,attack_variant,epsilon,p,"
      "steps,metric_name,value,seed\n";
  for (const SweepRow& r : rows) {
    csv += r.main_task + ',' + r.auxiliary_set + ',' + r.encoder_id + ',' +
           std::to_string(r.epochs) + ',' + r.attack_variant + ',' +
           format_double(r.epsilon) + ',' + r.p + ',' + std::to_string(r.steps) +
           ',' + (r.is_error ? "error:" + r.error_text : r.metric_name) + ',' +
           (r.is_error ? std::string() : format_double(r.value)) + ',' +
           std::to_string(r.seed) + '\n';
  }
  return csv;
}

SweepTable SweepTable::from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line))
    throw std::invalid_argument("SweepTable: empty CSV");
  SweepTable table;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 11)
      throw std::invalid_argument("SweepTable: malformed row '" + line + "'");
    SweepRow r;
    r.main_task = f[0];
    r.auxiliary_set = f[1];
    r.encoder_id = f[2];
    r.epochs = std::stoull(f[3]);
    r.attack_variant = f[4];
    r.epsilon = std::strtod(f[5].c_str(), nullptr);
    r.p = f[6];
    r.steps = std::stoull(f[7]);
    if (f[8].rfind("error:", 0) == 0) {
      r.is_error = true;
      r.metric_name = "error";
      r.error_text = f[8].substr(6);
    } else {
      r.metric_name = f[8];
      r.value = std::strtod(f[9].c_str(), nullptr);
    }
    r.seed = std::stoull(f[10]);
    table.rows.push_back(std::move(r));
  }
  return table;
}

}  // namespace mtadv
