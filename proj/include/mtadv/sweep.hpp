#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mtadv {

// One measured metric at one sweep cell. auxiliary_set holds '+'-joined
// task ids ("" for a single-task model).
struct SweepRow {
  std::string main_task;
  std::string auxiliary_set;
  std::string encoder_id;
  std::size_t epochs = 0;
  std::string attack_variant;
  double epsilon = 0.0;
  std::string p;
  std::size_t steps = 0;
  std::string metric_name;
  double value = 0.0;
  std::uint64_t seed = 0;

  // error rows record the failure in metric_name ("error") and keep the
  // message in error_text; they serialize with an empty value field
  std::string error_text;
  bool is_error = false;
};

struct SweepTable {
  std::vector<SweepRow> rows;

  bool has_errors() const;
  // stable lexicographic order over all key columns
  void sort_rows();
  std::string to_csv() const;
  static SweepTable from_csv(const std::string& text);
};

std::string format_double(double v);  // fixed %.12g used across all CSV output

}  // namespace mtadv
