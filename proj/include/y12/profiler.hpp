#pragma once

// Analytic FLOP/parameter accounting. MAC convention: one multiply-accumulate
// counts once; GFLOPs reported as 2*MACs/1e9. Batch norm, activations and
// moves count zero. Analytic numbers must match the instrumented counter
// exactly for every covered kernel; the tests enforce that.

#include "y12/model.hpp"

namespace y12 {

struct FlopRow {
  int id = 0;
  std::string kind;
  Shape out_shape;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;

  friend bool operator==(const FlopRow& a, const FlopRow& b) {
    return a.id == b.id && a.kind == b.kind && a.out_shape == b.out_shape &&
           a.params == b.params && a.macs == b.macs;
  }
};

struct FlopReport {
  std::string scale;
  std::size_t input_size = 0;
  std::vector<FlopRow> rows;
  std::uint64_t total_params = 0;
  std::uint64_t total_macs = 0;

  double gflops() const { return 2.0 * static_cast<double>(total_macs) / 1e9; }

  void recompute_totals() {
    total_params = 0;
    total_macs = 0;
    for (const auto& r : rows) {
      total_params += r.params;
      total_macs += r.macs;
    }
  }

  friend bool operator==(const FlopReport& a, const FlopReport& b) {
    return a.scale == b.scale && a.input_size == b.input_size && a.rows == b.rows &&
           a.total_params == b.total_params && a.total_macs == b.total_macs;
  }
};

template <typename T>
FlopReport flop_report(const Model<T>& model, std::size_t input_size) {
  FlopReport report;
  report.scale = std::string(1, scale_char(model.config().scale));
  report.input_size = input_size;
  for (const auto& info : model.describe(input_size)) {
    FlopRow row;
    row.id = info.id;
    row.kind = info.kind;
    row.out_shape = info.out_shape;
    row.params = info.params;
    row.macs = info.macs;
    report.rows.push_back(std::move(row));
  }
  report.recompute_totals();
  return report;
}

}  // namespace y12
