// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "dgamil/io_util.hpp"

namespace dgamil {

struct EvalRow {
  uint64_t subject_seed = 0;
  double age = 0.0;
  double pred = 0.0;
  double error() const { return pred - age; }
};

struct EvalReport {
  double mae = 0.0, rmse = 0.0, pcc = 0.0;
  double slope = 0.0, intercept = 0.0;  // regression of predictions on age
  std::vector<EvalRow> rows;
};

inline EvalReport compute_metrics(std::vector<EvalRow> rows) {
  if (rows.empty()) throw ConfigError("compute_metrics: empty prediction set");
  EvalReport r;
  const double n = static_cast<double>(rows.size());
  double abs_sum = 0.0, sq_sum = 0.0, a_mean = 0.0, p_mean = 0.0;
  for (const auto& row : rows) {
    abs_sum += std::abs(row.error());
    sq_sum += row.error() * row.error();
    a_mean += row.age;
    p_mean += row.pred;
  }
  a_mean /= n;
  p_mean /= n;
  double cov = 0.0, va = 0.0, vp = 0.0;
  for (const auto& row : rows) {
    cov += (row.age - a_mean) * (row.pred - p_mean);
    va += (row.age - a_mean) * (row.age - a_mean);
    vp += (row.pred - p_mean) * (row.pred - p_mean);
  }
  r.mae = abs_sum / n;
  r.rmse = std::sqrt(sq_sum / n);
  if (va == 0.0 || vp == 0.0) {
    warn("compute_metrics: zero variance, PCC reported as 0");
    r.pcc = 0.0;
  } else {
    r.pcc = cov / (std::sqrt(va) * std::sqrt(vp));
  }
  r.slope = va == 0.0 ? 0.0 : cov / va;
  r.intercept = p_mean - r.slope * a_mean;
  r.rows = std::move(rows);
  return r;
}

// Per-age-bin dispersion. Both readings are emitted: the sample standard
// deviation of the predictions and of the errors; bins with fewer than two
// subjects yield NaN (written as NA).
struct SigmaBin {
  double lo = 0.0, hi = 0.0;
  int count = 0;
  double sigma_pred = std::numeric_limits<double>::quiet_NaN();
  double sigma_err = std::numeric_limits<double>::quiet_NaN();
};

inline std::vector<SigmaBin> sigma_profile(const std::vector<EvalRow>& rows, double bin_width) {
  if (bin_width <= 0.0) throw ConfigError("sigma_profile: bin width must be positive");
  if (rows.empty()) return {};
  double lo = rows[0].age, hi = rows[0].age;
  for (const auto& r : rows) {
    lo = std::min(lo, r.age);
    hi = std::max(hi, r.age);
  }
  const double origin = std::floor(lo / bin_width) * bin_width;
  const int nbins = static_cast<int>(std::floor((hi - origin) / bin_width)) + 1;
  std::vector<std::vector<const EvalRow*>> bins(static_cast<size_t>(nbins));
  for (const auto& r : rows) {
    int b = static_cast<int>(std::floor((r.age - origin) / bin_width));
    b = std::min(std::max(b, 0), nbins - 1);
    bins[static_cast<size_t>(b)].push_back(&r);
  }
  auto sample_sd = [](const std::vector<double>& xs) {
    const double n = static_cast<double>(xs.size());
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= n;
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / (n - 1.0));
  };
  std::vector<SigmaBin> out;
  for (int b = 0; b < nbins; ++b) {
    SigmaBin sb;
    sb.lo = origin + b * bin_width;
    sb.hi = sb.lo + bin_width;
    sb.count = static_cast<int>(bins[static_cast<size_t>(b)].size());
    if (sb.count >= 2) {
      std::vector<double> preds, errs;
      for (const EvalRow* r : bins[static_cast<size_t>(b)]) {
        preds.push_back(r->pred);
        errs.push_back(r->error());
      }
      sb.sigma_pred = sample_sd(preds);
      sb.sigma_err = sample_sd(errs);
    }
    out.push_back(sb);
  }
  return out;
}

inline void write_report_csv(const EvalReport& r, const std::string& path) {
  auto os = open_out(path);
  os << "mae,rmse,pcc,slope,intercept,n\n";
  os << f64_str(r.mae) << ',' << f64_str(r.rmse) << ',' << f64_str(r.pcc) << ',' << f64_str(r.slope)
     << ',' << f64_str(r.intercept) << ',' << r.rows.size() << '\n';
}

inline void write_predictions_csv(const EvalReport& r, const std::string& path) {
  auto os = open_out(path);
  os << "subject_seed,age,pred,error\n";
  for (const auto& row : r.rows)
    os << row.subject_seed << ',' << f64_str(row.age) << ',' << f64_str(row.pred) << ','
       << f64_str(row.error()) << '\n';
}

inline std::vector<EvalRow> read_predictions_csv(const std::string& path) {
  auto is = open_in(path);
  std::string line;
  if (!std::getline(is, line) || line.rfind("subject_seed,", 0) != 0)
    throw FormatError("predictions csv: bad header line");
  std::vector<EvalRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    EvalRow r;
    size_t p1 = line.find(','), p2 = line.find(',', p1 + 1), p3 = line.find(',', p2 + 1);
    if (p1 == std::string::npos || p2 == std::string::npos || p3 == std::string::npos)
      throw FormatError("predictions csv: malformed row '" + line + "'");
    try {
      r.subject_seed = std::stoull(line.substr(0, p1));
      r.age = std::stod(line.substr(p1 + 1, p2 - p1 - 1));
      r.pred = std::stod(line.substr(p2 + 1, p3 - p2 - 1));
    } catch (...) {
      throw FormatError("predictions csv: bad numeric field in '" + line + "'");
    }
    rows.push_back(r);
  }
  return rows;
}

inline void write_sigma_csv(const std::vector<SigmaBin>& bins, const std::string& path) {
  auto os = open_out(path);
  os << "bin_lo,bin_hi,count,sigma_pred,sigma_err\n";
  for (const auto& b : bins) {
    os << f64_str(b.lo) << ',' << f64_str(b.hi) << ',' << b.count << ',';
    os << (std::isnan(b.sigma_pred) ? "NA" : f64_str(b.sigma_pred)) << ',';
    os << (std::isnan(b.sigma_err) ? "NA" : f64_str(b.sigma_err)) << '\n';
  }
}

}  // namespace dgamil
