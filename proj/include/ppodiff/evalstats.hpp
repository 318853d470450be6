#pragma once

// Learning-curve metrics, paired tests, rank correlation, and the per-run CSV
// logs.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "ppodiff/autodiff.hpp"

namespace ppodiff {

struct CurvePoint {
  double step = 0.0;
  double mean_return = 0.0;
};

/// Evaluation points with strictly increasing steps.
struct LearningCurve {
  std::vector<CurvePoint> points;

  void add(double step, double mean_return);
  void validate() const;
};

/// (1/(T - t0)) * integral of R(t) over [t0, T] by trapezoids, with R
/// linearly interpolated at T. t0 is the first evaluation step (normally 0).
double alc_at_t(const LearningCurve& curve, double T);

/// Mean of the last `fraction` of evaluation points (at least one).
double final_return(const LearningCurve& curve, double fraction = 0.1);

struct WilcoxonResult {
  double w_plus = 0.0;
  double w_minus = 0.0;
  double statistic = 0.0;  // min(w_plus, w_minus)
  double p_value = 1.0;    // exact, two-sided
  int n_used = 0;          // non-zero differences
};

/// Exact signed-rank test on x - y (zero differences dropped, mid-ranks on ties).
WilcoxonResult wilcoxon_paired(const std::vector<double>& x, const std::vector<double>& y);

/// Average ranks (1-based), ties share the mean rank.
std::vector<double> mid_ranks(const std::vector<double>& v);

struct SpearmanResult {
  double rho = 0.0;
  bool defined = true;  // false when either input is constant
};

SpearmanResult spearman_rho(const std::vector<double>& x, const std::vector<double>& y);

template <typename Derived>
SpearmanResult spearman_rho(const Eigen::MatrixBase<Derived>& x, const Eigen::MatrixBase<Derived>& y) {
  return spearman_rho(std::vector<double>(x.derived().data(), x.derived().data() + x.size()),
                      std::vector<double>(y.derived().data(), y.derived().data() + y.size()));
}

struct ConfidenceInterval {
  double mean = 0.0;
  double half_width = 0.0;
  int n = 0;
  bool degenerate = false;  // n < 2: point estimate only
};

/// Student-t interval on the mean.
ConfidenceInterval student_t_ci(const std::vector<double>& values, double level = 0.95);

struct BoxSummary {
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
  std::size_t n = 0;
};

/// Quantiles by linear interpolation between order statistics.
double quantile(std::vector<double> values, double q);
BoxSummary box_summary(const std::vector<double>& values);

/// One row per online iteration.
struct RunLogRow {
  std::int64_t iteration = 0;
  std::int64_t env_steps = 0;
  double wall_seconds = 0.0;
  double k_policy = 0.0;
  double k_prior = 0.0;
  double ppo_loss = 0.0;
  double v_loss = 0.0;
  double q_loss = 0.0;
  double prior_kl_loss = 0.0;
  double aux_loss = 0.0;
  double actor_loss = 0.0;
  double beta = 0.0;
  double alpha_max = 0.0;
  std::int64_t pet_events = 0;
  double pet_delta_norm = 0.0;
  std::int64_t proposals = 0;
  std::int64_t dsyn_size = 0;
  double q_mean_weighted = 0.0;
  double q_mean_uniform = 0.0;
  double acceptance = 0.0;
  double spearman_rho = 0.0;
  int spearman_defined = 0;
  int epochs = 0;
  std::uint64_t src_on_policy = 0;
  std::uint64_t src_logged = 0;
  std::uint64_t src_synthetic = 0;
  std::uint64_t guidance_non_finite = 0;
};

/// Append-only CSV writer; the header is written on open.
class RunLogWriter {
 public:
  static const std::vector<std::string>& columns();

  explicit RunLogWriter(const std::filesystem::path& path);
  void append(const RunLogRow& row);

 private:
  std::ofstream out_;
};

struct CurveRow {
  std::int64_t env_steps = 0;
  double mean_return = 0.0;
  double std_return = 0.0;
  double wall_seconds = 0.0;
};

void write_curve_csv(const std::filesystem::path& path, const std::vector<CurveRow>& rows);

/// Numeric CSV with a header row, read column-wise.
std::map<std::string, std::vector<double>> read_numeric_csv(const std::filesystem::path& path);

LearningCurve read_curve(const std::filesystem::path& path);

}  // namespace ppodiff
