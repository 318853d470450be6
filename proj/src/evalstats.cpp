#include "ppodiff/evalstats.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace ppodiff {

void LearningCurve::add(double step, double mean_return) {
  if (!points.empty() && !(step > points.back().step)) {
    throw DomainError("learning curve steps must be strictly increasing");
  }
  points.push_back({step, mean_return});
}

void LearningCurve::validate() const {
  for (std::size_t i = 1; i < points.size(); ++i) {
    if (!(points[i].step > points[i - 1].step)) {
      throw DomainError("learning curve steps must be strictly increasing");
    }
  }
}

double alc_at_t(const LearningCurve& curve, double T) {
  curve.validate();
  const auto& p = curve.points;
  std::size_t inside = 0;
  while (inside < p.size() && p[inside].step <= T) ++inside;
  if (inside < 2) throw InsufficientData("ALC needs at least two evaluation points at or before T");
  double area = 0.0;
  for (std::size_t i = 1; i < inside; ++i) {
    area += 0.5 * (p[i].mean_return + p[i - 1].mean_return) * (p[i].step - p[i - 1].step);
  }
  double end = p[inside - 1].step;
  if (end < T) {
    if (inside == p.size()) throw InsufficientData("learning curve ends before T");
    const CurvePoint& a = p[inside - 1];
    const CurvePoint& b = p[inside];
    const double rT = a.mean_return + (b.mean_return - a.mean_return) * (T - a.step) / (b.step - a.step);
    area += 0.5 * (a.mean_return + rT) * (T - a.step);
    end = T;
  }
  return area / (end - p.front().step);
}

double final_return(const LearningCurve& curve, double fraction) {
  if (curve.points.empty()) throw InsufficientData("empty learning curve");
  const auto n = curve.points.size();
  const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n))));
  double s = 0.0;
  for (std::size_t i = n - k; i < n; ++i) s += curve.points[i].mean_return;
  return s / static_cast<double>(k);
}

std::vector<double> mid_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

WilcoxonResult wilcoxon_paired(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ShapeError("wilcoxon_paired: length mismatch");
  if (x.size() < 3) throw InsufficientData("wilcoxon_paired needs at least three pairs");
  std::vector<double> d;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] != y[i]) d.push_back(x[i] - y[i]);
  }
  WilcoxonResult res;
  res.n_used = static_cast<int>(d.size());
  if (d.empty()) return res;
  std::vector<double> mag(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) mag[i] = std::abs(d[i]);
  const std::vector<double> ranks = mid_ranks(mag);

  // Doubled ranks are integers even with ties.
  std::vector<int> r2(ranks.size());
  int total = 0, wplus2 = 0;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    r2[i] = static_cast<int>(std::lround(2.0 * ranks[i]));
    total += r2[i];
    if (d[i] > 0) wplus2 += r2[i];
  }
  res.w_plus = wplus2 / 2.0;
  res.w_minus = (total - wplus2) / 2.0;
  res.statistic = std::min(res.w_plus, res.w_minus);

  // Null distribution of the doubled positive-rank sum: each rank positive w.p. 1/2.
  std::vector<double> dist(static_cast<std::size_t>(total) + 1, 0.0);
  dist[0] = 1.0;
  for (int r : r2) {
    for (int s = total; s >= r; --s) dist[static_cast<std::size_t>(s)] += dist[static_cast<std::size_t>(s - r)];
  }
  const double norm = std::ldexp(1.0, static_cast<int>(r2.size()));
  const int lo = std::min(wplus2, total - wplus2);
  double tail = 0.0;
  for (int s = 0; s <= lo; ++s) tail += dist[static_cast<std::size_t>(s)];
  res.p_value = std::min(1.0, 2.0 * tail / norm);
  return res;
}

SpearmanResult spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ShapeError("spearman_rho: length mismatch");
  if (x.size() < 2) throw InsufficientData("spearman_rho needs at least two points");
  const std::vector<double> rx = mid_ranks(x), ry = mid_ranks(y);
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return {0.0, false};
  return {std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0), true};
}

ConfidenceInterval student_t_ci(const std::vector<double>& values, double level) {
  if (values.empty()) throw InsufficientData("confidence interval of an empty sample");
  ConfidenceInterval ci;
  ci.n = static_cast<int>(values.size());
  ci.mean = std::accumulate(values.begin(), values.end(), 0.0) / ci.n;
  if (ci.n < 2) {
    ci.degenerate = true;
    return ci;
  }
  double ss = 0.0;
  for (double v : values) ss += (v - ci.mean) * (v - ci.mean);
  const double sd = std::sqrt(ss / (ci.n - 1));
  const boost::math::students_t dist(ci.n - 1);
  const double t = boost::math::quantile(boost::math::complement(dist, (1.0 - level) / 2.0));
  ci.half_width = t * sd / std::sqrt(static_cast<double>(ci.n));
  return ci;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw InsufficientData("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (values[hi] - values[lo]) * (pos - static_cast<double>(lo));
}

BoxSummary box_summary(const std::vector<double>& values) {
  BoxSummary b;
  b.n = values.size();
  b.min = quantile(values, 0.0);
  b.q1 = quantile(values, 0.25);
  b.median = quantile(values, 0.5);
  b.q3 = quantile(values, 0.75);
  b.max = quantile(values, 1.0);
  return b;
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& RunLogWriter::columns() {
  static const std::vector<std::string> cols = {
      "iteration",      "env_steps",       "wall_seconds",   "k_policy",      "k_prior",
      "ppo_loss",       "v_loss",          "q_loss",         "prior_kl_loss", "aux_loss",
      "actor_loss",     "beta",            "alpha_max",      "pet_events",    "pet_delta_norm",
      "proposals",      "dsyn_size",       "q_mean_weighted", "q_mean_uniform", "acceptance",
      "spearman_rho",   "spearman_defined", "epochs",        "src_on_policy", "src_logged",
      "src_synthetic",  "guidance_non_finite"};
  return cols;
}

RunLogWriter::RunLogWriter(const std::filesystem::path& path) : out_(path) {
  if (!out_) throw IOError("cannot open '" + path.string() + "' for writing");
  const auto& cols = columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out_ << (i ? "," : "") << cols[i];
  out_ << '\n';
  out_ << std::setprecision(17);
}

void RunLogWriter::append(const RunLogRow& r) {
  out_ << r.iteration << ',' << r.env_steps << ',' << r.wall_seconds << ',' << r.k_policy << ','
       << r.k_prior << ',' << r.ppo_loss << ',' << r.v_loss << ',' << r.q_loss << ','
       << r.prior_kl_loss << ',' << r.aux_loss << ',' << r.actor_loss << ',' << r.beta << ','
       << r.alpha_max << ',' << r.pet_events << ',' << r.pet_delta_norm << ',' << r.proposals << ','
       << r.dsyn_size << ',' << r.q_mean_weighted << ',' << r.q_mean_uniform << ','
       << r.acceptance << ',' << r.spearman_rho << ',' << r.spearman_defined << ',' << r.epochs
       << ',' << r.src_on_policy << ',' << r.src_logged << ',' << r.src_synthetic << ','
       << r.guidance_non_finite << '\n';
  out_.flush();
  if (!out_) throw IOError("run log write failed");
}

void write_curve_csv(const std::filesystem::path& path, const std::vector<CurveRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IOError("cannot open '" + path.string() + "' for writing");
  out << "env_steps,mean_return,std_return,wall_seconds\n" << std::setprecision(17);
  for (const CurveRow& r : rows) {
    out << r.env_steps << ',' << r.mean_return << ',' << r.std_return << ',' << r.wall_seconds << '\n';
  }
  if (!out) throw IOError("curve write failed");
}

std::map<std::string, std::vector<double>> read_numeric_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IOError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw IOError("'" + path.string() + "' is empty");
  std::vector<std::string> names;
  {
    std::istringstream hs(line);
    std::string tok;
    while (std::getline(hs, tok, ',')) names.push_back(tok);
  }
  std::map<std::string, std::vector<double>> cols;
  for (const auto& n : names) cols[n];
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tok;
    std::size_t c = 0;
    while (std::getline(ls, tok, ',')) {
      if (c >= names.size()) throw IOError("'" + path.string() + "': too many fields");
      try {
        cols[names[c]].push_back(std::stod(tok));
      } catch (const std::exception&) {
        throw IOError("'" + path.string() + "': non-numeric field '" + tok + "'");
      }
      ++c;
    }
    if (c != names.size()) throw IOError("'" + path.string() + "': short row");
  }
  return cols;
}

LearningCurve read_curve(const std::filesystem::path& path) {
  auto cols = read_numeric_csv(path);
  if (!cols.count("env_steps") || !cols.count("mean_return")) {
    throw IOError("'" + path.string() + "' is not a learning-curve file");
  }
  LearningCurve c;
  for (std::size_t i = 0; i < cols["env_steps"].size(); ++i) {
    c.add(cols["env_steps"][i], cols["mean_return"][i]);
  }
  return c;
}

}  // namespace ppodiff
