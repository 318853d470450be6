#include "ppodiff/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <json.hpp>
#include <set>
#include <sstream>

#include "ppodiff/config.hpp"

namespace ppodiff {

namespace fs = std::filesystem;

SeedRun load_seed_run(const fs::path& dir) {
  SeedRun r;
  r.dir = dir;
  const ExperimentConfig cfg = ExperimentConfig::from_file(dir / "config.txt");
  r.seed = cfg.seeds.front();
  r.mode = mode_name(cfg.mode);
  r.budget = static_cast<double>(cfg.budget);
  r.alc_fraction = cfg.alc_fraction;
  r.curve = read_curve(dir / "curve.csv");
  r.runlog = read_numeric_csv(dir / "runlog.csv");
  std::ifstream t(dir / "timing.txt");
  std::string key;
  double value = 0.0;
  while (t >> key >> value) {
    if (key == "seconds_per_10k") r.seconds_per_10k = value;
  }
  return r;
}

ArmRuns load_arm(const fs::path& dir) {
  ArmRuns arm;
  arm.name = dir.filename().string();
  if (arm.name.empty()) arm.name = dir.parent_path().filename().string();
  if (fs::exists(dir / "config.txt")) {
    arm.runs.push_back(load_seed_run(dir));
    return arm;
  }
  std::vector<fs::path> subdirs;
  if (fs::is_directory(dir)) {
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_directory() && fs::exists(e.path() / "config.txt")) subdirs.push_back(e.path());
    }
  }
  if (subdirs.empty()) throw IOError("'" + dir.string() + "' holds no completed runs");
  std::sort(subdirs.begin(), subdirs.end());
  for (const auto& p : subdirs) arm.runs.push_back(load_seed_run(p));
  std::sort(arm.runs.begin(), arm.runs.end(),
            [](const SeedRun& a, const SeedRun& b) { return a.seed < b.seed; });
  return arm;
}

namespace {

std::optional<BoxSummary> box_of(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  return box_summary(v);
}

}  // namespace

Report build_report(const std::vector<ArmRuns>& arms) {
  Report rep;
  for (const ArmRuns& arm : arms) {
    ArmSummary s;
    s.name = arm.name;
    s.mode = arm.runs.front().mode;
    std::vector<double> kp, kq, secs;
    for (const SeedRun& r : arm.runs) {
      s.seeds.push_back(r.seed);
      s.finals.push_back(final_return(r.curve, 0.1));
      s.alcs.push_back(alc_at_t(r.curve, r.alc_fraction * r.budget));
      secs.push_back(r.seconds_per_10k);
      const auto& pol = r.runlog.at("k_policy");
      kp.insert(kp.end(), pol.begin(), pol.end());
      const auto& pri = r.runlog.at("k_prior");
      const auto& ev = r.runlog.at("pet_events");
      for (std::size_t i = 0; i < pri.size(); ++i) {
        if (ev[i] > 0) kq.push_back(pri[i]);
      }
      if (r.mode != s.mode) rep.warnings.push_back("arm '" + s.name + "' mixes modes");
    }
    s.final_ci = student_t_ci(s.finals);
    s.alc_ci = student_t_ci(s.alcs);
    if (s.final_ci.degenerate) {
      rep.warnings.push_back("arm '" + s.name + "' has one run: interval is the point estimate");
    }
    s.k_policy = box_of(kp);
    s.k_prior = box_of(kq);
    s.seconds_per_10k = std::accumulate(secs.begin(), secs.end(), 0.0) / static_cast<double>(secs.size());
    rep.arms.push_back(std::move(s));
  }

  const ArmSummary* base = nullptr;
  for (const ArmSummary& a : rep.arms) {
    if (a.mode == "vanilla_ppo") {
      base = &a;
      break;
    }
  }
  if (base == nullptr) {
    rep.warnings.push_back("no vanilla_ppo arm: paired tests skipped");
    return rep;
  }
  rep.baseline = base->name;
  for (ArmSummary& a : rep.arms) {
    if (&a == base) continue;
    if (a.seeds != base->seeds) {
      rep.warnings.push_back("arm '" + a.name + "' seeds differ from the baseline: unpaired summary only");
      continue;
    }
    if (a.seeds.size() < 3) {
      rep.warnings.push_back("arm '" + a.name + "' has fewer than three matched seeds: no paired test");
      continue;
    }
    a.vs_baseline = PairedTest{wilcoxon_paired(a.finals, base->finals), wilcoxon_paired(a.alcs, base->alcs)};
  }
  for (const ArmSummary& a : rep.arms) {
    if (a.mode == "full" && base->seconds_per_10k > 0.0) {
      rep.overhead = a.seconds_per_10k / base->seconds_per_10k - 1.0;
      break;
    }
  }
  return rep;
}

namespace {

nlohmann::json box_json(const std::optional<BoxSummary>& b) {
  if (!b) return nullptr;
  return {{"min", b->min}, {"q1", b->q1}, {"median", b->median}, {"q3", b->q3}, {"max", b->max}, {"n", b->n}};
}

nlohmann::json ci_json(const ConfidenceInterval& c) {
  return {{"mean", c.mean}, {"half_width", c.half_width}, {"n", c.n}, {"degenerate", c.degenerate}};
}

nlohmann::json wilcoxon_json(const WilcoxonResult& w) {
  return {{"w_plus", w.w_plus}, {"w_minus", w.w_minus}, {"statistic", w.statistic},
          {"p_value", w.p_value}, {"n_used", w.n_used}};
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

struct Frame {
  double x0, x1, y0, y1;
  double left = 70, right = 170, top = 30, bottom = 50, width = 760, height = 420;
  double px(double x) const { return left + (x - x0) / (x1 - x0) * (width - left - right); }
  double py(double y) const { return height - bottom - (y - y0) / (y1 - y0) * (height - top - bottom); }
};

void axes(std::ostream& os, const Frame& f, const std::string& xlabel, const std::string& ylabel,
          bool log_y = false) {
  os << "<rect x='" << f.left << "' y='" << f.top << "' width='" << f.width - f.left - f.right
     << "' height='" << f.height - f.top - f.bottom << "' fill='none' stroke='#333'/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double x = f.x0 + (f.x1 - f.x0) * i / 4.0;
    const double y = f.y0 + (f.y1 - f.y0) * i / 4.0;
    os << "<text x='" << f.px(x) << "' y='" << f.height - f.bottom + 18
       << "' font-size='11' text-anchor='middle'>" << std::setprecision(4) << x << "</text>\n";
    os << "<text x='" << f.left - 6 << "' y='" << f.py(y) + 4 << "' font-size='11' text-anchor='end'>"
       << std::setprecision(3) << (log_y ? std::pow(10.0, y) : y) << "</text>\n";
  }
  os << "<text x='" << (f.left + f.width - f.right) / 2 << "' y='" << f.height - 10
     << "' font-size='12' text-anchor='middle'>" << xlabel << "</text>\n";
  os << "<text x='16' y='" << (f.top + f.height - f.bottom) / 2 << "' font-size='12' text-anchor='middle' "
     << "transform='rotate(-90 16 " << (f.top + f.height - f.bottom) / 2 << ")'>" << ylabel << "</text>\n";
}

void write_curves_svg(const fs::path& path, const std::vector<ArmRuns>& arms) {
  struct Band {
    std::vector<double> x, mean, lo, hi;
  };
  std::vector<Band> bands;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const ArmRuns& arm : arms) {
    Band b;
    const auto& grid = arm.runs.front().curve.points;
    for (const CurvePoint& p : grid) {
      std::vector<double> vals;
      for (const SeedRun& r : arm.runs) {
        const auto& pts = r.curve.points;
        auto it = std::lower_bound(pts.begin(), pts.end(), p.step,
                                   [](const CurvePoint& c, double s) { return c.step < s; });
        if (it == pts.end()) continue;
        if (it->step == p.step || it == pts.begin()) {
          vals.push_back(it->mean_return);
        } else {
          const CurvePoint& a = *(it - 1);
          vals.push_back(a.mean_return + (it->mean_return - a.mean_return) * (p.step - a.step) / (it->step - a.step));
        }
      }
      if (vals.empty()) continue;
      const ConfidenceInterval ci = student_t_ci(vals);
      b.x.push_back(p.step);
      b.mean.push_back(ci.mean);
      b.lo.push_back(ci.mean - ci.half_width);
      b.hi.push_back(ci.mean + ci.half_width);
      xmin = std::min(xmin, p.step);
      xmax = std::max(xmax, p.step);
      ymin = std::min(ymin, ci.mean - ci.half_width);
      ymax = std::max(ymax, ci.mean + ci.half_width);
    }
    bands.push_back(std::move(b));
  }
  if (!(xmax > xmin)) xmax = xmin + 1.0;
  if (!(ymax > ymin)) ymax = ymin + 1.0;
  const double pad = 0.05 * (ymax - ymin);
  Frame f{xmin, xmax, ymin - pad, ymax + pad};
  std::ofstream os(path);
  if (!os) throw IOError("cannot write '" + path.string() + "'");
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << f.width << "' height='" << f.height
     << "' font-family='sans-serif'>\n<rect width='100%' height='100%' fill='white'/>\n";
  axes(os, f, "environment steps", "return (mean, 95% CI)");
  for (std::size_t a = 0; a < bands.size(); ++a) {
    const Band& b = bands[a];
    const char* color = kPalette[a % std::size(kPalette)];
    os << "<polygon fill='" << color << "' fill-opacity='0.18' stroke='none' points='";
    for (std::size_t i = 0; i < b.x.size(); ++i) os << f.px(b.x[i]) << ',' << f.py(b.hi[i]) << ' ';
    for (std::size_t i = b.x.size(); i-- > 0;) os << f.px(b.x[i]) << ',' << f.py(b.lo[i]) << ' ';
    os << "'/>\n<polyline fill='none' stroke='" << color << "' stroke-width='2' points='";
    for (std::size_t i = 0; i < b.x.size(); ++i) os << f.px(b.x[i]) << ',' << f.py(b.mean[i]) << ' ';
    os << "'/>\n";
    const double ly = f.top + 14 + 18.0 * static_cast<double>(a);
    os << "<line x1='" << f.width - f.right + 10 << "' y1='" << ly << "' x2='" << f.width - f.right + 30
       << "' y2='" << ly << "' stroke='" << color << "' stroke-width='3'/>\n<text x='"
       << f.width - f.right + 36 << "' y='" << ly + 4 << "' font-size='12'>" << arms[a].name << "</text>\n";
  }
  os << "</svg>\n";
}

void write_box_svg(const fs::path& path, const Report& rep) {
  auto lg = [](double v) { return std::log10(std::max(v, 1e-12)); };
  double ymin = 1e300, ymax = -1e300;
  for (const ArmSummary& a : rep.arms) {
    for (const auto* b : {&a.k_policy, &a.k_prior}) {
      if (*b) {
        ymin = std::min(ymin, lg((*b)->min));
        ymax = std::max(ymax, lg((*b)->max));
      }
    }
  }
  if (!(ymax > ymin)) {
    ymin = -6;
    ymax = 0;
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, rep.arms.size()));
  Frame f{0.0, n, ymin - 0.2, ymax + 0.2};
  std::ofstream os(path);
  if (!os) throw IOError("cannot write '" + path.string() + "'");
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << f.width << "' height='" << f.height
     << "' font-family='sans-serif'>\n<rect width='100%' height='100%' fill='white'/>\n";
  axes(os, f, "arm", "per-iteration KL (log scale)", true);
  const char* colors[2] = {"#1f77b4", "#d62728"};
  for (std::size_t i = 0; i < rep.arms.size(); ++i) {
    const ArmSummary& a = rep.arms[i];
    const std::optional<BoxSummary>* boxes[2] = {&a.k_policy, &a.k_prior};
    for (int k = 0; k < 2; ++k) {
      if (!*boxes[k]) continue;
      const BoxSummary& b = **boxes[k];
      const double xc = f.px(static_cast<double>(i) + 0.33 + 0.34 * k);
      const double w = 0.12 * (f.width - f.left - f.right) / n;
      os << "<line x1='" << xc << "' y1='" << f.py(lg(b.min)) << "' x2='" << xc << "' y2='" << f.py(lg(b.max))
         << "' stroke='" << colors[k] << "'/>\n";
      os << "<rect x='" << xc - w / 2 << "' y='" << f.py(lg(b.q3)) << "' width='" << w << "' height='"
         << std::max(1.0, f.py(lg(b.q1)) - f.py(lg(b.q3))) << "' fill='" << colors[k]
         << "' fill-opacity='0.3' stroke='" << colors[k] << "'/>\n";
      os << "<line x1='" << xc - w / 2 << "' y1='" << f.py(lg(b.median)) << "' x2='" << xc + w / 2
         << "' y2='" << f.py(lg(b.median)) << "' stroke='" << colors[k] << "' stroke-width='2'/>\n";
    }
    os << "<text x='" << f.px(static_cast<double>(i) + 0.5) << "' y='" << f.top - 8
       << "' font-size='11' text-anchor='middle'>" << a.name << "</text>\n";
  }
  os << "<text x='" << f.width - f.right + 10 << "' y='" << f.top + 14 << "' font-size='12' fill='" << colors[0]
     << "'>policy KL</text>\n<text x='" << f.width - f.right + 10 << "' y='" << f.top + 32
     << "' font-size='12' fill='" << colors[1] << "'>prior KL</text>\n</svg>\n";
}

}  // namespace

void write_report(const Report& rep, const std::vector<ArmRuns>& arms, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  nlohmann::json j;
  j["baseline"] = rep.baseline;
  j["overhead_full_vs_vanilla"] = rep.overhead ? nlohmann::json(*rep.overhead) : nlohmann::json(nullptr);
  j["warnings"] = rep.warnings;
  for (const ArmSummary& a : rep.arms) {
    nlohmann::json arm = {{"name", a.name},
                          {"mode", a.mode},
                          {"seeds", a.seeds},
                          {"final_return", a.finals},
                          {"alc", a.alcs},
                          {"final_return_ci", ci_json(a.final_ci)},
                          {"alc_ci", ci_json(a.alc_ci)},
                          {"k_policy", box_json(a.k_policy)},
                          {"k_prior", box_json(a.k_prior)},
                          {"seconds_per_10k_steps", a.seconds_per_10k}};
    if (a.vs_baseline) {
      arm["wilcoxon_vs_baseline"] = {{"final_return", wilcoxon_json(a.vs_baseline->final_return)},
                                     {"alc", wilcoxon_json(a.vs_baseline->alc)}};
    }
    j["arms"].push_back(arm);
  }
  {
    std::ofstream os(out_dir / "summary.json");
    if (!os) throw IOError("cannot write into '" + out_dir.string() + "'");
    os << j.dump(2) << '\n';
  }

  std::ofstream md(out_dir / "summary.md");
  md << std::setprecision(4);
  md << "| arm | mode | seeds | final return (95% CI) | ALC (95% CI) | p final | p ALC | s / 10k steps |\n"
     << "|---|---|---|---|---|---|---|---|\n";
  for (const ArmSummary& a : rep.arms) {
    md << "| " << a.name << " | " << a.mode << " | " << a.seeds.size() << " | " << a.final_ci.mean << " ± "
       << a.final_ci.half_width << " | " << a.alc_ci.mean << " ± " << a.alc_ci.half_width << " | ";
    if (a.vs_baseline) {
      md << a.vs_baseline->final_return.p_value << " | " << a.vs_baseline->alc.p_value;
    } else {
      md << "- | -";
    }
    md << " | " << a.seconds_per_10k << " |\n";
  }
  md << "\n| arm | policy KL median [q1, q3] | prior KL median [q1, q3] | ratio |\n|---|---|---|---|\n";
  for (const ArmSummary& a : rep.arms) {
    auto cell = [](const std::optional<BoxSummary>& b) {
      std::ostringstream c;
      c << std::setprecision(3);
      if (b) c << b->median << " [" << b->q1 << ", " << b->q3 << "]";
      else c << "-";
      return c.str();
    };
    md << "| " << a.name << " | " << cell(a.k_policy) << " | " << cell(a.k_prior) << " | ";
    if (a.k_policy && a.k_prior && a.k_prior->median > 0.0) md << a.k_policy->median / a.k_prior->median;
    else md << "-";
    md << " |\n";
  }
  if (rep.overhead) md << "\nWall-clock overhead of full over vanilla_ppo: " << 100.0 * *rep.overhead << "%\n";
  for (const auto& w : rep.warnings) md << "\nwarning: " << w << '\n';

  write_curves_svg(out_dir / "curves.svg", arms);
  write_box_svg(out_dir / "kl_box.svg", rep);
}

}  // namespace ppodiff
