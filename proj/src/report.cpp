#include "headprobe/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "headprobe/common.hpp"
#include "json.hpp"

namespace headprobe {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  for (char c : line) {
    if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  out.push_back(std::move(field));
  return out;
}

double parse_double(const std::string& s) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw FormatError("trailing characters in number: " + s);
    return v;
  } catch (const std::logic_error&) {
    throw FormatError("malformed number: " + s);
  }
}

long long parse_int(const std::string& s) {
  try {
    std::size_t pos = 0;
    long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw FormatError("trailing characters in integer: " + s);
    return v;
  } catch (const std::logic_error&) {
    throw FormatError("malformed integer: " + s);
  }
}

double mean_finite(const std::vector<double>& v) {
  double sum = 0.0;
  std::size_t n = 0;
  for (double x : v) {
    if (std::isfinite(x)) {
      sum += x;
      ++n;
    }
  }
  return n ? sum / static_cast<double>(n) : kNaN;
}

CellIndex peak_cell(const SweepResult& s) {
  return s.best_cell(SelectionMetric::Accuracy).value_or(CellIndex{});
}

}  // namespace

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("spearman inputs differ in length");
  std::vector<double> xa, xb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::isfinite(a[i]) && std::isfinite(b[i])) {
      xa.push_back(a[i]);
      xb.push_back(b[i]);
    }
  }
  if (xa.empty()) return kNaN;
  const auto ra = average_ranks(xa);
  const auto rb = average_ranks(xb);
  const double n = static_cast<double>(ra.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 && vb == 0.0) return 1.0;
  if (va == 0.0 || vb == 0.0) return 0.0;
  return std::clamp(cov / std::sqrt(va * vb), -1.0, 1.0);
}

double RunComparison::mean_base_accuracy() const { return mean_finite(base_curve); }
double RunComparison::mean_tuned_accuracy() const { return mean_finite(tuned_curve); }

bool RunComparison::structure_preserved() const {
  return rank_correlation >= 0.8 && std::abs(base_peak.layer - tuned_peak.layer) <= 2;
}

RunComparison compare_runs(const SweepResult& base, const SweepResult& tuned) {
  if (base.n_layers != tuned.n_layers || base.n_heads != tuned.n_heads ||
      base.cells.size() != tuned.cells.size()) {
    throw InvalidArgument("compare_runs: sweep grids differ");
  }
  if (base.construct != tuned.construct) throw InvalidArgument("compare_runs: constructs differ");
  if (base.tap != tuned.tap || base.concat_heads != tuned.concat_heads) {
    throw InvalidArgument("compare_runs: tap kinds differ");
  }
  RunComparison cmp;
  cmp.construct = base.construct;
  cmp.tap = base.tap;
  cmp.n_layers = base.n_layers;
  cmp.n_heads = base.n_heads;
  for (std::size_t i = 0; i < base.cells.size(); ++i) {
    const auto& b = base.cells[i];
    const auto& t = tuned.cells[i];
    if (b.ok() && t.ok()) {
      cmp.accuracy_delta.push_back(t.metrics->accuracy - b.metrics->accuracy);
      cmp.macro_f1_delta.push_back(t.metrics->macro_f1 - b.metrics->macro_f1);
    } else {
      cmp.accuracy_delta.push_back(kNaN);
      cmp.macro_f1_delta.push_back(kNaN);
    }
  }
  cmp.base_curve = base.layer_curve(SelectionMetric::Accuracy);
  cmp.tuned_curve = tuned.layer_curve(SelectionMetric::Accuracy);
  cmp.rank_correlation = spearman(cmp.base_curve, cmp.tuned_curve);
  cmp.base_peak = peak_cell(base);
  cmp.tuned_peak = peak_cell(tuned);
  return cmp;
}

GenerationEval generation_eval(std::span<const ModelVariant> variants, std::span<const LabeledReview> reviews) {
  GenerationEval eval;
  for (const auto& v : variants) {
    VariantEval ve;
    ve.name = v.name;
    for (const auto& r : reviews) {
      Classification c;
      try {
        c = v.classify(r.text);
      } catch (const std::exception& e) {
        throw std::runtime_error("variant " + v.name + " failed on sample " + r.id + ": " + e.what());
      }
      ve.sample_ids.push_back(r.id);
      ve.truth.push_back(r.label);
      ve.predicted.push_back(c.label);
      ve.logit_high.push_back(c.logit_high);
      ve.logit_low.push_back(c.logit_low);
    }
    ve.metrics = compute_metrics(ve.truth, ve.predicted);
    eval.variants.push_back(std::move(ve));
  }
  return eval;
}

std::string diffmap_table(const DiffMap& map) {
  std::ostringstream os;
  os << "layer,head,mu_high,mu_low,delta,normalized\n";
  for (int l = 0; l < map.delta.n_layers; ++l) {
    for (int h = 0; h < map.delta.n_heads; ++h) {
      os << l << ',' << h << ',' << fmt(map.mu_high.at(l, h)) << ',' << fmt(map.mu_low.at(l, h)) << ','
         << fmt(map.delta.at(l, h)) << ',' << fmt(map.normalized.at(l, h)) << '\n';
    }
  }
  return os.str();
}

DiffMap parse_diffmap_table(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("layer,head,mu_high", 0) != 0) {
    throw FormatError("not a diff map table");
  }
  std::vector<std::vector<std::string>> rows;
  int max_l = -1, max_h = -1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split_csv(line);
    if (f.size() != 6) throw FormatError("diff map row needs 6 fields: " + line);
    max_l = std::max(max_l, static_cast<int>(parse_int(f[0])));
    max_h = std::max(max_h, static_cast<int>(parse_int(f[1])));
    rows.push_back(std::move(f));
  }
  DiffMap map;
  map.mu_high = map.mu_low = map.delta = map.normalized = Grid(max_l + 1, max_h + 1, kNaN);
  for (const auto& f : rows) {
    const int l = static_cast<int>(parse_int(f[0]));
    const int h = static_cast<int>(parse_int(f[1]));
    if (l < 0 || h < 0) throw FormatError("negative grid index in diff map table");
    map.mu_high.at(l, h) = parse_double(f[2]);
    map.mu_low.at(l, h) = parse_double(f[3]);
    map.delta.at(l, h) = parse_double(f[4]);
    map.normalized.at(l, h) = parse_double(f[5]);
  }
  return map;
}

std::string sweep_table(const SweepResult& sweep) {
  std::ostringstream os;
  os << "construct,tap,layer,head,accuracy,f1_low,f1_high,macro_f1,weighted_f1,tp,fp,fn,tn,status\n";
  const std::string tap = std::string(tap_name(sweep.tap)) + (sweep.concat_heads ? "+concat" : "");
  for (int l = 0; l < sweep.n_layers; ++l) {
    for (int h = 0; h < sweep.n_heads; ++h) {
      const auto& c = sweep.at(l, h);
      os << sweep.construct << ',' << tap << ',' << l << ',' << h << ',';
      if (c.ok()) {
        const auto& m = *c.metrics;
        os << fmt(m.accuracy) << ',' << fmt(m.f1_low) << ',' << fmt(m.f1_high) << ',' << fmt(m.macro_f1) << ','
           << fmt(m.weighted_f1) << ',' << m.counts.tp << ',' << m.counts.fp << ',' << m.counts.fn << ','
           << m.counts.tn << ",ok\n";
      } else {
        std::string msg = c.error;
        std::replace(msg.begin(), msg.end(), ',', ';');
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        os << "nan,nan,nan,nan,nan,0,0,0,0,error: " << msg << '\n';
      }
    }
  }
  return os.str();
}

SweepResult parse_sweep_table(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("construct,tap,layer,head", 0) != 0) {
    throw FormatError("not a sweep table");
  }
  struct Row {
    int layer, head;
    CellResult cell;
  };
  std::vector<Row> rows;
  SweepResult s;
  int max_l = -1, max_h = -1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split_csv(line);
    if (f.size() != 14) throw FormatError("sweep row needs 14 fields: " + line);
    if (rows.empty()) {
      s.construct = f[0];
      std::string tap = f[1];
      const auto plus = tap.find("+concat");
      s.concat_heads = plus != std::string::npos;
      if (s.concat_heads) tap.resize(plus);
      try {
        s.tap = parse_tap(tap);
      } catch (const InvalidArgument& e) {
        throw FormatError(e.what());
      }
    }
    Row r{static_cast<int>(parse_int(f[2])), static_cast<int>(parse_int(f[3])), {}};
    if (r.layer < 0 || r.head < 0) throw FormatError("negative grid index in sweep table");
    if (f[13] == "ok") {
      ProbeMetrics m;
      m.accuracy = parse_double(f[4]);
      m.f1_low = parse_double(f[5]);
      m.f1_high = parse_double(f[6]);
      m.macro_f1 = parse_double(f[7]);
      m.weighted_f1 = parse_double(f[8]);
      m.counts = {static_cast<std::size_t>(parse_int(f[9])), static_cast<std::size_t>(parse_int(f[10])),
                  static_cast<std::size_t>(parse_int(f[11])), static_cast<std::size_t>(parse_int(f[12]))};
      r.cell.metrics = m;
    } else {
      r.cell.error = f[13].rfind("error: ", 0) == 0 ? f[13].substr(7) : f[13];
    }
    max_l = std::max(max_l, r.layer);
    max_h = std::max(max_h, r.head);
    rows.push_back(std::move(r));
  }
  s.n_layers = max_l + 1;
  s.n_heads = max_h + 1;
  s.cells.assign(static_cast<std::size_t>(s.n_layers) * s.n_heads, CellResult{std::nullopt, "missing row"});
  for (auto& r : rows) s.cells[static_cast<std::size_t>(r.layer) * s.n_heads + r.head] = std::move(r.cell);
  return s;
}

std::string residual_curve_table(const ResidualNormCurve& curve) {
  std::ostringstream os;
  os << "tap,layer,mean_abs_high,mean_abs_low,difference\n";
  for (std::size_t l = 0; l < curve.difference.size(); ++l) {
    os << tap_name(curve.tap) << ',' << l << ',' << fmt(curve.high[l]) << ',' << fmt(curve.low[l]) << ','
       << fmt(curve.difference[l]) << '\n';
  }
  return os.str();
}

std::string layer_curves_table(const RunComparison& cmp) {
  std::ostringstream os;
  os << "construct,tap,layer,base_accuracy,tuned_accuracy\n";
  for (std::size_t l = 0; l < cmp.base_curve.size(); ++l) {
    os << cmp.construct << ',' << tap_name(cmp.tap) << ',' << l << ',' << fmt(cmp.base_curve[l]) << ','
       << fmt(cmp.tuned_curve[l]) << '\n';
  }
  return os.str();
}

std::string comparison_jsonl(const RunComparison& cmp) {
  std::ostringstream os;
  nlohmann::ordered_json summary;
  summary["kind"] = "summary";
  summary["construct"] = cmp.construct;
  summary["tap"] = tap_name(cmp.tap);
  summary["n_layers"] = cmp.n_layers;
  summary["n_heads"] = cmp.n_heads;
  summary["spearman_rho"] = cmp.rank_correlation;
  summary["base_peak"] = {cmp.base_peak.layer, cmp.base_peak.head};
  summary["tuned_peak"] = {cmp.tuned_peak.layer, cmp.tuned_peak.head};
  summary["mean_base_accuracy"] = cmp.mean_base_accuracy();
  summary["mean_tuned_accuracy"] = cmp.mean_tuned_accuracy();
  summary["structure_preserved"] = cmp.structure_preserved();
  os << summary.dump() << '\n';
  for (int l = 0; l < cmp.n_layers; ++l) {
    for (int h = 0; h < cmp.n_heads; ++h) {
      const std::size_t i = static_cast<std::size_t>(l) * cmp.n_heads + h;
      nlohmann::ordered_json row;
      row["kind"] = "cell";
      row["layer"] = l;
      row["head"] = h;
      row["accuracy_delta"] = cmp.accuracy_delta[i];
      row["macro_f1_delta"] = cmp.macro_f1_delta[i];
      os << row.dump() << '\n';
    }
  }
  return os.str();
}

std::string best_table(const std::vector<BestEntry>& table) {
  std::ostringstream os;
  os << "rank,construct,best,layer,head,accuracy,f1_low,f1_high,macro_f1,weighted_f1\n";
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& e = table[i];
    os << i + 1 << ',' << e.construct << ',' << fmt(e.best) << ',' << e.cell.layer << ',' << e.cell.head << ','
       << fmt(e.metrics.accuracy) << ',' << fmt(e.metrics.f1_low) << ',' << fmt(e.metrics.f1_high) << ','
       << fmt(e.metrics.macro_f1) << ',' << fmt(e.metrics.weighted_f1) << '\n';
  }
  return os.str();
}

std::string generation_eval_table(const GenerationEval& eval) {
  std::ostringstream os;
  os << "variant,acc,macro_f1,w_f1,f1_low,f1_high,n\n";
  for (const auto& v : eval.variants) {
    const auto& m = v.metrics;
    os << v.name << ',' << fmt(m.accuracy) << ',' << fmt(m.macro_f1) << ',' << fmt(m.weighted_f1) << ','
       << fmt(m.f1_low) << ',' << fmt(m.f1_high) << ',' << v.truth.size() << '\n';
  }
  return os.str();
}

std::string generation_predictions_table(const GenerationEval& eval) {
  std::ostringstream os;
  os << "variant,sample_id,truth,predicted,logit_high,logit_low\n";
  for (const auto& v : eval.variants) {
    for (std::size_t i = 0; i < v.truth.size(); ++i) {
      os << v.name << ',' << v.sample_ids[i] << ',' << v.truth[i] << ',' << v.predicted[i] << ','
         << fmt(v.logit_high[i]) << ',' << fmt(v.logit_low[i]) << '\n';
    }
  }
  return os.str();
}

Grid sweep_grid(const SweepResult& sweep, SelectionMetric metric, std::vector<bool>* missing) {
  Grid g(sweep.n_layers, sweep.n_heads, kNaN);
  if (missing != nullptr) missing->assign(g.values.size(), false);
  for (std::size_t i = 0; i < sweep.cells.size(); ++i) {
    if (sweep.cells[i].ok()) {
      g.values[i] = metric_value(*sweep.cells[i].metrics, metric);
    } else if (missing != nullptr) {
      (*missing)[i] = true;
    }
  }
  return g;
}

}  // namespace headprobe
