#include "hemadyn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <json.hpp>

#include "hemadyn/errors.hpp"
#include "text_util.hpp"

namespace hemadyn {

std::string format_double(double value) { return detail::format_double(value); }

double test_smse(const FitResult& fit, const PatientRecord& record, const CycleSplit& split, SmseWeights weights) {
  if (split.test_obs.empty()) throw PreconditionError("test split of '" + record.id + "' is empty");
  auto targets = to_day_values(split.test_obs);
  if (record.scale == CountScale::Linear)
    for (auto& t : targets) t.value = std::log(t.value);
  int first = targets.front().day, last = targets.front().day;
  for (const auto& t : targets) {
    first = std::min(first, t.day);
    last = std::max(last, t.day);
  }
  // the full horizon includes both neighbors of every test day
  const int start = std::min(first - 1, record.schedule.cycle_starts().empty() ? first - 1
                                                                               : record.schedule.cycle_starts().front());
  const auto pred = predict_daily(fit, record.schedule, start, last + 1);
  if (!pred.contains(last)) throw PreconditionError("prediction horizon ends before the last test observation");
  return smse(targets, pred, weights);
}

std::optional<double> wilcoxon_one_sided(std::span<const double> best, std::span<const double> other) {
  if (best.size() != other.size()) throw PreconditionError("paired samples differ in length");
  std::vector<double> d;
  for (std::size_t i = 0; i < best.size(); ++i) {
    const double diff = other[i] - best[i];
    if (!std::isfinite(diff)) throw PreconditionError("non-finite paired difference");
    if (diff != 0.0) d.push_back(diff);
  }
  const int n = static_cast<int>(d.size());
  if (n < kMinWilcoxonPairs) return std::nullopt;

  // mid-ranks of |d|, stored doubled so they stay integral
  std::vector<std::size_t> order(d.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return std::abs(d[a]) < std::abs(d[b]); });
  std::vector<int> rank2(d.size());
  double tie_term = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    const auto t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    for (std::size_t k = i; k <= j; ++k) rank2[order[k]] = static_cast<int>(i + j + 2);  // 2 * mean(i+1..j+1)
    i = j + 1;
  }
  int w2 = 0;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d[i] > 0.0) w2 += rank2[i];

  if (n <= kExactWilcoxonLimit) {
    // count sign assignments with W+ >= observed
    const int total = n * (n + 1);
    std::vector<double> ways(static_cast<std::size_t>(total) + 1, 0.0);
    ways[0] = 1.0;
    int reach = 0;
    for (int r : rank2) {
      for (int s = reach; s >= 0; --s)
        if (ways[static_cast<std::size_t>(s)] != 0.0) ways[static_cast<std::size_t>(s + r)] += ways[static_cast<std::size_t>(s)];
      reach += r;
    }
    double tail = 0.0;
    for (int s = w2; s <= total; ++s) tail += ways[static_cast<std::size_t>(s)];
    return std::ldexp(tail, -n);
  }
  const double nn = n;
  const double mean = nn * (nn + 1.0) / 4.0;
  const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
  if (!(var > 0.0)) return std::nullopt;
  const double z = (0.5 * w2 - mean - 0.5) / std::sqrt(var);
  return 0.5 * std::erfc(z / std::sqrt(2.0));
}

const EvalCell& EvalReport::cell(ModelId model, Group group, int n) const {
  for (const auto& c : cells)
    if (c.model == model && c.group == group && c.n_train == n) return c;
  throw PreconditionError("no cell for " + std::string(to_string(model)) + "/" + std::string(to_string(group)) +
                          "/n_train=" + std::to_string(n));
}

EvalReport aggregate(const std::vector<ScoreEntry>& scores, std::vector<ModelId> models, std::vector<int> n_train,
                     std::vector<Group> groups, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw PreconditionError("significance level must lie in (0, 1)");
  EvalReport report;
  report.models = std::move(models);
  report.n_train = std::move(n_train);
  report.groups = std::move(groups);
  report.alpha = alpha;

  std::map<std::tuple<int, int, int>, std::vector<PatientScore>> by_cell;
  for (const auto& s : scores) {
    if (!std::isfinite(s.smse)) throw PreconditionError("non-finite SMSE for patient '" + s.patient_id + "'");
    by_cell[{static_cast<int>(s.group), static_cast<int>(s.model), s.n_train}].push_back({s.patient_id, s.smse});
  }

  for (Group g : report.groups) {
    const std::size_t column_begin = report.cells.size();
    for (ModelId m : report.models) {
      for (int n : report.n_train) {
        EvalCell c;
        c.model = m;
        c.group = g;
        c.n_train = n;
        if (auto it = by_cell.find({static_cast<int>(g), static_cast<int>(m), n}); it != by_cell.end()) {
          c.scores = it->second;
          std::sort(c.scores.begin(), c.scores.end(),
                    [](const PatientScore& a, const PatientScore& b) { return a.patient_id < b.patient_id; });
          for (std::size_t i = 1; i < c.scores.size(); ++i)
            if (c.scores[i].patient_id == c.scores[i - 1].patient_id)
              throw PreconditionError("duplicate score for patient '" + c.scores[i].patient_id + "'");
          double sum = 0.0;
          for (const auto& s : c.scores) sum += s.smse;
          c.mean = sum / static_cast<double>(c.scores.size());
        }
        report.cells.push_back(std::move(c));
      }
    }
    // flags per n_train column within this group
    for (int n : report.n_train) {
      std::vector<EvalCell*> column;
      for (std::size_t i = column_begin; i < report.cells.size(); ++i)
        if (report.cells[i].n_train == n && report.cells[i].mean) column.push_back(&report.cells[i]);
      if (column.empty()) continue;
      double lo = INFINITY;
      for (auto* c : column) lo = std::min(lo, *c->mean);
      EvalCell* ref = nullptr;
      for (auto* c : column) {
        if (*c->mean == lo) {
          c->best = true;
          c->not_inferior = true;
          if (!ref) ref = c;
        }
      }
      std::map<std::string, double> ref_scores;
      for (const auto& s : ref->scores) ref_scores[s.patient_id] = s.smse;
      for (auto* c : column) {
        if (c->best) continue;
        std::vector<double> a, b;
        for (const auto& s : c->scores) {
          if (auto it = ref_scores.find(s.patient_id); it != ref_scores.end()) {
            a.push_back(it->second);
            b.push_back(s.smse);
          }
        }
        c->p_value = wilcoxon_one_sided(a, b);
        c->not_inferior = !c->p_value || *c->p_value >= alpha;
      }
    }
  }
  return report;
}

namespace {

std::string cell_text(const std::optional<double>& v) { return v ? format_double(*v) : "NA"; }

}  // namespace

void emit_report(const EvalReport& report, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error("cannot create '" + out_dir.string() + "': " + ec.message());

  for (Group g : report.groups) {
    auto out = detail::open_output((out_dir / ("heatmap_" + std::string(to_string(g)) + ".csv")).string());
    out << "model";
    for (int n : report.n_train) out << ",n_train_" << n;
    out << '\n';
    for (ModelId m : report.models) {
      out << to_string(m);
      for (int n : report.n_train) out << ',' << cell_text(report.cell(m, g, n).mean);
      out << '\n';
    }
    if (!out) throw Error("write failed for heatmap of group " + std::string(to_string(g)));
  }

  {
    auto out = detail::open_output((out_dir / "significance.csv").string());
    out << "group,model,n_train,n_patients,mean_smse,best,not_inferior,p_value\n";
    for (const auto& c : report.cells)
      out << to_string(c.group) << ',' << to_string(c.model) << ',' << c.n_train << ',' << c.scores.size() << ','
          << cell_text(c.mean) << ',' << (c.best ? 1 : 0) << ',' << (c.not_inferior ? 1 : 0) << ','
          << cell_text(c.p_value) << '\n';
    if (!out) throw Error("write failed for significance.csv");
  }

  {
    auto out = detail::open_output((out_dir / "scores_long.csv").string());
    out << "patient_id,group,model,n_train,smse\n";
    for (const auto& c : report.cells)
      for (const auto& s : c.scores)
        out << s.patient_id << ',' << to_string(c.group) << ',' << to_string(c.model) << ',' << c.n_train << ','
            << format_double(s.smse) << '\n';
    if (!out) throw Error("write failed for scores_long.csv");
  }

  nlohmann::ordered_json meta;
  meta["seed"] = report.seed;
  meta["config_hash"] = report.config_hash;
  meta["alpha"] = report.alpha;
  meta["seed_rule"] = "splitmix64(seed ^ fnv1a64(patient_id))";
  meta["test"] = "one-sided Wilcoxon signed-rank, exact for n <= 25";
  meta["models"] = nlohmann::ordered_json::array();
  for (ModelId m : report.models) meta["models"].push_back(to_string(m));
  meta["n_train"] = report.n_train;
  meta["groups"] = nlohmann::ordered_json::array();
  for (Group g : report.groups) meta["groups"].push_back(to_string(g));
  int missing = 0;
  for (const auto& c : report.cells) missing += !c.mean;
  meta["missing_cells"] = missing;
  meta["failed_fits"] = report.failed_fits;
  auto out = detail::open_output((out_dir / "metadata.json").string());
  out << meta.dump(2) << '\n';
  if (!out) throw Error("write failed for metadata.json");
}

}  // namespace hemadyn
