#include "cwt/report.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace cwt {

using nlohmann::json;

namespace {

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string exact(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string svg_escape(const std::string& text) {
  std::string out;
  for (char c : text) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

}  // namespace

json report_to_json(const EvalReport& r) {
  json classes = json::array();
  for (const auto& c : r.per_class) {
    classes.push_back({{"class_id", c.class_id},
                       {"intersection", c.intersection},
                       {"union", c.union_count},
                       {"episodes", c.episodes},
                       {"iou", c.iou}});
  }
  json episodes = json::array();
  for (const auto& e : r.episodes) {
    episodes.push_back({{"trial", e.trial},
                        {"episode", e.episode},
                        {"class_id", e.class_id},
                        {"fg_intersection", e.fg_intersection},
                        {"fg_union", e.fg_union},
                        {"bg_intersection", e.bg_intersection},
                        {"bg_union", e.bg_union},
                        {"fg_iou", e.fg_iou},
                        {"bg_iou", e.bg_iou}});
  }
  return {{"mode", r.mode},
          {"mean_miou", r.mean_miou},
          {"ci95", r.ci95},
          {"per_trial_miou", r.per_trial_miou},
          {"background_iou", r.background_iou},
          {"per_class", classes},
          {"fingerprint", r.fingerprint},
          {"backbone_hash", r.backbone_hash},
          {"cwt_hash", r.cwt_hash},
          {"params_unchanged", r.params_unchanged},
          {"episodes", episodes}};
}

EvalReport report_from_json(const json& j) {
  EvalReport r;
  r.mode = j.at("mode").get<std::string>();
  r.mean_miou = j.at("mean_miou").get<double>();
  r.ci95 = j.at("ci95").get<double>();
  r.per_trial_miou = j.at("per_trial_miou").get<std::vector<double>>();
  r.background_iou = j.at("background_iou").get<double>();
  for (const auto& c : j.at("per_class")) {
    r.per_class.push_back({c.at("class_id").get<int>(), c.at("intersection").get<std::uint64_t>(),
                           c.at("union").get<std::uint64_t>(), c.at("episodes").get<std::size_t>(),
                           c.at("iou").get<double>()});
  }
  r.fingerprint = j.at("fingerprint").get<std::string>();
  r.backbone_hash = j.at("backbone_hash").get<std::string>();
  r.cwt_hash = j.at("cwt_hash").get<std::string>();
  r.params_unchanged = j.at("params_unchanged").get<bool>();
  for (const auto& e : j.at("episodes")) {
    EpisodeRecord rec;
    rec.trial = e.at("trial").get<int>();
    rec.episode = e.at("episode").get<int>();
    rec.class_id = e.at("class_id").get<int>();
    rec.fg_intersection = e.at("fg_intersection").get<std::uint64_t>();
    rec.fg_union = e.at("fg_union").get<std::uint64_t>();
    rec.bg_intersection = e.at("bg_intersection").get<std::uint64_t>();
    rec.bg_union = e.at("bg_union").get<std::uint64_t>();
    rec.fg_iou = e.at("fg_iou").get<double>();
    rec.bg_iou = e.at("bg_iou").get<double>();
    r.episodes.push_back(rec);
  }
  return r;
}

std::string summary_csv(const EvalReport& r) {
  std::ostringstream s;
  s << "trial,mode,miou\n";
  for (std::size_t t = 0; t < r.per_trial_miou.size(); ++t) {
    s << t << "," << r.mode << "," << exact(r.per_trial_miou[t]) << "\n";
  }
  s << "mean," << r.mode << "," << exact(r.mean_miou) << "\n";
  s << "ci95," << r.mode << "," << exact(r.ci95) << "\n";
  return s.str();
}

std::string curves_csv(const std::vector<Curve>& curves) {
  std::ostringstream s;
  s << "curve,step,value\n";
  for (const auto& c : curves) {
    for (std::size_t i = 0; i < c.values.size(); ++i) s << c.name << "," << i << "," << exact(c.values[i]) << "\n";
  }
  return s.str();
}

std::string curves_svg(const std::vector<Curve>& curves, const std::string& title) {
  constexpr double W = 640, H = 360, L = 60, R = 20, T = 40, B = 40;
  double lo = 0.0, hi = 0.0;
  std::size_t longest = 1;
  bool any = false;
  for (const auto& c : curves) {
    longest = std::max(longest, c.values.size());
    for (double v : c.values) {
      if (!std::isfinite(v)) continue;
      lo = any ? std::min(lo, v) : v;
      hi = any ? std::max(hi, v) : v;
      any = true;
    }
  }
  if (hi - lo < 1e-12) hi = lo + 1.0;
  const auto px = [&](std::size_t i) { return L + (W - L - R) * static_cast<double>(i) / std::max<std::size_t>(1, longest - 1); };
  const auto py = [&](double v) { return T + (H - T - B) * (hi - v) / (hi - lo); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
    << svg_escape(title) << "</text>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  s << "<text x=\"" << L - 6 << "\" y=\"" << T + 4 << "\" text-anchor=\"end\" font-size=\"10\">" << fixed(hi, 3)
    << "</text>\n";
  s << "<text x=\"" << L - 6 << "\" y=\"" << H - B << "\" text-anchor=\"end\" font-size=\"10\">" << fixed(lo, 3)
    << "</text>\n";
  for (std::size_t k = 0; k < curves.size(); ++k) {
    const auto& c = curves[k];
    const char* color = kPalette[k % std::size(kPalette)];
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1\" points=\"";
    for (std::size_t i = 0; i < c.values.size(); ++i) {
      if (!std::isfinite(c.values[i])) continue;
      s << fixed(px(i), 2) << "," << fixed(py(c.values[i]), 2) << " ";
    }
    s << "\"/>\n";
    s << "<text x=\"" << W - R << "\" y=\"" << T + 14 * (k + 1) << "\" text-anchor=\"end\" font-size=\"11\" fill=\""
      << color << "\">" << svg_escape(c.name) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string bars_svg(const std::vector<std::string>& labels, const std::vector<double>& values,
                     const std::string& title) {
  constexpr double W = 640, H = 360, L = 40, T = 40, B = 60;
  const double top = std::max(1e-9, *std::max_element(values.begin(), values.end()));
  const double slot = (W - 2 * L) / std::max<std::size_t>(1, values.size());
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
    << svg_escape(title) << "</text>\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double h = (H - T - B) * std::max(0.0, values[i]) / top;
    const double x = L + slot * static_cast<double>(i) + slot * 0.15;
    s << "<rect x=\"" << fixed(x, 2) << "\" y=\"" << fixed(H - B - h, 2) << "\" width=\"" << fixed(slot * 0.7, 2)
      << "\" height=\"" << fixed(h, 2) << "\" fill=\"" << kPalette[i % std::size(kPalette)] << "\"/>\n";
    s << "<text x=\"" << fixed(x + slot * 0.35, 2) << "\" y=\"" << fixed(H - B - h - 4, 2)
      << "\" text-anchor=\"middle\" font-size=\"11\">" << fixed(100.0 * values[i], 1) << "</text>\n";
    s << "<text x=\"" << fixed(x + slot * 0.35, 2) << "\" y=\"" << H - B + 16
      << "\" text-anchor=\"middle\" font-size=\"11\">" << svg_escape(labels[i]) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << text;
  if (!out) throw Error("failed writing '" + path + "'");
}

void write_report_bundle(const std::string& dir, const EvalReport& report, const std::vector<Curve>& curves,
                         const json& resolved_config) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create '" + dir + "': " + ec.message());
  const std::string base = dir + "/";
  write_text(base + "results.json", report_to_json(report).dump(2) + "\n");
  write_text(base + "summary.csv", summary_csv(report));
  write_text(base + "curves.csv", curves_csv(curves));
  write_text(base + "resolved_config.json", resolved_config.dump(2) + "\n");
  write_text(base + "curves.svg", curves_svg(curves, "loss"));
  std::vector<std::string> labels;
  for (std::size_t t = 0; t < report.per_trial_miou.size(); ++t) labels.push_back("trial " + std::to_string(t));
  labels.push_back("mean");
  std::vector<double> values = report.per_trial_miou;
  values.push_back(report.mean_miou);
  write_text(base + "miou.svg", bars_svg(labels, values, report.mode + " mIoU"));
}

double AblationTable::mean(std::size_t row) const {
  const auto& v = miou[row];
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double AblationTable::stddev(std::size_t row) const {
  const auto& v = miou[row];
  if (v.size() < 2) return 0.0;
  const double m = mean(row);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

AblationTable ablation_table(const std::vector<SeedResult>& results, std::size_t shots) {
  AblationTable t;
  for (const auto& r : results) t.seeds.push_back(r.seed);
  const AblationMode modes[] = {AblationMode::full_cwt, AblationMode::classifier_only, AblationMode::whole_model_meta,
                                AblationMode::attend_support};
  for (AblationMode m : modes) {
    const std::string key = report_key(m, shots);
    if (results.empty() || !results.front().reports.count(key)) continue;
    t.rows.push_back(key);
    std::vector<double> row;
    for (const auto& r : results) row.push_back(r.miou(key));
    t.miou.push_back(row);
  }
  if (t.rows.empty() || t.rows.front() != report_key(AblationMode::full_cwt, shots)) return t;
  for (std::size_t i = 1; i < t.rows.size(); ++i) {
    OrderingVerdict v{t.rows[0], t.rows[i]};
    for (std::size_t s = 0; s < t.seeds.size(); ++s) {
      const double margin = t.miou[0][s] - t.miou[i][s];
      if (margin > 0.0) ++v.wins;
      v.mean_margin += margin / static_cast<double>(t.seeds.size());
    }
    v.seeds = static_cast<int>(t.seeds.size());
    t.verdicts.push_back(v);
  }
  return t;
}

std::string format_ablation_table(const AblationTable& t) {
  std::ostringstream s;
  s << std::left << std::setw(22) << "mode";
  for (auto seed : t.seeds) s << std::right << std::setw(9) << ("seed " + std::to_string(seed));
  s << std::right << std::setw(18) << "mean +- std" << "\n";
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    s << std::left << std::setw(22) << t.rows[i];
    for (double v : t.miou[i]) s << std::right << std::setw(9) << fixed(100.0 * v, 2);
    s << std::right << std::setw(18) << (fixed(100.0 * t.mean(i), 2) + " +- " + fixed(100.0 * t.stddev(i), 2))
      << "\n";
  }
  for (const auto& v : t.verdicts) {
    s << v.better << " > " << v.worse << ": " << v.wins << "/" << v.seeds << " seeds, mean margin "
      << fixed(100.0 * v.mean_margin, 2) << " mIoU points\n";
  }
  return s.str();
}

json ablation_json(const AblationTable& t) {
  json rows = json::array();
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    rows.push_back({{"mode", t.rows[i]}, {"miou", t.miou[i]}, {"mean", t.mean(i)}, {"std", t.stddev(i)}});
  }
  json verdicts = json::array();
  for (const auto& v : t.verdicts) {
    verdicts.push_back(
        {{"better", v.better}, {"worse", v.worse}, {"wins", v.wins}, {"seeds", v.seeds}, {"mean_margin", v.mean_margin}});
  }
  return {{"seeds", t.seeds}, {"rows", rows}, {"verdicts", verdicts}};
}

}  // namespace cwt
