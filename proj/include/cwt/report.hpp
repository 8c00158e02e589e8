#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "cwt/meta.hpp"
#include "cwt/pipeline.hpp"

namespace cwt {

nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);

// One row per trial plus a final "mean" row.
std::string summary_csv(const EvalReport& report);

struct Curve {
  std::string name;
  std::vector<double> values;
};

// Long format: curve,step,value.
std::string curves_csv(const std::vector<Curve>& curves);
std::string curves_svg(const std::vector<Curve>& curves, const std::string& title);
std::string bars_svg(const std::vector<std::string>& labels, const std::vector<double>& values,
                     const std::string& title);

void write_text(const std::string& path, const std::string& text);

// results.json, summary.csv, curves.csv, resolved_config.json, plus
// curves.svg and miou.svg.
void write_report_bundle(const std::string& dir, const EvalReport& report, const std::vector<Curve>& curves,
                         const nlohmann::json& resolved_config);

struct OrderingVerdict {
  std::string better;
  std::string worse;
  int wins = 0;    // seeds where better > worse
  int seeds = 0;
  double mean_margin = 0.0;
};

struct AblationTable {
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> rows;              // report keys
  std::vector<std::vector<double>> miou;      // [row][seed]
  std::vector<OrderingVerdict> verdicts;

  double mean(std::size_t row) const;
  double stddev(std::size_t row) const;
};

AblationTable ablation_table(const std::vector<SeedResult>& results, std::size_t shots);
std::string format_ablation_table(const AblationTable& table);
nlohmann::json ablation_json(const AblationTable& table);

}  // namespace cwt
