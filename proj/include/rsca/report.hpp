#pragma once

// Text serialization of metric reports: region CSV, aggregate CSV, JSON, and the row-normalized
// confusion table.

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "rsca/metrics.hpp"

namespace rsca {

inline constexpr const char* kRegionCsvHeader = "region,dsc,accuracy,iou,bf_score";
inline constexpr const char* kAggregateCsvHeader = "global_acc,mean_acc,mean_iou,weighted_iou,mean_bf";
inline constexpr const char* kConfusionCsvHeader = "actual,lesion,background";

inline std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string region_csv(const MetricsReport& r) {
  std::ostringstream os;
  os << kRegionCsvHeader << "\n";
  for (const RegionRow* row : {&r.lesion, &r.background}) {
    os << row->region << "," << fixed6(row->dsc) << "," << fixed6(row->accuracy) << "," << fixed6(row->iou) << ","
       << fixed6(row->bf_score) << "\n";
  }
  return os.str();
}

inline std::string aggregate_csv(const MetricsReport& r) {
  std::ostringstream os;
  os << kAggregateCsvHeader << "\n"
     << fixed6(r.global_acc) << "," << fixed6(r.mean_acc) << "," << fixed6(r.mean_iou) << ","
     << fixed6(r.weighted_iou) << "," << fixed6(r.mean_bf) << "\n";
  return os.str();
}

/// Rows are the true class, columns the predicted class; each row sums to 1 (0 for an absent class).
inline std::string confusion_csv(const ConfusionCounts& cc) {
  auto row = [](const char* name, std::uint64_t hit, std::uint64_t miss) {
    const double total = static_cast<double>(hit + miss);
    const double a = total > 0 ? static_cast<double>(hit) / total : 0.0;
    const double b = total > 0 ? static_cast<double>(miss) / total : 0.0;
    return std::string(name) + "," + fixed6(a) + "," + fixed6(b) + "\n";
  };
  std::ostringstream os;
  os << kConfusionCsvHeader << "\n" << row("lesion", cc.tp, cc.fn);
  // Background row: predicted lesion first to keep the column order.
  const double total = static_cast<double>(cc.fp + cc.tn);
  os << "background," << fixed6(total > 0 ? static_cast<double>(cc.fp) / total : 0.0) << ","
     << fixed6(total > 0 ? static_cast<double>(cc.tn) / total : 0.0) << "\n";
  return os.str();
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j;
  auto region = [](const RegionRow& row) {
    return nlohmann::json{{"region", row.region}, {"dsc", row.dsc},         {"accuracy", row.accuracy},
                          {"iou", row.iou},       {"bf_score", row.bf_score}, {"recall", row.recall}};
  };
  j["regions"] = nlohmann::json::array({region(r.lesion), region(r.background)});
  j["aggregate"] = {{"global_acc", r.global_acc},
                    {"mean_acc", r.mean_acc},
                    {"mean_iou", r.mean_iou},
                    {"weighted_iou", r.weighted_iou},
                    {"mean_bf", r.mean_bf}};
  j["confusion"] = {{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"fn", r.counts.fn}, {"tn", r.counts.tn}};
  j["images"] = r.images;
  return j;
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  auto region = [](const nlohmann::json& row) {
    return RegionRow{row.at("region").get<std::string>(), row.at("dsc").get<double>(),
                     row.at("accuracy").get<double>(),    row.at("iou").get<double>(),
                     row.at("bf_score").get<double>(),    row.value("recall", 0.0)};
  };
  r.lesion = region(j.at("regions").at(0));
  r.background = region(j.at("regions").at(1));
  const auto& a = j.at("aggregate");
  r.global_acc = a.at("global_acc");
  r.mean_acc = a.at("mean_acc");
  r.mean_iou = a.at("mean_iou");
  r.weighted_iou = a.at("weighted_iou");
  r.mean_bf = a.at("mean_bf");
  const auto& c = j.at("confusion");
  r.counts = {c.at("tp"), c.at("fp"), c.at("fn"), c.at("tn")};
  r.images = j.value("images", std::size_t{0});
  return r;
}

/// Human-readable tables in the layout of the region, aggregate and pixel-classification tables.
inline std::string format_tables(const MetricsReport& r) {
  std::ostringstream os;
  char line[160];
  os << "Aggregate\n";
  std::snprintf(line, sizeof line, "  %-10s %-10s %-10s %-12s %-10s\n", "GlobalAcc", "MeanAcc", "MeanIoU",
                "WeightedIoU", "MeanBF");
  os << line;
  std::snprintf(line, sizeof line, "  %-10.4f %-10.4f %-10.4f %-12.4f %-10.4f\n", r.global_acc, r.mean_acc,
                r.mean_iou, r.weighted_iou, r.mean_bf);
  os << line << "\nPer region\n";
  std::snprintf(line, sizeof line, "  %-12s %-8s %-9s %-8s %-8s\n", "Region", "DSC", "Accuracy", "IoU", "BFScore");
  os << line;
  for (const RegionRow* row : {&r.lesion, &r.background}) {
    std::snprintf(line, sizeof line, "  %-12s %-8.4f %-9.4f %-8.4f %-8.4f\n", row->region.c_str(), row->dsc,
                  row->accuracy, row->iou, row->bf_score);
    os << line;
  }
  os << "\nPixel classification (rows: truth, columns: predicted)\n";
  const double lt = static_cast<double>(r.counts.tp + r.counts.fn);
  const double bt = static_cast<double>(r.counts.fp + r.counts.tn);
  std::snprintf(line, sizeof line, "  %-12s %-10s %-10s\n", "", "Lesion", "Background");
  os << line;
  std::snprintf(line, sizeof line, "  %-12s %-10.4f %-10.4f\n", "Lesion", lt > 0 ? r.counts.tp / lt : 0.0,
                lt > 0 ? r.counts.fn / lt : 0.0);
  os << line;
  std::snprintf(line, sizeof line, "  %-12s %-10.4f %-10.4f\n", "Background", bt > 0 ? r.counts.fp / bt : 0.0,
                bt > 0 ? r.counts.tn / bt : 0.0);
  os << line;
  return os.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path);
}

}  // namespace rsca
