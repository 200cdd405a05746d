#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "iars/image.hpp"

namespace iars {

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
};

struct RegionReport {
  double iou = 0, dice = 0, tpr = 0, tnr = 0, fpr = 0, fnr = 0;
};

inline ConfusionCounts confusion_counts(const BinaryMask& truth, const BinaryMask& pred) {
  if (truth.height != pred.height || truth.width != pred.width)
    throw std::invalid_argument("confusion_counts: mask dims differ, " +
                                std::to_string(truth.height) + "x" + std::to_string(truth.width) +
                                " vs " + std::to_string(pred.height) + "x" +
                                std::to_string(pred.width));
  ConfusionCounts c;
  for (std::size_t i = 0; i < truth.data.size(); ++i) {
    const bool t = truth.data[i], p = pred.data[i];
    if (t && p)
      ++c.tp;
    else if (!t && p)
      ++c.fp;
    else if (t && !p)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

// Ratio with the agreement convention for empty denominators: a rate whose
// denominator is zero has a zero numerator too, and reports as 1.
inline double agreement_ratio(double num, double den) { return den == 0 ? 1.0 : num / den; }

inline RegionReport region_report(const ConfusionCounts& c) {
  RegionReport r;
  const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp);
  const double tn = static_cast<double>(c.tn), fn = static_cast<double>(c.fn);
  r.iou = agreement_ratio(tp, tp + fp + fn);
  r.dice = agreement_ratio(2 * tp, 2 * tp + fp + fn);
  r.tpr = agreement_ratio(tp, tp + fn);
  r.tnr = agreement_ratio(tn, tn + fp);
  r.fpr = 1.0 - r.tnr;
  r.fnr = 1.0 - r.tpr;
  return r;
}

inline RegionReport region_report(const BinaryMask& truth, const BinaryMask& pred) {
  return region_report(confusion_counts(truth, pred));
}

inline RegionReport aggregate(const std::vector<RegionReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("aggregate: empty report list");
  RegionReport m;
  for (const auto& r : reports) {
    m.iou += r.iou;
    m.dice += r.dice;
    m.tpr += r.tpr;
    m.tnr += r.tnr;
    m.fpr += r.fpr;
    m.fnr += r.fnr;
  }
  const double n = static_cast<double>(reports.size());
  m.iou /= n;
  m.dice /= n;
  m.tpr /= n;
  m.tnr /= n;
  m.fpr /= n;
  m.fnr /= n;
  return m;
}

inline std::string region_csv_header() { return "model,tpr,fpr,tnr,fnr,dice,iou"; }

inline std::string region_csv_row(const std::string& model, const RegionReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", model.c_str(), r.tpr, r.fpr,
                r.tnr, r.fnr, r.dice, r.iou);
  return buf;
}

}  // namespace iars
