#pragma once

#include <string>
#include <vector>

#include "iars/efd.hpp"
#include "iars/hu.hpp"

namespace iars {

// Per-image contour distances under both metric pairings. The equation
// pairing (EFD via Mahalanobis, Hu via Euclidean) is the primary reading;
// the swapped pairing is reported alongside so either interpretation can be
// tabulated.
struct ContourRow {
  int image_id = 0;
  double efd_mahalanobis = 0;
  double efd_euclidean = 0;
  double hu_euclidean = 0;
  double hu_mahalanobis = 0;
};

struct ContourReport {
  std::vector<ContourRow> rows;
  int excluded = 0;  // pairs skipped for empty masks or degenerate contours
  double mean_efd_mahalanobis = 0;
  double mean_efd_euclidean = 0;
  double mean_hu_euclidean = 0;
  double mean_hu_mahalanobis = 0;
};

namespace detail {

// Flattened normalized EFD of the largest component, or empty when the mask
// has no usable contour.
inline std::vector<double> contour_efd_vector(const BinaryMask& m, int harmonics) {
  if (m.count() == 0) return {};
  const ContourChain chain = trace_boundary(m);
  if (chain.points.size() < 4) return {};
  return efd_normalize(efd_compute(chain, harmonics)).flat();
}

}  // namespace detail

// Covariance matrices for both pairings are fit on the ground-truth side
// only; lambda is the shrinkage intensity.
inline ContourReport contour_report(const std::vector<BinaryMask>& gt_masks,
                                    const std::vector<BinaryMask>& pred_masks,
                                    int harmonics = 100, double lambda = 0.1) {
  if (gt_masks.size() != pred_masks.size())
    throw std::invalid_argument("contour_report: mask lists differ in length");

  struct Pair {
    int id;
    std::vector<double> efd_gt, efd_pred;
    HuDescriptor hu_gt, hu_pred;
  };
  std::vector<Pair> pairs;
  ContourReport rep;
  for (std::size_t i = 0; i < gt_masks.size(); ++i) {
    auto eg = detail::contour_efd_vector(gt_masks[i], harmonics);
    auto ep = detail::contour_efd_vector(pred_masks[i], harmonics);
    if (eg.empty() || ep.empty()) {
      ++rep.excluded;
      continue;
    }
    pairs.push_back(Pair{static_cast<int>(i), std::move(eg), std::move(ep),
                         hu_moments(gt_masks[i]), hu_moments(pred_masks[i])});
  }
  if (pairs.size() < 2)
    throw std::invalid_argument("contour_report: fewer than 2 usable mask pairs");

  std::vector<std::vector<double>> efd_ref, hu_ref;
  for (const auto& p : pairs) {
    efd_ref.push_back(p.efd_gt);
    hu_ref.emplace_back(p.hu_gt.phi.begin(), p.hu_gt.phi.end());
  }
  const CovarianceModel efd_cov = fit_covariance(efd_ref, lambda);
  const CovarianceModel hu_cov = fit_covariance(hu_ref, lambda);

  for (const auto& p : pairs) {
    ContourRow row;
    row.image_id = p.id;
    row.efd_mahalanobis = mahalanobis(p.efd_gt, p.efd_pred, efd_cov);
    row.efd_euclidean = euclidean(p.efd_gt, p.efd_pred);
    row.hu_euclidean = hu_distance(p.hu_gt, p.hu_pred);
    row.hu_mahalanobis =
        mahalanobis(std::vector<double>(p.hu_gt.phi.begin(), p.hu_gt.phi.end()),
                    std::vector<double>(p.hu_pred.phi.begin(), p.hu_pred.phi.end()), hu_cov);
    rep.mean_efd_mahalanobis += row.efd_mahalanobis;
    rep.mean_efd_euclidean += row.efd_euclidean;
    rep.mean_hu_euclidean += row.hu_euclidean;
    rep.mean_hu_mahalanobis += row.hu_mahalanobis;
    rep.rows.push_back(row);
  }
  const double n = static_cast<double>(rep.rows.size());
  rep.mean_efd_mahalanobis /= n;
  rep.mean_efd_euclidean /= n;
  rep.mean_hu_euclidean /= n;
  rep.mean_hu_mahalanobis /= n;
  return rep;
}

inline std::string contour_csv_header() {
  return "image_id,efd_mahalanobis,efd_euclidean,hu_euclidean,hu_mahalanobis";
}

inline std::string contour_csv_row(const ContourRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f,%.6f", r.image_id, r.efd_mahalanobis,
                r.efd_euclidean, r.hu_euclidean, r.hu_mahalanobis);
  return buf;
}

}  // namespace iars
