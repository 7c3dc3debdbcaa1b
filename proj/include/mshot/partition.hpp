#pragma once

// Boundary-vector algebra: thresholding, shot counting, partitioning,
// per-scan labeling and segment pooling.

#include "mshot/common.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mshot {

/// Bit i set means a shot boundary between scans i and i+1.
using BoundaryVector = std::vector<std::uint8_t>;
using Labeling = std::vector<int>;

/// Half-open scan range [begin, end).
struct Segment {
  int begin = 0;
  int end = 0;

  int size() const { return end - begin; }
  friend bool operator==(const Segment&, const Segment&) = default;
};

struct SegmentPartition {
  std::vector<Segment> segments;

  int n_scans() const { return segments.empty() ? 0 : segments.back().end; }
  int size() const { return static_cast<int>(segments.size()); }
  friend bool operator==(const SegmentPartition&, const SegmentPartition&) = default;
};

enum class Pooling { kMean, kFirst, kMiddle };

template <typename Derived>
BoundaryVector binarize(const Eigen::MatrixBase<Derived>& probs, double tau) {
  require(tau > 0.0 && tau < 1.0, "binarize: tau must lie in (0, 1)");
  BoundaryVector out(static_cast<std::size_t>(probs.size()));
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    const double p = static_cast<double>(probs(i));
    require(p >= 0.0 && p <= 1.0, "binarize: probability outside [0, 1]");
    out[static_cast<std::size_t>(i)] = p > tau ? 1 : 0;
  }
  return out;
}

int count_shots(const BoundaryVector& bounds);
SegmentPartition partition_from(const BoundaryVector& bounds);
BoundaryVector boundaries_of(const SegmentPartition& part);
Labeling labels_from(const SegmentPartition& part);
/// Inverse of labels_from for monotone contiguous labelings.
BoundaryVector boundaries_of_labels(const Labeling& labels);

std::string to_bitstring(const BoundaryVector& bounds);
BoundaryVector from_bitstring(const std::string& bits);

/// Pools scan rows per segment; result has one row per segment.
template <typename Derived>
Mat<typename Derived::Scalar> aggregate(const Eigen::MatrixBase<Derived>& scans,
                                        const SegmentPartition& part,
                                        Pooling pooling = Pooling::kMean) {
  using Scalar = typename Derived::Scalar;
  require(part.n_scans() == scans.rows(), "aggregate: partition does not cover the scan count");
  Mat<Scalar> out(part.size(), scans.cols());
  for (int j = 0; j < part.size(); ++j) {
    const Segment& s = part.segments[j];
    switch (pooling) {
      case Pooling::kMean:
        out.row(j) = scans.middleRows(s.begin, s.size()).colwise().sum() / Scalar(s.size());
        break;
      case Pooling::kFirst:
        out.row(j) = scans.row(s.begin);
        break;
      case Pooling::kMiddle:
        out.row(j) = scans.row((s.begin + s.end - 1) / 2);
        break;
    }
  }
  return out;
}

/// Adjoint of aggregate: scatters per-segment gradients back to scan rows.
template <typename Derived>
Mat<typename Derived::Scalar> aggregate_backward(const Eigen::MatrixBase<Derived>& grad_out,
                                                 const SegmentPartition& part,
                                                 Pooling pooling = Pooling::kMean) {
  using Scalar = typename Derived::Scalar;
  Mat<Scalar> g = Mat<Scalar>::Zero(part.n_scans(), grad_out.cols());
  for (int j = 0; j < part.size(); ++j) {
    const Segment& s = part.segments[j];
    switch (pooling) {
      case Pooling::kMean:
        for (int r = s.begin; r < s.end; ++r) g.row(r) += grad_out.row(j) / Scalar(s.size());
        break;
      case Pooling::kFirst:
        g.row(s.begin) += grad_out.row(j);
        break;
      case Pooling::kMiddle:
        g.row((s.begin + s.end - 1) / 2) += grad_out.row(j);
        break;
    }
  }
  return g;
}

Pooling pooling_from_string(const std::string& name);
std::string to_string(Pooling p);

}  // namespace mshot
