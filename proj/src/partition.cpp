#include "mshot/partition.hpp"

namespace mshot {

int count_shots(const BoundaryVector& bounds) {
  int n = 1;
  for (auto b : bounds) n += b ? 1 : 0;
  return n;
}

SegmentPartition partition_from(const BoundaryVector& bounds) {
  SegmentPartition p;
  const int m = static_cast<int>(bounds.size()) + 1;
  int begin = 0;
  for (int i = 0; i + 1 < m; ++i) {
    require(bounds[i] <= 1, "boundary bits must be 0 or 1");
    if (bounds[i]) {
      p.segments.push_back({begin, i + 1});
      begin = i + 1;
    }
  }
  p.segments.push_back({begin, m});
  return p;
}

BoundaryVector boundaries_of(const SegmentPartition& part) {
  require(!part.segments.empty(), "partition has no segments");
  BoundaryVector b(static_cast<std::size_t>(part.n_scans() - 1), 0);
  for (std::size_t j = 0; j + 1 < part.segments.size(); ++j)
    b[static_cast<std::size_t>(part.segments[j].end - 1)] = 1;
  return b;
}

Labeling labels_from(const SegmentPartition& part) {
  Labeling l(static_cast<std::size_t>(part.n_scans()));
  for (int j = 0; j < part.size(); ++j)
    for (int r = part.segments[j].begin; r < part.segments[j].end; ++r) l[r] = j;
  return l;
}

BoundaryVector boundaries_of_labels(const Labeling& labels) {
  require(!labels.empty(), "labeling is empty");
  BoundaryVector b(labels.size() - 1, 0);
  for (std::size_t i = 0; i + 1 < labels.size(); ++i) {
    require(labels[i + 1] == labels[i] || labels[i + 1] == labels[i] + 1,
            "labeling is not monotone contiguous");
    b[i] = labels[i + 1] != labels[i];
  }
  return b;
}

std::string to_bitstring(const BoundaryVector& bounds) {
  std::string s;
  s.reserve(bounds.size());
  for (auto b : bounds) s.push_back(b ? '1' : '0');
  return s;
}

BoundaryVector from_bitstring(const std::string& bits) {
  BoundaryVector b;
  b.reserve(bits.size());
  for (char ch : bits) {
    if (ch != '0' && ch != '1') throw FormatError("invalid boundary bit string: " + bits);
    b.push_back(ch == '1');
  }
  return b;
}

Pooling pooling_from_string(const std::string& name) {
  if (name == "mean") return Pooling::kMean;
  if (name == "first") return Pooling::kFirst;
  if (name == "middle") return Pooling::kMiddle;
  throw InvalidArgument("unknown pooling: " + name);
}

std::string to_string(Pooling p) {
  switch (p) {
    case Pooling::kMean:
      return "mean";
    case Pooling::kFirst:
      return "first";
    case Pooling::kMiddle:
      return "middle";
  }
  return "mean";
}

}  // namespace mshot
