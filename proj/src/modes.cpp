#include "mshot/losses.hpp"
#include "mshot/sbp.hpp"

namespace mshot {

HeadMode head_mode_from_string(const std::string& name) {
  if (name == "pair") return HeadMode::kPair;
  if (name == "drop-last") return HeadMode::kDropLast;
  if (name == "difference") return HeadMode::kDifference;
  throw InvalidArgument("unknown head mode: " + name + " (expected pair, drop-last or difference)");
}

std::string to_string(HeadMode m) {
  switch (m) {
    case HeadMode::kPair: return "pair";
    case HeadMode::kDropLast: return "drop-last";
    case HeadMode::kDifference: return "difference";
  }
  return "pair";
}

WeightMode weight_mode_from_string(const std::string& name) {
  if (name == "uncertainty") return WeightMode::kUncertainty;
  if (name == "plain") return WeightMode::kPlain;
  throw InvalidArgument("unknown weight mode: " + name + " (expected uncertainty or plain)");
}

std::string to_string(WeightMode m) { return m == WeightMode::kPlain ? "plain" : "uncertainty"; }

}  // namespace mshot
