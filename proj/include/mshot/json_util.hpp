#pragma once

// JSON conversion for configuration structs. Readers start from defaults,
// override present keys, and reject unknown ones.

#include "mshot/synthesis.hpp"

#include "json.hpp"

#include <initializer_list>
#include <string>

namespace mshot {

using Json = nlohmann::ordered_json;

/// Throws InvalidArgument naming the first key of j not in `allowed`.
void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where);

template <typename T>
void read_opt(const Json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw InvalidArgument(where + "." + key + ": wrong type");
  }
}

Json synth_config_to_json(const SynthConfig& c);
/// Partial documents are allowed; "protocol" selects the base defaults.
SynthConfig synth_config_from_json(const Json& j);

}  // namespace mshot
