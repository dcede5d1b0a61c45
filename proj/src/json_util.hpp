#pragma once

// Internal JSON helpers shared by the model checkpoint writers. Not part of
// the public headers; everything here assumes nlohmann round-trips doubles
// exactly (shortest-representation output).

#include <string>

#include "calm/corpus.hpp"
#include "calm/nn.hpp"
#include "json.hpp"

namespace calm::detail {

nlohmann::json params_to_json(const ParamStore& params);
ParamStore params_from_json(const nlohmann::json& j);

nlohmann::json vocab_to_json(const Vocabulary& vocab);
Vocabulary vocab_from_json(const nlohmann::json& j);

// Reads a whole file as one JSON document with filename-prefixed errors.
nlohmann::json load_json_file(const std::string& path);
void save_json_file(const nlohmann::json& j, const std::string& path);

}  // namespace calm::detail
