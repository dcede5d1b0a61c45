#include "json_util.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace calm::detail {

nlohmann::json params_to_json(const ParamStore& params) {
  nlohmann::json j;
  j["seed"] = params.seed();
  nlohmann::json jp = nlohmann::json::object();
  params.for_each([&](const std::string& name, const Param& p) {
    const double* d = p.value.data();
    for (std::size_t i = 0; i < p.value.size(); ++i)
      if (!std::isfinite(d[i]))
        throw std::runtime_error("checkpoint: refusing to save non-finite parameter '" + name +
                                 "'");
    nlohmann::json e;
    e["rows"] = p.value.rows();
    e["cols"] = p.value.cols();
    e["data"] = std::vector<double>(d, d + p.value.size());
    jp[name] = std::move(e);
  });
  j["params"] = std::move(jp);
  return j;
}

ParamStore params_from_json(const nlohmann::json& j) {
  ParamStore store(j.at("seed").get<uint64_t>());
  for (const auto& [name, e] : j.at("params").items()) {
    std::size_t rows = e.at("rows").get<std::size_t>();
    std::size_t cols = e.at("cols").get<std::size_t>();
    std::vector<double> data = e.at("data").get<std::vector<double>>();
    if (data.size() != rows * cols)
      throw std::runtime_error("checkpoint: parameter '" + name + "' has " +
                               std::to_string(data.size()) + " values, expected " +
                               std::to_string(rows * cols));
    Matrix& m = store.add(name, rows, cols, ParamInit::Zero);
    std::copy(data.begin(), data.end(), m.data());
  }
  return store;
}

nlohmann::json vocab_to_json(const Vocabulary& vocab) { return vocab.tokens(); }

Vocabulary vocab_from_json(const nlohmann::json& j) {
  std::vector<std::string> tokens = j.get<std::vector<std::string>>();
  Vocabulary v;
  if (tokens.size() < 3 || tokens[0] != Vocabulary::bos_token() ||
      tokens[1] != Vocabulary::eos_token() || tokens[2] != Vocabulary::unk_token())
    throw std::runtime_error("checkpoint: vocabulary must start with the reserved markers");
  for (std::size_t i = 3; i < tokens.size(); ++i) {
    TokenId id = v.add(tokens[i]);
    if (std::size_t(id) != i)
      throw std::runtime_error("checkpoint: duplicate vocabulary token '" + tokens[i] + "'");
  }
  return v;
}

nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  try {
    nlohmann::json j;
    in >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

void save_json_file(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("write to " + path + " failed");
}

}  // namespace calm::detail
