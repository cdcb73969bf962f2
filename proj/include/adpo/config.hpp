#pragma once

// JSON (de)serialization for run configuration. Field names mirror the
// config structs exactly; absent fields keep their defaults.

#include <json.hpp>

#include "adpo/errors.hpp"
#include "adpo/trainer.hpp"

namespace adpo {

inline nlohmann::json perturb_cfg_to_json(const PerturbCfg& c) {
  return nlohmann::json{{"epsilon", c.epsilon},   {"step_size", c.step_size},
                        {"iters", c.iters},       {"norm", to_string(c.norm)},
                        {"space", to_string(c.space)}, {"seed", c.seed}};
}

inline PerturbCfg perturb_cfg_from_json(const nlohmann::json& j, PerturbCfg c = {}) {
  if (j.contains("epsilon")) c.epsilon = j.at("epsilon").get<double>();
  if (j.contains("step_size")) c.step_size = j.at("step_size").get<double>();
  if (j.contains("iters")) c.iters = j.at("iters").get<int>();
  if (j.contains("norm")) c.norm = norm_from_string(j.at("norm").get<std::string>());
  if (j.contains("space")) c.space = space_from_string(j.at("space").get<std::string>());
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

inline nlohmann::json loss_cfg_to_json(const LossCfg& c) {
  return nlohmann::json{{"alpha", c.alpha},
                        {"beta", c.beta},
                        {"variant", to_string(c.variant)},
                        {"perturb_space", to_string(c.perturb_space)}};
}

inline LossCfg loss_cfg_from_json(const nlohmann::json& j, LossCfg c = {}) {
  if (j.contains("alpha")) c.alpha = j.at("alpha").get<double>();
  if (j.contains("beta")) c.beta = j.at("beta").get<double>();
  if (j.contains("variant")) c.variant = variant_from_string(j.at("variant").get<std::string>());
  if (j.contains("perturb_space"))
    c.perturb_space = loss_space_from_string(j.at("perturb_space").get<std::string>());
  return c;
}

inline nlohmann::json opt_cfg_to_json(const OptCfg& c) {
  return nlohmann::json{{"kind", to_string(c.kind)},
                        {"beta1", c.beta1},
                        {"beta2", c.beta2},
                        {"eps_adam", c.eps_adam}};
}

inline OptCfg opt_cfg_from_json(const nlohmann::json& j, OptCfg c = {}) {
  if (j.contains("kind")) c.kind = opt_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("beta1")) c.beta1 = j.at("beta1").get<double>();
  if (j.contains("beta2")) c.beta2 = j.at("beta2").get<double>();
  if (j.contains("eps_adam")) c.eps_adam = j.at("eps_adam").get<double>();
  return c;
}

inline nlohmann::json train_cfg_to_json(const TrainCfg& c) {
  return nlohmann::json{{"learning_rate", c.learning_rate},
                        {"batch_size", c.batch_size},
                        {"epochs", c.epochs},
                        {"loss", loss_cfg_to_json(c.loss)},
                        {"perturb", perturb_cfg_to_json(c.perturb)},
                        {"seed", c.seed},
                        {"utility_mix", c.utility_mix},
                        {"optimizer", opt_cfg_to_json(c.optimizer)}};
}

inline TrainCfg train_cfg_from_json(const nlohmann::json& j, TrainCfg c = {}) {
  if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate").get<double>();
  if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
  if (j.contains("epochs")) c.epochs = j.at("epochs").get<int>();
  if (j.contains("loss")) c.loss = loss_cfg_from_json(j.at("loss"), c.loss);
  if (j.contains("perturb")) c.perturb = perturb_cfg_from_json(j.at("perturb"), c.perturb);
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("utility_mix")) c.utility_mix = j.at("utility_mix").get<double>();
  if (j.contains("optimizer")) c.optimizer = opt_cfg_from_json(j.at("optimizer"), c.optimizer);
  return c;
}

// Parse a JSON file, mapping parse failures (with line numbers) to ParseError.
inline nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    std::size_t line = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i)
      if (text[i] == '\n') ++line;
    throw ParseError("'" + path + "' line " + std::to_string(line) + ": " + e.what());
  }
}

}  // namespace adpo
