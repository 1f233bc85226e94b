// Copyright 2026 The privseg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "harness.hpp"

namespace privseg::harness {
namespace {

namespace pt = boost::property_tree;

const std::map<std::string, std::set<std::string>>& schema() {
  static const std::map<std::string, std::set<std::string>> keys = {
      {"run", {"name"}},
      {"model", {"family", "backbone", "base_channels", "depth", "kernel_size", "seed"}},
      {"data", {"path", "patients", "slices_per_patient", "height", "width", "seed",
                "split_seed"}},
      {"train", {"mode", "epochs", "optimizer", "lr", "beta1", "beta2", "eps", "batch_size",
                 "seed", "augment", "max_translate", "max_rotate_deg", "scale_lo",
                 "scale_hi"}},
      {"privacy", {"regime", "noise_multiplier", "clip_norm", "delta", "budget"}},
      {"federation", {"n_workers", "sync_every", "rounds", "weighted", "partition_seed",
                      "round_checkpoints", "capture_round", "capture_worker"}},
  };
  return keys;
}

void check_keys(const pt::ptree& tree) {
  for (const auto& [section, body] : tree) {
    auto it = schema().find(section);
    if (it == schema().end()) throw UsageError(fmt::format("unknown config section [{}]", section));
    if (!body.data().empty()) {
      throw UsageError(fmt::format("key '{}' outside any section", section));
    }
    for (const auto& [key, value] : body) {
      if (!it->second.count(key)) {
        throw UsageError(fmt::format("unknown config key '{}' in [{}]", key, section));
      }
    }
  }
}

template <typename T>
T get(const pt::ptree& tree, const std::string& path, T fallback) {
  auto node = tree.get_child_optional(path);
  if (!node) return fallback;
  try {
    return node->get_value<T>();
  } catch (const pt::ptree_bad_data&) {
    throw UsageError(fmt::format("config value {} = '{}' has the wrong type", path,
                                 node->data()));
  }
}

template <typename F>
auto parse_enum(const std::string& what, const std::string& value, F&& parse) {
  try {
    return parse(value);
  } catch (const std::invalid_argument&) {
    throw UsageError(fmt::format("unknown {} '{}'", what, value));
  }
}

}  // namespace

std::string_view to_string(Mode mode) { return mode == Mode::kLocal ? "local" : "federated"; }

ExperimentConfig parse_config(const std::string& ini_text) {
  pt::ptree tree;
  std::istringstream in(ini_text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw UsageError(fmt::format("bad config: {}", e.message()));
  }
  check_keys(tree);

  ExperimentConfig c;
  c.name = get<std::string>(tree, "run.name", c.name);

  c.model.family = parse_enum("model family", get<std::string>(tree, "model.family", "unet"),
                              parse_family);
  c.model.backbone = parse_enum("backbone", get<std::string>(tree, "model.backbone", "plain"),
                                parse_backbone);
  c.model.base_channels = get(tree, "model.base_channels", c.model.base_channels);
  c.model.depth = get(tree, "model.depth", c.model.depth);
  c.model.kernel_size = get(tree, "model.kernel_size", c.model.kernel_size);
  c.model_seed = get(tree, "model.seed", c.model_seed);

  c.data_path = get<std::string>(tree, "data.path", "");
  c.dataset.patients = get(tree, "data.patients", c.dataset.patients);
  c.dataset.slices_per_patient = get(tree, "data.slices_per_patient", c.dataset.slices_per_patient);
  c.dataset.height = get(tree, "data.height", c.dataset.height);
  c.dataset.width = get(tree, "data.width", c.dataset.width);
  c.dataset.seed = get(tree, "data.seed", c.dataset.seed);
  c.split_seed = get(tree, "data.split_seed", c.split_seed);

  const std::string mode = get<std::string>(tree, "train.mode", "local");
  if (mode == "local") {
    c.mode = Mode::kLocal;
  } else if (mode == "federated") {
    c.mode = Mode::kFederated;
  } else {
    throw UsageError(fmt::format("unknown train.mode '{}' (local or federated)", mode));
  }
  c.epochs = get(tree, "train.epochs", c.epochs);
  OptimizerConfig& opt = c.train.optimizer;
  opt.kind = parse_enum("optimizer", get<std::string>(tree, "train.optimizer", "sgd"),
                        parse_optimizer);
  opt.lr = get(tree, "train.lr", opt.lr);
  opt.beta1 = get(tree, "train.beta1", opt.beta1);
  opt.beta2 = get(tree, "train.beta2", opt.beta2);
  opt.eps = get(tree, "train.eps", opt.eps);
  c.train.batch_size = get(tree, "train.batch_size", c.train.batch_size);
  c.train.seed = get(tree, "train.seed", c.train.seed);
  c.train.augment = get(tree, "train.augment", c.train.augment);
  AugmentConfig& aug = c.train.augmentation;
  aug.max_translate = get(tree, "train.max_translate", aug.max_translate);
  aug.max_rotate_deg = get(tree, "train.max_rotate_deg", aug.max_rotate_deg);
  aug.scale_lo = get(tree, "train.scale_lo", aug.scale_lo);
  aug.scale_hi = get(tree, "train.scale_hi", aug.scale_hi);

  c.regime = get<std::string>(tree, "privacy.regime", "none");
  if (c.regime == "custom") {
    PrivacyRegime r;
    r.name = "custom";
    r.noise_multiplier = get(tree, "privacy.noise_multiplier", r.noise_multiplier);
    r.clip_norm = get(tree, "privacy.clip_norm", r.clip_norm);
    r.delta = get(tree, "privacy.delta", r.delta);
    const std::string budget = get<std::string>(tree, "privacy.budget", "inf");
    try {
      r.budget_local = r.budget_federated = budget == "inf" ? kInfinity : std::stod(budget);
    } catch (const std::exception&) {
      throw UsageError(fmt::format("privacy.budget '{}' is not a number", budget));
    }
    c.train.regime = r;
  } else if (c.regime != "none") {
    for (const char* key : {"noise_multiplier", "clip_norm", "delta", "budget"}) {
      if (tree.get_child_optional(std::string("privacy.") + key)) {
        throw UsageError(fmt::format("privacy.{} is only allowed with regime = custom", key));
      }
    }
    c.train.regime = parse_enum("privacy regime", c.regime, PrivacyRegime::preset);
  }

  c.n_workers = get(tree, "federation.n_workers", c.n_workers);
  c.sync_every = get(tree, "federation.sync_every", c.sync_every);
  c.rounds = get(tree, "federation.rounds", c.rounds);
  c.weighted = get(tree, "federation.weighted", c.weighted);
  c.partition_seed = get(tree, "federation.partition_seed", c.partition_seed);
  c.round_checkpoints = get(tree, "federation.round_checkpoints", c.round_checkpoints);
  c.capture_round = get(tree, "federation.capture_round", c.capture_round);
  c.capture_worker = get(tree, "federation.capture_worker", c.capture_worker);

  try {
    c.model.validate();
    c.dataset.validate();
    c.train.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (c.epochs < 0 || c.rounds < 0) throw UsageError("epochs and rounds must be >= 0");
  if (c.n_workers < 1 || c.sync_every < 1) {
    throw UsageError("federation needs n_workers >= 1 and sync_every >= 1");
  }
  if (c.capture_round >= 0) {
    if (c.mode != Mode::kFederated) throw UsageError("capture needs train.mode = federated");
    if (c.train.batch_size != 1 || c.sync_every != 1) {
      throw UsageError("capture needs batch_size = 1 and sync_every = 1 (single-image updates)");
    }
    if (c.capture_worker < 0 || c.capture_worker >= c.n_workers) {
      throw UsageError(fmt::format("capture_worker {} out of range", c.capture_worker));
    }
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError(fmt::format("cannot read config file {}", path.string()));
  std::stringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

std::string config_to_ini(const ExperimentConfig& c) {
  std::string s;
  auto add = [&s](std::string_view key, const auto& value) {
    s += fmt::format("{} = {}\n", key, value);
  };
  s += "[run]\n";
  add("name", c.name);
  s += "\n[model]\n";
  add("family", to_string(c.model.family));
  add("backbone", to_string(c.model.backbone));
  add("base_channels", c.model.base_channels);
  add("depth", c.model.depth);
  add("kernel_size", c.model.kernel_size);
  add("seed", c.model_seed);
  s += "\n[data]\n";
  if (!c.data_path.empty()) add("path", c.data_path.string());
  add("patients", c.dataset.patients);
  add("slices_per_patient", c.dataset.slices_per_patient);
  add("height", c.dataset.height);
  add("width", c.dataset.width);
  add("seed", c.dataset.seed);
  add("split_seed", c.split_seed);
  s += "\n[train]\n";
  add("mode", to_string(c.mode));
  add("epochs", c.epochs);
  add("optimizer", to_string(c.train.optimizer.kind));
  add("lr", c.train.optimizer.lr);
  add("beta1", c.train.optimizer.beta1);
  add("beta2", c.train.optimizer.beta2);
  add("eps", c.train.optimizer.eps);
  add("batch_size", c.train.batch_size);
  add("seed", c.train.seed);
  add("augment", c.train.augment ? "true" : "false");
  add("max_translate", c.train.augmentation.max_translate);
  add("max_rotate_deg", c.train.augmentation.max_rotate_deg);
  add("scale_lo", c.train.augmentation.scale_lo);
  add("scale_hi", c.train.augmentation.scale_hi);
  s += "\n[privacy]\n";
  add("regime", c.regime);
  if (c.regime == "custom" && c.train.regime) {
    add("noise_multiplier", c.train.regime->noise_multiplier);
    add("clip_norm", c.train.regime->clip_norm);
    add("delta", c.train.regime->delta);
    const double b = c.train.regime->budget_local;
    add("budget", std::isinf(b) ? std::string("inf") : fmt::format("{}", b));
  }
  s += "\n[federation]\n";
  add("n_workers", c.n_workers);
  add("sync_every", c.sync_every);
  add("rounds", c.rounds);
  add("weighted", c.weighted ? "true" : "false");
  add("partition_seed", c.partition_seed);
  add("round_checkpoints", c.round_checkpoints ? "true" : "false");
  add("capture_round", c.capture_round);
  add("capture_worker", c.capture_worker);
  return s;
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& config) {
  std::ofstream out(path, std::ios::binary);
  out << config_to_ini(config);
  if (!out.flush()) throw std::runtime_error(fmt::format("failed writing {}", path.string()));
}

std::filesystem::path output_root() {
  if (const char* root = std::getenv("PRIVSEG_OUTPUT_ROOT"); root && *root) return root;
  return "runs";
}

}  // namespace privseg::harness
