#include "sdpoint/config.hpp"

#include <yaml-cpp/yaml.h>

#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "sdpoint/error.hpp"

namespace sdpoint {

namespace {

std::string where(const std::string& origin, const YAML::Node& node) {
  return origin + ":" + std::to_string(node.Mark().line + 1);
}

template <typename T>
T scalar(const std::string& origin, const std::string& key, const YAML::Node& node) {
  if (!node.IsScalar()) throw UsageError(where(origin, node) + ": '" + key + "' must be a scalar");
  try {
    return node.as<T>();
  } catch (const YAML::Exception&) {
    throw UsageError(where(origin, node) + ": cannot parse '" + key + "' value '" + node.Scalar() + "'");
  }
}

std::size_t count(const std::string& origin, const std::string& key, const YAML::Node& node) {
  const long long v = scalar<long long>(origin, key, node);
  if (v < 0) throw UsageError(where(origin, node) + ": '" + key + "' must be non-negative");
  return static_cast<std::size_t>(v);
}

template <typename T>
std::vector<T> list(const std::string& origin, const std::string& key, const YAML::Node& node) {
  if (!node.IsSequence()) throw UsageError(where(origin, node) + ": '" + key + "' must be a list");
  std::vector<T> out;
  for (const YAML::Node& item : node) out.push_back(scalar<T>(origin, key, item));
  return out;
}

}  // namespace

NetworkSpec RunConfig::network_spec() const { return wide_resnet_spec(depth, widen, classes); }

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw UsageError(origin + ":" + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
  if (!root.IsMap()) throw UsageError(origin + ": expected a mapping of sections");

  RunConfig cfg;
  std::set<std::string> seen;
  using Handler = void (*)(RunConfig&, const std::string&, const std::string&, const YAML::Node&);
  static const std::map<std::string, std::map<std::string, Handler>> schema = {
      {"model",
       {
           {"depth", [](RunConfig& c, const std::string& o, const std::string& k, const YAML::Node& n) {
              c.depth = count(o, k, n);
            }},
           {"widen", [](RunConfig& c, const std::string& o, const std::string& k, const YAML::Node& n) {
              c.widen = count(o, k, n);
            }},
           {"classes", [](RunConfig& c, const std::string& o, const std::string& k, const YAML::Node& n) {
              c.classes = count(o, k, n);
            }},
       }},
      {"train",
       {
           {"mode", [](RunConfig& c, const std::string& o, const std::string& k, const YAML::Node& n) {
              try {
                c.train.mode = parse_train_mode(scalar<std::string>(o, k, n));
              } catch (const UsageError& e) {
                throw UsageError(where(o, n) + ": " + e.what());
              }
            }},
           {"epochs", [](RunConfig& c, const std::string& o, const std::string& k, const YAML::Node& n) {
              c.train.epochs = count(o, k, n);
            }},
           {"batch_size", [](RunConfig& c, const std::string& o, const std::string& k, const YAML::Node& n) {
              c.train.batch_size = count(o, k, n);
            }},
           {"base_lr", [](RunConfig& c, const std::string& o, const std::string& k, const YAML::Node& n) {
              c.train.base_lr = scalar<double>(o, k, n);
            }},
           {"momentum", [](RunConfig& c, const std::string& o, const std::string& k, const YAML::Node& n) {
              c.train.momentum = scalar<double>(o, k, n);
            }},
           {"weight_decay", [](RunConfig& c, const std::string& o, const std::string& k, const YAML::Node& n) {
              c.train.weight_decay = scalar<double>(o, k, n);
            }},
           {"lr_drops", [](RunConfig& c, const std::string& o, const std::string& k, const YAML::Node& n) {
              c.train.lr_drops = list<double>(o, k, n);
            }},
           {"seed", [](RunConfig& c, const std::string& o, const std::string& k, const YAML::Node& n) {
              c.train.seed = scalar<std::uint64_t>(o, k, n);
            }},
           {"ratios", [](RunConfig& c, const std::string& o, const std::string& k, const YAML::Node& n) {
              c.train.ratios = list<double>(o, k, n);
              for (double r : c.train.ratios)
                if (!(r > 0.0 && r <= 1.0)) throw UsageError(where(o, n) + ": ratios must lie in (0, 1]");
            }},
           {"augment", [](RunConfig& c, const std::string& o, const std::string& k, const YAML::Node& n) {
              c.train.augment.enabled = scalar<bool>(o, k, n);
            }},
           {"subset", [](RunConfig& c, const std::string& o, const std::string& k, const YAML::Node& n) {
              c.train_subset = count(o, k, n);
            }},
           {"ms_min", [](RunConfig& c, const std::string& o, const std::string& k, const YAML::Node& n) {
              c.train.multiscale_min = count(o, k, n);
            }},
           {"ms_max", [](RunConfig& c, const std::string& o, const std::string& k, const YAML::Node& n) {
              c.train.multiscale_max = count(o, k, n);
            }},
       }},
      {"data",
       {
           {"dir", [](RunConfig& c, const std::string& o, const std::string& k, const YAML::Node& n) {
              c.data_dir = scalar<std::string>(o, k, n);
            }},
       }},
      {"output",
       {
           {"dir", [](RunConfig& c, const std::string& o, const std::string& k, const YAML::Node& n) {
              c.output_dir = scalar<std::string>(o, k, n);
            }},
       }},
  };

  for (const auto& section : root) {
    const std::string name = section.first.as<std::string>();
    auto it = schema.find(name);
    if (it == schema.end()) throw UsageError(where(origin, section.first) + ": unknown section '" + name + "'");
    if (!section.second.IsMap())
      throw UsageError(where(origin, section.first) + ": section '" + name + "' must be a mapping");
    for (const auto& entry : section.second) {
      const std::string key = entry.first.as<std::string>();
      auto handler = it->second.find(key);
      if (handler == it->second.end())
        throw UsageError(where(origin, entry.first) + ": unknown key '" + name + "." + key + "'");
      handler->second(cfg, origin, name + "." + key, entry.second);
      seen.insert(name + "." + key);
    }
  }

  for (const char* required : {"model.depth", "model.widen", "train.mode", "train.epochs", "output.dir"})
    if (!seen.count(required)) throw UsageError(origin + ": missing required key '" + std::string(required) + "'");

  try {
    cfg.train.validate();
    (void)cfg.network_spec();
  } catch (const UsageError& e) {
    throw UsageError(origin + ": " + e.what());
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file '" + path + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str(), path);
}

std::string resolve_data_dir(const std::string& explicit_dir) {
  if (!explicit_dir.empty()) return explicit_dir;
  if (const char* env = std::getenv("SDPOINT_DATA_DIR"); env && *env) return env;
  throw UsageError("no data directory given (set data.dir, pass --data or set SDPOINT_DATA_DIR)");
}

}  // namespace sdpoint
