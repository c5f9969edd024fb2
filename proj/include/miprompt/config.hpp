#pragma once

/**
 * File ingestion: template config (JSON) and dataset (JSONL).
 *
 * Template config shape:
 *   {
 *     "labels": ["True", "False"],          // or the string "open"
 *     "templates": [
 *       {"id": 1,
 *        "scaffold": "{question}\nAnswer:",
 *        "collapse": {"True": ["yes"], "False": ["no"]},  // null/absent = open
 *        "few_shot_block": "..."}                          // optional
 *     ]
 *   }
 *
 * Dataset shape, one object per line:
 *   {"id": "q1", "fields": {"question": "..."}, "gold": "True"}
 * "id" defaults to the 1-based line position; "gold" is optional.
 */

#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "core.hpp"

namespace miprompt {

struct TemplateConfig {
  LabelSpacePtr space;
  std::vector<TemplateSpec> templates;
};

namespace detail {

inline nlohmann::json parse_json_file(const std::filesystem::path& path,
                                      const char* what) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError(std::string(what) + ": cannot open " + path.string());
  }
  try {
    nlohmann::json doc;
    in >> doc;
    return doc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string(what) + " " + path.string() + ": " +
                      e.what());
  }
}

}  // namespace detail

inline TemplateConfig parse_template_config(const nlohmann::json& doc,
                                            const std::string& where) {
  try {
    TemplateConfig config;
    const auto& labels = doc.at("labels");
    if (labels.is_string() && labels.get<std::string>() == "open") {
      config.space = make_space(LabelSpace::open());
    } else if (labels.is_array()) {
      config.space = make_space(
          LabelSpace::closed(labels.get<std::vector<std::string>>()));
    } else {
      throw ConfigError(where +
                        ": \"labels\" must be a list or the string \"open\"");
    }

    for (const auto& block : doc.at("templates")) {
      TemplateSpec tpl;
      tpl.id = block.at("id").get<int>();
      tpl.scaffold = block.at("scaffold").get<std::string>();
      if (block.contains("collapse") && !block.at("collapse").is_null()) {
        CollapsingMap map;
        for (const auto& [label, variants] : block.at("collapse").items()) {
          map[label] = variants.get<std::vector<std::string>>();
        }
        tpl.collapsing_map = std::move(map);
      }
      if (block.contains("few_shot_block") &&
          !block.at("few_shot_block").is_null()) {
        tpl.few_shot_block = block.at("few_shot_block").get<std::string>();
      }
      config.templates.push_back(std::move(tpl));
    }

    // Ids must be exactly 1..K so report rows and config blocks line up.
    std::vector<int> ids;
    for (const auto& tpl : config.templates) ids.push_back(tpl.id);
    std::sort(ids.begin(), ids.end());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] != static_cast<int>(i) + 1) {
        throw ConfigError(where + ": template ids must be contiguous from 1");
      }
    }
    return config;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

inline TemplateConfig load_template_config(const std::filesystem::path& path) {
  return parse_template_config(
      detail::parse_json_file(path, "template config"), path.string());
}

inline std::vector<InstanceRecord> parse_dataset(std::istream& in,
                                                 const std::string& where) {
  std::vector<InstanceRecord> instances;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto doc = nlohmann::json::parse(line);
      InstanceRecord instance;
      instance.id = doc.contains("id") && !doc.at("id").is_null()
                        ? doc.at("id").get<std::string>()
                        : std::to_string(lineno);
      for (const auto& [name, value] : doc.at("fields").items()) {
        instance.fields[name] = value.get<std::string>();
      }
      if (doc.contains("gold") && !doc.at("gold").is_null()) {
        instance.gold = doc.at("gold").get<std::string>();
      }
      instances.push_back(std::move(instance));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where + ":" + std::to_string(lineno) + ": " +
                        e.what());
    }
  }
  return instances;
}

inline std::vector<InstanceRecord> load_dataset(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("dataset: cannot open " + path.string());
  }
  return parse_dataset(in, path.string());
}

}  // namespace miprompt
