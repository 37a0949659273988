#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <string>
#include <utility>
#include <vector>

#include "hyperbert/training.hpp"

namespace hyperbert {

// Ordered key/value text form of each config section. apply_key_value throws
// ConfigError on an unknown key or a malformed value.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

KeyValues to_key_values(const HyperBertConfig& c);
KeyValues to_key_values(const PretrainConfig& c);
KeyValues to_key_values(const FinetuneConfig& c);
KeyValues to_key_values(const DataConfig& c);

void apply_key_value(HyperBertConfig& c, const std::string& key, const std::string& value);
void apply_key_value(PretrainConfig& c, const std::string& key, const std::string& value);
void apply_key_value(FinetuneConfig& c, const std::string& key, const std::string& value);
void apply_key_value(DataConfig& c, const std::string& key, const std::string& value);

// Whole experiment with section-qualified keys ("model.layers", ...) plus the
// unqualified "seed" and "runs".
KeyValues to_key_values(const ExperimentConfig& c);
void apply_key_value(ExperimentConfig& c, const std::string& qualified_key, const std::string& value);

struct ConfigEntry {
  std::string section;  // empty before the first header
  std::string key;
  std::string value;
  std::size_t line = 0;
};

// Flat key = value lines under [section] headers; '#' and ';' start comments.
std::vector<ConfigEntry> parse_config(std::istream& in, const std::string& source = "config");
std::vector<ConfigEntry> read_config_file(const std::filesystem::path& path);
// Known sections: model, pretrain, finetune, data and the top level.
void apply_config(ExperimentConfig& c, const std::vector<ConfigEntry>& entries);
std::string to_config_text(const ExperimentConfig& c);

std::uint64_t config_hash(const ExperimentConfig& c);
std::string hash_string(std::uint64_t hash);

std::string to_string(NormStyle v);
std::string to_string(StructuralKind v);
std::string to_string(Activation v);
std::string to_string(StructuralInput v);
std::string to_string(HeadKind v);

}  // namespace hyperbert
