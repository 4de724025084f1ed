#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cral/data.hpp"
#include "cral/model.hpp"
#include "cral/trainer.hpp"

namespace cral::cli {

enum class Command { Train, Kfold, Msuda, Ablate, Sweep, GenData, GradCheck };

Command parse_command(const std::string& name);
std::string command_name(Command c);

enum class DataSource { Synthetic, Files };

struct RunConfig {
  Command command = Command::Train;
  std::filesystem::path out_dir;

  DataSource source = DataSource::Synthetic;
  SyntheticSpec synthetic;
  std::vector<std::filesystem::path> data_files;
  std::size_t feature_dim = 0;  // required with data_files

  ModelConfig model;  // input_dim and num_domains follow the data
  TrainConfig train;

  std::size_t folds = 5;
  std::size_t target_domain = 0;  // msuda: the held-out domain
  std::string sweep_parameter = "lambda_d";
  std::vector<double> sweep_values{1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1};
};

using KeyValues = std::map<std::string, std::string>;

/// Flat "key = value" lines; "#" starts a comment; blank lines are ignored.
/// Throws ConfigError for malformed lines and repeated keys.
KeyValues parse_key_values(const std::string& text, const std::string& source);
KeyValues read_key_values(const std::filesystem::path& path);

/// Applies `values` over the defaults. Unknown keys and unparsable values
/// throw ConfigError naming the key.
RunConfig resolve(Command command, const KeyValues& values);

/// Every key with its resolved value, one "key = value" line each, in a form
/// that resolve() reads back to the same configuration.
std::string render(const RunConfig& config);

/// All recognised keys, sorted.
std::vector<std::string> known_keys();

}  // namespace cral::cli
