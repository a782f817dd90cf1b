#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ipreid/common.hpp"
#include "ipreid/models.hpp"
#include "ipreid/training.hpp"

namespace ipreid {

// Layered key=value configuration with a fixed schema: bundled defaults,
// then a config file, then command-line overrides. Unknown keys are errors.
class Config {
 public:
  Config();  // bundled defaults

  void load_file(const std::filesystem::path& path);
  // "key=value"
  void apply_override(const std::string& assignment);

  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;

  // resolved key=value lines, sorted by key
  void save(const std::filesystem::path& path) const;
  std::map<std::string, std::string> values() const { return values_; }

  // assembled module configs
  SyntheticSpec synthetic_spec() const;
  GeneratorConfig generator_config(int num_domains) const;
  DomainDiscriminatorConfig discriminator_config(int num_domains) const;
  ReIDConfig reid_config() const;
  TrainConfig gan_train_config(long seed) const;
  TrainConfig reid_train_config(long seed) const;
  TrainConfig dsem_train_config(long seed) const;

 private:
  void set_checked(const std::string& key, const std::string& value,
                   const std::string& origin);
  std::map<std::string, std::string> values_;
};

}  // namespace ipreid
