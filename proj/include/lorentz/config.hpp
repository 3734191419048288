#pragma once

// Run configuration: a JSON tree with a default for every field. User files
// and --override key=value pairs are merged onto the defaults; unknown keys
// and type mismatches are validation errors.

#include <string>
#include <vector>

#include "json.hpp"
#include "lorentz/force.hpp"
#include "lorentz/geometry.hpp"
#include "lorentz/measure.hpp"
#include "lorentz/response.hpp"

namespace lorentz {

using json = nlohmann::ordered_json;

json default_config();
/// Defaults annotated with a description per leaf, for `config-schema`.
json config_schema();

/// Deep merge of `user` onto `base`; throws InputError on unknown keys or
/// type mismatches (integers are accepted where numbers are expected).
json merge_config(const json &base, const json &user, const std::string &path = "");
/// Applies "a.b.c=value"; value is parsed as JSON when possible, otherwise taken as a string.
void apply_override(json &config, const std::string &assignment);
json load_config_file(const std::string &path);
/// Range and consistency checks beyond types.
void validate_config(const json &config);

Table table_from_config(const json &config);
ForceModel force_from_config(const json &config);
RunSpec run_from_config(const json &config);
SeriesSpec series_from_config(const json &config);
std::vector<double> eps_grid_from_config(const json &config, const char *section = "response");

}  // namespace lorentz
