#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "heavyrush/error.hpp"

namespace heavyrush {

using Json = nlohmann::ordered_json;

/// Appends one reference token to a JSON pointer, escaping '~' and '/'.
inline std::string pointer_append(const std::string& base, std::string_view token) {
  std::string out = base + "/";
  for (char c : token) {
    if (c == '~') {
      out += "~0";
    } else if (c == '/') {
      out += "~1";
    } else {
      out += c;
    }
  }
  return out;
}

inline std::string pointer_append(const std::string& base, std::size_t index) {
  return base + "/" + std::to_string(index);
}

/**
 * @brief Validator for the subset of JSON Schema used by the shipped schemas.
 *
 * Keywords: type, enum, const, minimum, maximum, exclusiveMinimum,
 * minItems, maxItems, items, properties, required, additionalProperties,
 * anyOf and local `$ref` into `#/$defs/`. Anything else is ignored.
 * Each violation is reported as "<pointer>: <message>"; the root pointer
 * is shown as "/".
 */
class SchemaValidator {
 public:
  explicit SchemaValidator(Json schema) : root_(std::move(schema)) {}

  std::vector<std::string> validate(const Json& instance) const {
    std::vector<std::string> errors;
    check(root_, instance, "", errors);
    return errors;
  }

  /// Throws SchemaViolation naming the first offending pointer.
  void require_valid(const Json& instance, std::string_view what) const {
    const auto errors = validate(instance);
    if (!errors.empty()) fail(ErrorCode::SchemaViolation, std::string(what) + ": " + errors.front());
  }

 private:
  static bool has_type(const Json& v, std::string_view t) {
    if (t == "object") return v.is_object();
    if (t == "array") return v.is_array();
    if (t == "string") return v.is_string();
    if (t == "boolean") return v.is_boolean();
    if (t == "null") return v.is_null();
    if (t == "integer") {
      if (v.is_number_integer()) return true;
      return v.is_number_float() && std::isfinite(v.get<double>()) && std::floor(v.get<double>()) == v.get<double>();
    }
    if (t == "number") return v.is_number();
    return false;
  }

  static std::string where(const std::string& ptr) { return ptr.empty() ? "/" : ptr; }

  const Json& resolve(const Json& s) const {
    if (!s.is_object() || !s.contains("$ref")) return s;
    const std::string ref = s["$ref"].get<std::string>();
    require(ref.rfind("#/", 0) == 0, ErrorCode::InvalidArgument, "unsupported schema reference " + ref);
    return root_.at(Json::json_pointer(ref.substr(1)));
  }

  void check(const Json& schema_in, const Json& v, const std::string& ptr, std::vector<std::string>& errors) const {
    const Json& s = resolve(schema_in);
    if (s.is_boolean()) {
      if (!s.get<bool>()) errors.push_back(where(ptr) + ": no value is allowed here");
      return;
    }
    if (s.contains("type")) {
      const Json& t = s["type"];
      bool ok = false;
      if (t.is_string()) {
        ok = has_type(v, t.get<std::string>());
      } else {
        for (const auto& tt : t) ok = ok || has_type(v, tt.get<std::string>());
      }
      if (!ok) {
        errors.push_back(where(ptr) + ": expected type " + t.dump() + ", found " + v.type_name());
        return;
      }
    }
    if (s.contains("const") && v != s["const"]) errors.push_back(where(ptr) + ": must equal " + s["const"].dump());
    if (s.contains("enum")) {
      bool found = false;
      for (const auto& e : s["enum"]) found = found || e == v;
      if (!found) errors.push_back(where(ptr) + ": " + v.dump() + " is not one of " + s["enum"].dump());
    }
    if (v.is_number()) {
      const double x = v.get<double>();
      if (s.contains("minimum") && x < s["minimum"].get<double>())
        errors.push_back(where(ptr) + ": " + v.dump() + " is below the minimum " + s["minimum"].dump());
      if (s.contains("maximum") && x > s["maximum"].get<double>())
        errors.push_back(where(ptr) + ": " + v.dump() + " is above the maximum " + s["maximum"].dump());
      if (s.contains("exclusiveMinimum") && x <= s["exclusiveMinimum"].get<double>())
        errors.push_back(where(ptr) + ": " + v.dump() + " must exceed " + s["exclusiveMinimum"].dump());
    }
    if (v.is_array()) {
      if (s.contains("minItems") && v.size() < s["minItems"].get<std::size_t>())
        errors.push_back(where(ptr) + ": fewer than " + s["minItems"].dump() + " items");
      if (s.contains("maxItems") && v.size() > s["maxItems"].get<std::size_t>())
        errors.push_back(where(ptr) + ": more than " + s["maxItems"].dump() + " items");
      if (s.contains("items"))
        for (std::size_t k = 0; k < v.size(); ++k) check(s["items"], v[k], pointer_append(ptr, k), errors);
    }
    if (v.is_object()) {
      if (s.contains("required")) {
        for (const auto& key : s["required"]) {
          if (!v.contains(key.get<std::string>()))
            errors.push_back(pointer_append(ptr, key.get<std::string>()) + ": required property is missing");
        }
      }
      const Json empty = Json::object();
      const Json& props = s.contains("properties") ? s["properties"] : empty;
      for (auto it = v.begin(); it != v.end(); ++it) {
        const std::string child = pointer_append(ptr, it.key());
        if (props.contains(it.key())) {
          check(props[it.key()], it.value(), child, errors);
        } else if (s.contains("additionalProperties")) {
          const Json& extra = s["additionalProperties"];
          if (extra.is_boolean() && !extra.get<bool>()) {
            errors.push_back(child + ": unknown property");
          } else if (extra.is_object()) {
            check(extra, it.value(), child, errors);
          }
        }
      }
    }
    if (s.contains("anyOf")) {
      bool any = false;
      for (const auto& alt : s["anyOf"]) {
        std::vector<std::string> sub;
        check(alt, v, ptr, sub);
        if (sub.empty()) {
          any = true;
          break;
        }
      }
      if (!any) errors.push_back(where(ptr) + ": does not match any allowed form");
    }
  }

  Json root_;
};

/// Version stamped into every emitted document.
inline constexpr int kSchemaVersion = 1;

namespace schemas {

// Kept identical to the files under schemas/ (a test compares them).

inline constexpr std::string_view kFitReport = R"json({
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "title": "heavyrush fit report",
  "type": "object",
  "required": ["schema_version", "tool", "model", "data", "config", "seed", "status", "chains", "waic", "mse", "summary"],
  "additionalProperties": false,
  "properties": {
    "schema_version": {"const": 1},
    "tool": {"const": "heavyrush"},
    "model": {"$ref": "#/$defs/model"},
    "data": {
      "type": "object",
      "required": ["areas", "times", "edges", "offsets_source", "covariates"],
      "additionalProperties": false,
      "properties": {
        "areas": {"type": "integer", "minimum": 1},
        "times": {"type": "integer", "minimum": 1},
        "edges": {"type": "integer", "minimum": 0},
        "offsets_source": {"enum": ["population", "offset_column", "supplied"]},
        "inputs": {"type": "object", "additionalProperties": {"type": "string"}},
        "covariates": {
          "type": "array",
          "items": {
            "type": "object",
            "required": ["name", "center", "scale"],
            "additionalProperties": false,
            "properties": {
              "name": {"type": "string"},
              "center": {"type": "number"},
              "scale": {"type": "number", "exclusiveMinimum": 0}
            }
          }
        },
        "standardized": {"type": "boolean"}
      }
    },
    "config": {"$ref": "#/$defs/chain_config"},
    "seed": {"type": "integer", "minimum": 0},
    "status": {
      "type": "object",
      "required": ["converged", "max_rhat", "rhat_threshold", "divergences"],
      "additionalProperties": false,
      "properties": {
        "converged": {"type": "boolean"},
        "max_rhat": {"type": "number"},
        "rhat_threshold": {"type": "number"},
        "divergences": {"type": "integer", "minimum": 0}
      }
    },
    "chains": {
      "type": "array",
      "minItems": 1,
      "items": {
        "type": "object",
        "required": ["chain", "step_size", "mean_acceptance", "divergences", "metric_rank", "retained"],
        "additionalProperties": false,
        "properties": {
          "chain": {"type": "integer", "minimum": 0},
          "step_size": {"type": "number", "exclusiveMinimum": 0},
          "mean_acceptance": {"type": "number", "minimum": 0, "maximum": 1},
          "divergences": {"type": "integer", "minimum": 0},
          "metric_rank": {"type": "integer", "minimum": 0},
          "retained": {"type": "integer", "minimum": 1}
        }
      }
    },
    "waic": {
      "type": "object",
      "required": ["waic", "p_w", "lppd"],
      "additionalProperties": false,
      "properties": {
        "waic": {"type": "number"},
        "p_w": {"type": "number"},
        "lppd": {"type": "number"}
      }
    },
    "mse": {"type": "number", "minimum": 0},
    "summary": {
      "type": "array",
      "minItems": 1,
      "items": {
        "type": "object",
        "required": ["parameter", "mean", "sd", "q025", "q975", "rhat", "ess"],
        "additionalProperties": false,
        "properties": {
          "parameter": {"type": "string"},
          "mean": {"type": "number"},
          "sd": {"type": "number", "minimum": 0},
          "q025": {"type": "number"},
          "q975": {"type": "number"},
          "rhat": {"type": ["number", "null"]},
          "ess": {"type": ["number", "null"]}
        }
      }
    },
    "outliers": {
      "type": "object",
      "required": ["rule", "flagged", "areas"],
      "additionalProperties": false,
      "properties": {
        "rule": {"type": "string"},
        "flagged": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "areas": {
          "type": "array",
          "items": {
            "type": "object",
            "required": ["area", "kappa_mean", "kappa_upper", "flag"],
            "additionalProperties": false,
            "properties": {
              "area": {"type": "integer", "minimum": 0},
              "kappa_mean": {"type": "number", "exclusiveMinimum": 0},
              "kappa_upper": {"type": "number", "exclusiveMinimum": 0},
              "flag": {"type": "boolean"}
            }
          }
        }
      }
    }
  },
  "$defs": {
    "model": {
      "type": "object",
      "required": ["tag", "label", "kappa_prior", "alpha", "priors"],
      "additionalProperties": false,
      "properties": {
        "tag": {"enum": ["R1", "Ralpha", "HR1", "HRalpha", "HRLPC1", "HRLPCalpha"]},
        "label": {"type": "string"},
        "kappa_prior": {"enum": ["none", "independent_gamma", "log_pcar"]},
        "alpha": {"enum": ["fixed_one", "estimated"]},
        "priors": {
          "type": "object",
          "additionalProperties": {"type": "number"}
        }
      }
    },
    "chain_config": {
      "type": "object",
      "required": ["iterations", "burn_in", "thin", "chains", "seed", "leapfrog_steps", "path_jitter",
                   "target_acceptance", "metric", "max_metric_rank", "latents"],
      "additionalProperties": false,
      "properties": {
        "iterations": {"type": "integer", "minimum": 1},
        "burn_in": {"type": "integer", "minimum": 0},
        "thin": {"type": "integer", "minimum": 1},
        "chains": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "leapfrog_steps": {"type": "integer", "minimum": 1},
        "path_jitter": {"type": "number", "minimum": 0, "maximum": 1},
        "target_acceptance": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "metric": {"enum": ["unit", "diagonal", "low_rank"]},
        "max_metric_rank": {"type": "integer", "minimum": 0},
        "latents": {"enum": ["centred", "scale_noncentred"]}
      }
    }
  }
}
)json";

inline constexpr std::string_view kScenario = R"json({
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "title": "heavyrush simulation scenario",
  "type": "object",
  "required": ["graph", "T", "replicates", "seed"],
  "additionalProperties": false,
  "properties": {
    "schema_version": {"const": 1},
    "description": {"type": "string"},
    "graph": {
      "anyOf": [
        {
          "type": "object",
          "required": ["adjacency", "areas"],
          "additionalProperties": false,
          "properties": {
            "adjacency": {"type": "string"},
            "areas": {"type": "integer", "minimum": 1},
            "one_based": {"type": "boolean"}
          }
        },
        {
          "type": "object",
          "required": ["ring"],
          "additionalProperties": false,
          "properties": {"ring": {"type": "integer", "minimum": 3}}
        }
      ]
    },
    "T": {"type": "integer", "minimum": 1},
    "replicates": {"type": "integer", "minimum": 1},
    "seed": {"type": "integer", "minimum": 0},
    "beta0": {"type": "number"},
    "beta": {"type": "array", "items": {"type": "number"}},
    "covariates": {"type": "string"},
    "lambda": {"type": "number", "minimum": 0, "maximum": 1},
    "sigma": {"type": "number", "exclusiveMinimum": 0},
    "alpha": {"type": "number", "minimum": -1, "maximum": 1},
    "nu": {"type": "number", "exclusiveMinimum": 0},
    "offsets": {
      "anyOf": [
        {"type": "string"},
        {"type": "array", "minItems": 1, "items": {"type": "number", "exclusiveMinimum": 0}}
      ]
    },
    "offset_mean": {"type": "number", "exclusiveMinimum": 0},
    "contamination": {
      "type": "object",
      "required": ["targets"],
      "additionalProperties": false,
      "properties": {
        "targets": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "q": {"type": "number", "minimum": 0, "maximum": 1},
        "persist": {"type": "number", "minimum": 0, "maximum": 1},
        "multiplier": {"type": "array", "minItems": 2, "maxItems": 2, "items": {"type": "number", "minimum": 0}}
      }
    },
    "latents": {"enum": ["per_replicate", "shared"]},
    "models": {
      "type": "array",
      "minItems": 1,
      "items": {"enum": ["R1", "Ralpha", "HR1", "HRalpha", "HRLPC1", "HRLPCalpha"]}
    },
    "fit": {"$ref": "#/$defs/chain_settings"}
  },
  "$defs": {
    "chain_settings": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "iterations": {"type": "integer", "minimum": 1},
        "burn_in": {"type": "integer", "minimum": 0},
        "thin": {"type": "integer", "minimum": 1},
        "chains": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "leapfrog_steps": {"type": "integer", "minimum": 1},
        "path_jitter": {"type": "number", "minimum": 0, "maximum": 1},
        "target_acceptance": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "metric": {"enum": ["unit", "diagonal", "low_rank"]},
        "max_metric_rank": {"type": "integer", "minimum": 0},
        "latents": {"enum": ["centred", "scale_noncentred"]},
        "threads": {"type": "integer", "minimum": 1}
      }
    }
  }
}
)json";

inline constexpr std::string_view kStudyReport = R"json({
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "title": "heavyrush study report",
  "type": "object",
  "required": ["schema_version", "tool", "scenario", "config", "models", "areas", "runs", "aggregates"],
  "additionalProperties": false,
  "properties": {
    "schema_version": {"const": 1},
    "tool": {"const": "heavyrush"},
    "scenario": {"type": "object"},
    "config": {"type": "object"},
    "models": {"type": "array", "minItems": 1, "items": {"type": "string"}},
    "areas": {
      "type": "array",
      "minItems": 1,
      "items": {
        "type": "object",
        "required": ["area", "offset", "category", "contaminated"],
        "additionalProperties": false,
        "properties": {
          "area": {"type": "integer", "minimum": 0},
          "offset": {"type": "number", "exclusiveMinimum": 0},
          "category": {"enum": ["Small", "Medium low", "Medium", "Medium high", "High"]},
          "contaminated": {"type": "boolean"}
        }
      }
    },
    "runs": {
      "type": "array",
      "items": {
        "type": "object",
        "required": ["replicate", "model", "failed", "max_rhat", "divergences", "waic", "p_w",
                     "mse_contaminated", "mse_clean", "mse_overall"],
        "additionalProperties": false,
        "properties": {
          "replicate": {"type": "integer", "minimum": 0},
          "model": {"type": "string"},
          "failed": {"type": "boolean"},
          "failure": {"type": "string"},
          "max_rhat": {"type": ["number", "null"]},
          "divergences": {"type": "integer", "minimum": 0},
          "waic": {"type": ["number", "null"]},
          "p_w": {"type": ["number", "null"]},
          "mse_contaminated": {"type": ["number", "null"]},
          "mse_clean": {"type": ["number", "null"]},
          "mse_overall": {"type": ["number", "null"]},
          "flagged": {"type": "array", "items": {"type": "integer", "minimum": 0}},
          "detection": {"$ref": "#/$defs/detection"}
        }
      }
    },
    "aggregates": {
      "type": "array",
      "items": {
        "type": "object",
        "required": ["model", "fits", "failed", "waic", "p_w", "mse_contaminated", "mse_clean", "mse_overall"],
        "additionalProperties": false,
        "properties": {
          "model": {"type": "string"},
          "fits": {"type": "integer", "minimum": 0},
          "failed": {"type": "integer", "minimum": 0},
          "waic": {"type": ["number", "null"]},
          "p_w": {"type": ["number", "null"]},
          "mse_contaminated": {"type": ["number", "null"]},
          "mse_clean": {"type": ["number", "null"]},
          "mse_overall": {"type": ["number", "null"]},
          "detection": {"$ref": "#/$defs/detection"},
          "detection_frequency": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 100}}
        }
      }
    }
  },
  "$defs": {
    "counts": {
      "type": "object",
      "required": ["tp", "fn", "tn", "fp", "sensitivity", "specificity"],
      "additionalProperties": false,
      "properties": {
        "tp": {"type": "integer", "minimum": 0},
        "fn": {"type": "integer", "minimum": 0},
        "tn": {"type": "integer", "minimum": 0},
        "fp": {"type": "integer", "minimum": 0},
        "sensitivity": {"type": ["number", "null"], "minimum": 0, "maximum": 100},
        "specificity": {"type": ["number", "null"], "minimum": 0, "maximum": 100}
      }
    },
    "detection": {
      "type": "object",
      "required": ["overall", "by_category"],
      "additionalProperties": false,
      "properties": {
        "overall": {"$ref": "#/$defs/counts"},
        "by_category": {"type": "object", "additionalProperties": {"$ref": "#/$defs/counts"}}
      }
    }
  }
}
)json";

inline constexpr std::string_view kRunConfig = R"json({
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "title": "heavyrush run configuration",
  "type": "object",
  "additionalProperties": false,
  "properties": {
    "schema_version": {"const": 1},
    "counts": {"type": "string"},
    "adjacency": {"type": "string"},
    "covariates": {"type": "string"},
    "population": {"type": "string"},
    "one_based": {"type": "boolean"},
    "standardize": {"type": "boolean"},
    "out": {"type": "string"},
    "model": {"type": "string"},
    "iterations": {"type": "integer", "minimum": 1},
    "burn_in": {"type": "integer", "minimum": 0},
    "thin": {"type": "integer", "minimum": 1},
    "chains": {"type": "integer", "minimum": 1},
    "seed": {"type": "integer", "minimum": 0},
    "leapfrog_steps": {"type": "integer", "minimum": 1},
    "path_jitter": {"type": "number", "minimum": 0, "maximum": 1},
    "target_acceptance": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
    "metric": {"enum": ["unit", "diagonal", "low_rank"]},
    "max_metric_rank": {"type": "integer", "minimum": 0},
    "latents": {"enum": ["centred", "scale_noncentred"]},
    "threads": {"type": "integer", "minimum": 1}
  }
}
)json";

}  // namespace schemas

inline const SchemaValidator& fit_report_validator() {
  static const SchemaValidator v(Json::parse(schemas::kFitReport));
  return v;
}
inline const SchemaValidator& scenario_validator() {
  static const SchemaValidator v(Json::parse(schemas::kScenario));
  return v;
}
inline const SchemaValidator& study_report_validator() {
  static const SchemaValidator v(Json::parse(schemas::kStudyReport));
  return v;
}
inline const SchemaValidator& run_config_validator() {
  static const SchemaValidator v(Json::parse(schemas::kRunConfig));
  return v;
}

}  // namespace heavyrush
