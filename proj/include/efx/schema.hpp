#pragma once

// Structured-output schemas for the parse operation. A SchemaRef names a
// schema, lists its fields, and carries an example instance that must
// itself validate.

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace efx {

using Json = nlohmann::json;

class SchemaValidationError : public std::runtime_error {
 public:
  explicit SchemaValidationError(const std::string& what)
      : std::runtime_error(what) {}
};

enum class FieldType { String, Number, Boolean, StringList };

struct SchemaRef {
  std::string schema_id;
  std::vector<std::pair<std::string, FieldType>> fields;
  Json example;

  SchemaRef() = default;
  SchemaRef(std::string id, std::vector<std::pair<std::string, FieldType>> fs,
            Json ex)
      : schema_id(std::move(id)), fields(std::move(fs)), example(std::move(ex)) {
    validate(example);
  }

  void validate(const Json& obj) const {
    if (!obj.is_object())
      throw SchemaValidationError("schema '" + schema_id +
                                  "': expected an object, got " + obj.dump());
    for (const auto& [name, type] : fields) {
      if (!obj.contains(name))
        throw SchemaValidationError("schema '" + schema_id +
                                    "': missing field '" + name + "' in " +
                                    obj.dump());
      const Json& v = obj.at(name);
      bool ok = false;
      switch (type) {
        case FieldType::String:
          ok = v.is_string();
          break;
        case FieldType::Number:
          ok = v.is_number();
          break;
        case FieldType::Boolean:
          ok = v.is_boolean();
          break;
        case FieldType::StringList:
          ok = v.is_array();
          if (ok)
            for (const auto& e : v) ok = ok && e.is_string();
          break;
      }
      if (!ok)
        throw SchemaValidationError("schema '" + schema_id + "': field '" +
                                    name + "' has wrong type in " + obj.dump());
    }
  }

  /// OpenAI-style response_format block for schema-constrained requests.
  Json response_format() const {
    Json props = Json::object();
    for (const auto& [name, type] : fields) {
      switch (type) {
        case FieldType::String:
          props[name] = {{"type", "string"}};
          break;
        case FieldType::Number:
          props[name] = {{"type", "number"}};
          break;
        case FieldType::Boolean:
          props[name] = {{"type", "boolean"}};
          break;
        case FieldType::StringList:
          props[name] = {{"type", "array"}, {"items", {{"type", "string"}}}};
          break;
      }
    }
    return Json{{"type", "json_schema"},
                {"json_schema",
                 {{"name", schema_id},
                  {"schema",
                   {{"type", "object"}, {"properties", props}}}}}};
  }
};

}  // namespace efx
