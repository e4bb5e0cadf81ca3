#include "ioda/schema.hpp"

#include <unordered_set>

namespace ioda {

FieldType field_type_from_string(const std::string& s) {
    if (s == "string") return FieldType::String;
    if (s == "int") return FieldType::Int;
    if (s == "float") return FieldType::Float;
    if (s == "bool") return FieldType::Bool;
    if (s == "timestamp") return FieldType::Timestamp;
    if (s == "list") return FieldType::List;
    if (s == "map") return FieldType::Map;
    throw ParseError("unknown field type '" + s + "'");
}

std::string to_string(FieldType t) {
    switch (t) {
        case FieldType::String: return "string";
        case FieldType::Int: return "int";
        case FieldType::Float: return "float";
        case FieldType::Bool: return "bool";
        case FieldType::Timestamp: return "timestamp";
        case FieldType::List: return "list";
        case FieldType::Map: return "map";
    }
    return "?";
}

void Schema::validate() const {
    std::unordered_set<std::string> seen;
    for (const auto& f : fields) {
        if (f.name.empty()) throw InvalidSpec("empty schema field name");
        if (!seen.insert(f.name).second)
            throw InvalidSpec("duplicate schema field '" + f.name + "'");
    }
}

const SchemaField* Schema::find(const std::string& name) const {
    for (const auto& f : fields)
        if (f.name == name) return &f;
    return nullptr;
}

bool value_has_type(const Value& v, FieldType t) {
    switch (t) {
        case FieldType::String: return v.is_string();
        case FieldType::Int: return v.is_number_integer();
        case FieldType::Float: return v.is_number();  // ints promote
        case FieldType::Bool: return v.is_boolean();
        case FieldType::Timestamp:
            return v.is_number_integer() && v.get<std::int64_t>() >= 0;
        case FieldType::List: return v.is_array();
        case FieldType::Map: return v.is_object();
    }
    return false;
}

bool conforms(const DataRecord& record, const Schema& schema) {
    // conforms iff every required field is present with its declared type;
    // optional fields and extra fields are unconstrained
    for (const auto& f : schema.fields) {
        if (!f.required) continue;
        if (!record.payload.is_object()) return false;
        auto it = record.payload.find(f.name);
        if (it == record.payload.end()) return false;
        if (!value_has_type(*it, f.type)) return false;
    }
    return true;
}

Value schema_to_json(const Schema& s) {
    Value arr = Value::array();
    for (const auto& f : s.fields) {
        arr.push_back({{"name", f.name},
                       {"type", to_string(f.type)},
                       {"required", f.required}});
    }
    return arr;
}

Schema schema_from_json(const Value& j) {
    if (!j.is_array()) throw ParseError("schema must be a JSON array");
    Schema s;
    for (const auto& e : j) {
        SchemaField f;
        f.name = e.at("name").get<std::string>();
        f.type = field_type_from_string(e.at("type").get<std::string>());
        f.required = e.value("required", false);
        s.fields.push_back(std::move(f));
    }
    s.validate();
    return s;
}

}  // namespace ioda
