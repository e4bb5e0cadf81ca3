#pragma once

#include <string>
#include <vector>

#include "ioda/record.hpp"

namespace ioda {

enum class FieldType { String, Int, Float, Bool, Timestamp, List, Map };

FieldType field_type_from_string(const std::string& s);
std::string to_string(FieldType t);

struct SchemaField {
    std::string name;
    FieldType type = FieldType::String;
    bool required = false;

    bool operator==(const SchemaField&) const = default;
};

// Open-world schema: required fields must be present with the declared type,
// extra fields are permitted. Int values satisfy Float fields; Timestamp
// accepts integers >= 0.
struct Schema {
    std::vector<SchemaField> fields;

    bool operator==(const Schema&) const = default;

    // Throws InvalidSpec on duplicate field names.
    void validate() const;

    const SchemaField* find(const std::string& name) const;
};

bool value_has_type(const Value& v, FieldType t);

bool conforms(const DataRecord& record, const Schema& schema);

Value schema_to_json(const Schema& s);
Schema schema_from_json(const Value& j);

}  // namespace ioda
