#pragma once

#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "ioda/record.hpp"

namespace ioda {

using Batch = std::vector<DataRecord>;

// Path of keys addressing a nested payload field, e.g. {"env","temp"}.
using FieldPath = std::vector<std::string>;

std::string format_path(const FieldPath& p);

// Returns nullptr when the path is absent or walks through a non-object.
const Value* get_path(const Value& payload, const FieldPath& p);

enum class Comparator { Eq, Ne, Lt, Le, Gt, Ge };
enum class SortOrder { Asc, Desc };
enum class WindowFn { Sum, Avg, Min, Max, Count };

Comparator comparator_from_string(const std::string& s);
std::string to_string(Comparator c);
WindowFn window_fn_from_string(const std::string& s);
std::string to_string(WindowFn f);

// Three-way scalar comparison with numeric int/float promotion. Throws
// TypeMismatch across classes, on composites, and on ordered comparison of
// bool or null.
bool compare_values(const Value& a, Comparator cmp, const Value& b);

struct FilterOp {
    FieldPath path;
    Comparator cmp = Comparator::Eq;
    Value literal;
};

struct ProjectOp {
    std::vector<FieldPath> paths;
};

struct SortOp {
    FieldPath path;
    SortOrder order = SortOrder::Asc;
};

struct JoinOp {
    std::string source;  // right-side batch reference, resolved by the caller
    FieldPath left_path;
    FieldPath right_path;
};

struct WindowOp {
    std::size_t count = 1;  // tumbling window size, >= 1
    WindowFn fn = WindowFn::Count;
    FieldPath path;
    std::string output_field;
};

using Operator = std::variant<FilterOp, ProjectOp, SortOp, JoinOp, WindowOp>;

// Ordered pipeline evaluated strictly stage by stage, left to right.
struct Dataflow {
    std::vector<Operator> stages;

    bool has_join() const;
    void validate() const;
};

// Receives every freshly derived record (Project/Join/Window outputs);
// pass-through operators (Filter, Sort) keep record identity and are not
// reported. Used to feed provenance ledgers.
using DeriveSink = std::function<void(const DataRecord&)>;

// Maps a JoinOp source reference to its right-side batch; throws
// UnresolvedJoinSource for unknown references.
using AuxResolver = std::function<Batch(const std::string&)>;

Batch apply_operator(const Operator& op, const Batch& input, const Batch* aux,
                     const DeriveSink& sink = nullptr);

Batch apply_dataflow(const Dataflow& df, const Batch& input,
                     const AuxResolver& aux_resolver = nullptr,
                     const DeriveSink& sink = nullptr);

Value dataflow_to_json(const Dataflow& df);
Dataflow dataflow_from_json(const Value& j);

}  // namespace ioda
