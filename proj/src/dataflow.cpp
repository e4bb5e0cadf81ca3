#include "ioda/dataflow.hpp"

#include <algorithm>
#include <cmath>

#include "ioda/errors.hpp"

namespace ioda {

std::string format_path(const FieldPath& p) {
    std::string out;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (i) out += ".";
        out += p[i];
    }
    return out;
}

const Value* get_path(const Value& payload, const FieldPath& p) {
    const Value* cur = &payload;
    for (const auto& seg : p) {
        if (!cur->is_object()) return nullptr;
        auto it = cur->find(seg);
        if (it == cur->end()) return nullptr;
        cur = &*it;
    }
    return cur;
}

Comparator comparator_from_string(const std::string& s) {
    if (s == "==") return Comparator::Eq;
    if (s == "!=") return Comparator::Ne;
    if (s == "<") return Comparator::Lt;
    if (s == "<=") return Comparator::Le;
    if (s == ">") return Comparator::Gt;
    if (s == ">=") return Comparator::Ge;
    throw ParseError("unknown comparator '" + s + "'");
}

std::string to_string(Comparator c) {
    switch (c) {
        case Comparator::Eq: return "==";
        case Comparator::Ne: return "!=";
        case Comparator::Lt: return "<";
        case Comparator::Le: return "<=";
        case Comparator::Gt: return ">";
        case Comparator::Ge: return ">=";
    }
    return "?";
}

WindowFn window_fn_from_string(const std::string& s) {
    if (s == "sum") return WindowFn::Sum;
    if (s == "avg") return WindowFn::Avg;
    if (s == "min") return WindowFn::Min;
    if (s == "max") return WindowFn::Max;
    if (s == "count") return WindowFn::Count;
    throw ParseError("unknown window function '" + s + "'");
}

std::string to_string(WindowFn f) {
    switch (f) {
        case WindowFn::Sum: return "sum";
        case WindowFn::Avg: return "avg";
        case WindowFn::Min: return "min";
        case WindowFn::Max: return "max";
        case WindowFn::Count: return "count";
    }
    return "?";
}

namespace {

enum class ValueClass { Null, Bool, Number, String, Composite };

ValueClass value_class(const Value& v) {
    if (v.is_null()) return ValueClass::Null;
    if (v.is_boolean()) return ValueClass::Bool;
    if (v.is_number()) return ValueClass::Number;
    if (v.is_string()) return ValueClass::String;
    return ValueClass::Composite;
}

// -1 / 0 / +1; only called for matching non-composite classes
int compare3(const Value& a, const Value& b, ValueClass cls) {
    switch (cls) {
        case ValueClass::Null:
            return 0;
        case ValueClass::Bool: {
            bool x = a.get<bool>(), y = b.get<bool>();
            return x == y ? 0 : (x < y ? -1 : 1);
        }
        case ValueClass::Number: {
            if (a.is_number_integer() && b.is_number_integer()) {
                auto x = a.get<std::int64_t>(), y = b.get<std::int64_t>();
                return x == y ? 0 : (x < y ? -1 : 1);
            }
            double x = a.get<double>(), y = b.get<double>();
            return x == y ? 0 : (x < y ? -1 : 1);
        }
        case ValueClass::String: {
            const auto& x = a.get_ref<const std::string&>();
            const auto& y = b.get_ref<const std::string&>();
            int c = x.compare(y);
            return c == 0 ? 0 : (c < 0 ? -1 : 1);
        }
        default:
            break;
    }
    throw TypeMismatch("composite values are not comparable");
}

}  // namespace

bool compare_values(const Value& a, Comparator cmp, const Value& b) {
    ValueClass ca = value_class(a), cb = value_class(b);
    if (ca == ValueClass::Composite || cb == ValueClass::Composite)
        throw TypeMismatch("comparator applied to a non-scalar value");
    if (ca != cb)
        throw TypeMismatch("comparator across incompatible scalar types");
    bool ordered = cmp != Comparator::Eq && cmp != Comparator::Ne;
    if (ordered && (ca == ValueClass::Bool || ca == ValueClass::Null))
        throw TypeMismatch("ordering not defined for bool/null");
    int c = compare3(a, b, ca);
    switch (cmp) {
        case Comparator::Eq: return c == 0;
        case Comparator::Ne: return c != 0;
        case Comparator::Lt: return c < 0;
        case Comparator::Le: return c <= 0;
        case Comparator::Gt: return c > 0;
        case Comparator::Ge: return c >= 0;
    }
    return false;
}

bool Dataflow::has_join() const {
    for (const auto& op : stages)
        if (std::holds_alternative<JoinOp>(op)) return true;
    return false;
}

void Dataflow::validate() const {
    for (const auto& op : stages) {
        if (const auto* w = std::get_if<WindowOp>(&op)) {
            if (w->count < 1) throw InvalidSpec("window count must be >= 1");
            if (w->path.empty()) throw InvalidSpec("empty window path");
            if (w->output_field.empty()) throw InvalidSpec("empty window output field");
        } else if (const auto* f = std::get_if<FilterOp>(&op)) {
            if (f->path.empty()) throw InvalidSpec("empty filter path");
        } else if (const auto* s = std::get_if<SortOp>(&op)) {
            if (s->path.empty()) throw InvalidSpec("empty sort path");
        } else if (const auto* j = std::get_if<JoinOp>(&op)) {
            if (j->left_path.empty() || j->right_path.empty())
                throw InvalidSpec("empty join path");
            if (j->source.empty()) throw InvalidSpec("empty join source reference");
        } else if (const auto* p = std::get_if<ProjectOp>(&op)) {
            for (const auto& path : p->paths) {
                if (path.empty()) throw InvalidSpec("empty project path");
                for (const auto& seg : path)
                    if (seg.empty()) throw InvalidSpec("empty project path segment");
            }
        }
    }
}

namespace {

DataRecord derived(const Value& payload,
                   const std::vector<const DataRecord*>& contributors,
                   const DeriveSink& sink) {
    DataRecord r = derive_record(payload, contributors);
    if (sink) sink(r);
    return r;
}

Batch apply_filter(const FilterOp& op, const Batch& input) {
    Batch out;
    for (const auto& r : input) {
        const Value* v = get_path(r.payload, op.path);
        if (!v) continue;  // missing field drops the record
        if (compare_values(*v, op.cmp, op.literal)) out.push_back(r);
    }
    return out;
}

void insert_path(Value& root, const FieldPath& path, const Value& v) {
    Value* cur = &root;
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
        Value& next = (*cur)[path[i]];
        if (!next.is_object()) next = Value::object();
        cur = &next;
    }
    (*cur)[path.back()] = v;
}

Batch apply_project(const ProjectOp& op, const Batch& input,
                    const DeriveSink& sink) {
    Batch out;
    out.reserve(input.size());
    for (const auto& r : input) {
        Value payload = Value::object();
        for (const auto& path : op.paths) {
            if (const Value* v = get_path(r.payload, path))
                insert_path(payload, path, *v);
        }
        out.push_back(derived(payload, {&r}, sink));
    }
    return out;
}

Batch apply_sort(const SortOp& op, const Batch& input) {
    // pre-check comparability so stable_sort never throws mid-shuffle
    const Value* probe = nullptr;
    for (const auto& r : input) {
        const Value* v = get_path(r.payload, op.path);
        if (!v) continue;
        if (value_class(*v) == ValueClass::Composite)
            throw TypeMismatch("sort key is not a scalar");
        if (probe && value_class(*probe) != value_class(*v))
            throw TypeMismatch("sort keys of mixed types");
        probe = v;
    }
    Batch out = input;
    std::stable_sort(out.begin(), out.end(),
                     [&](const DataRecord& a, const DataRecord& b) {
                         const Value* va = get_path(a.payload, op.path);
                         const Value* vb = get_path(b.payload, op.path);
                         if (!va || !vb) return !vb && va;  // missing sorts last
                         int c = compare3(*va, *vb, value_class(*va));
                         return op.order == SortOrder::Asc ? c < 0 : c > 0;
                     });
    return out;
}

Batch apply_join(const JoinOp& op, const Batch& left, const Batch& right,
                 const DeriveSink& sink) {
    Batch out;
    for (const auto& l : left) {
        const Value* lk = get_path(l.payload, op.left_path);
        if (!lk) continue;
        if (value_class(*lk) == ValueClass::Composite)
            throw TypeMismatch("join key is not a scalar");
        for (const auto& r : right) {
            const Value* rk = get_path(r.payload, op.right_path);
            if (!rk) continue;
            if (!compare_values(*lk, Comparator::Eq, *rk)) continue;
            Value payload = l.payload.is_object() ? l.payload : Value::object();
            if (r.payload.is_object()) {
                for (const auto& [k, v] : r.payload.items())
                    payload["right." + k] = v;
            }
            out.push_back(derived(payload, {&l, &r}, sink));
        }
    }
    return out;
}

Batch apply_window(const WindowOp& op, const Batch& input,
                   const DeriveSink& sink) {
    Batch out;
    for (std::size_t start = 0; start < input.size(); start += op.count) {
        std::size_t end = std::min(start + op.count, input.size());
        std::vector<const DataRecord*> window;
        std::vector<const Value*> values;
        for (std::size_t i = start; i < end; ++i) {
            window.push_back(&input[i]);
            const Value* v = get_path(input[i].payload, op.path);
            if (v) values.push_back(v);  // records missing the field still count
        }
        Value result;
        if (op.fn == WindowFn::Count) {
            result = static_cast<std::int64_t>(window.size());
        } else {
            if (values.empty()) continue;  // nothing to aggregate in this window
            bool all_int = true;
            for (const Value* v : values) {
                if (!v->is_number())
                    throw TypeMismatch("window aggregate over non-numeric field");
                if (!v->is_number_integer()) all_int = false;
            }
            switch (op.fn) {
                case WindowFn::Sum: {
                    if (all_int) {
                        std::int64_t s = 0;
                        for (const Value* v : values) s += v->get<std::int64_t>();
                        result = s;
                    } else {
                        double s = 0;
                        for (const Value* v : values) s += v->get<double>();
                        result = s;
                    }
                    break;
                }
                case WindowFn::Avg: {
                    double s = 0;
                    for (const Value* v : values) s += v->get<double>();
                    result = s / static_cast<double>(values.size());
                    break;
                }
                case WindowFn::Min:
                case WindowFn::Max: {
                    const Value* best = values[0];
                    for (const Value* v : values) {
                        int c = compare3(*v, *best, ValueClass::Number);
                        if (op.fn == WindowFn::Min ? c < 0 : c > 0) best = v;
                    }
                    result = *best;
                    break;
                }
                default:
                    break;
            }
        }
        Value payload = Value::object();
        payload[op.output_field] = result;
        out.push_back(derived(payload, window, sink));
    }
    return out;
}

}  // namespace

Batch apply_operator(const Operator& op, const Batch& input, const Batch* aux,
                     const DeriveSink& sink) {
    if (const auto* f = std::get_if<FilterOp>(&op)) return apply_filter(*f, input);
    if (const auto* p = std::get_if<ProjectOp>(&op))
        return apply_project(*p, input, sink);
    if (const auto* s = std::get_if<SortOp>(&op)) return apply_sort(*s, input);
    if (const auto* j = std::get_if<JoinOp>(&op)) {
        if (!aux) throw UnresolvedJoinSource("join requires a right-side batch");
        return apply_join(*j, input, *aux, sink);
    }
    return apply_window(std::get<WindowOp>(op), input, sink);
}

Batch apply_dataflow(const Dataflow& df, const Batch& input,
                     const AuxResolver& aux_resolver, const DeriveSink& sink) {
    Batch cur = input;
    for (const auto& op : df.stages) {
        if (const auto* j = std::get_if<JoinOp>(&op)) {
            if (!aux_resolver)
                throw UnresolvedJoinSource("no resolver for join source '" +
                                           j->source + "'");
            Batch aux = aux_resolver(j->source);
            cur = apply_operator(op, cur, &aux, sink);
        } else {
            cur = apply_operator(op, cur, nullptr, sink);
        }
    }
    return cur;
}

static Value path_to_json(const FieldPath& p) {
    Value arr = Value::array();
    for (const auto& s : p) arr.push_back(s);
    return arr;
}

static FieldPath path_from_json(const Value& j) {
    if (!j.is_array() || j.empty()) throw ParseError("field path must be a non-empty array");
    FieldPath p;
    for (const auto& s : j) {
        p.push_back(s.get<std::string>());
        if (p.back().empty()) throw ParseError("empty field path segment");
    }
    return p;
}

Value dataflow_to_json(const Dataflow& df) {
    Value arr = Value::array();
    for (const auto& op : df.stages) {
        Value s;
        if (const auto* f = std::get_if<FilterOp>(&op)) {
            s = {{"op", "filter"},
                 {"path", path_to_json(f->path)},
                 {"cmp", to_string(f->cmp)},
                 {"value", f->literal}};
        } else if (const auto* p = std::get_if<ProjectOp>(&op)) {
            Value paths = Value::array();
            for (const auto& path : p->paths) paths.push_back(path_to_json(path));
            s = {{"op", "project"}, {"paths", paths}};
        } else if (const auto* so = std::get_if<SortOp>(&op)) {
            s = {{"op", "sort"},
                 {"path", path_to_json(so->path)},
                 {"order", so->order == SortOrder::Asc ? "asc" : "desc"}};
        } else if (const auto* j = std::get_if<JoinOp>(&op)) {
            s = {{"op", "join"},
                 {"source", j->source},
                 {"left_path", path_to_json(j->left_path)},
                 {"right_path", path_to_json(j->right_path)}};
        } else {
            const auto& w = std::get<WindowOp>(op);
            s = {{"op", "window"},
                 {"count", w.count},
                 {"fn", to_string(w.fn)},
                 {"path", path_to_json(w.path)},
                 {"as", w.output_field}};
        }
        arr.push_back(std::move(s));
    }
    return arr;
}

Dataflow dataflow_from_json(const Value& j) {
    if (!j.is_array()) throw ParseError("dataflow must be a JSON array");
    Dataflow df;
    for (const auto& s : j) {
        std::string op = s.at("op").get<std::string>();
        if (op == "filter") {
            FilterOp f;
            f.path = path_from_json(s.at("path"));
            f.cmp = comparator_from_string(s.at("cmp").get<std::string>());
            f.literal = s.at("value");
            df.stages.emplace_back(std::move(f));
        } else if (op == "project") {
            ProjectOp p;
            for (const auto& path : s.at("paths"))
                p.paths.push_back(path_from_json(path));
            df.stages.emplace_back(std::move(p));
        } else if (op == "sort") {
            SortOp so;
            so.path = path_from_json(s.at("path"));
            std::string order = s.at("order").get<std::string>();
            if (order != "asc" && order != "desc")
                throw ParseError("sort order must be asc or desc");
            so.order = order == "asc" ? SortOrder::Asc : SortOrder::Desc;
            df.stages.emplace_back(std::move(so));
        } else if (op == "join") {
            JoinOp jo;
            jo.source = s.at("source").get<std::string>();
            jo.left_path = path_from_json(s.at("left_path"));
            jo.right_path = path_from_json(s.at("right_path"));
            df.stages.emplace_back(std::move(jo));
        } else if (op == "window") {
            WindowOp w;
            w.count = s.at("count").get<std::size_t>();
            w.fn = window_fn_from_string(s.at("fn").get<std::string>());
            w.path = path_from_json(s.at("path"));
            w.output_field = s.at("as").get<std::string>();
            df.stages.emplace_back(std::move(w));
        } else {
            throw ParseError("unknown dataflow op '" + op + "'");
        }
    }
    df.validate();
    return df;
}

}  // namespace ioda
