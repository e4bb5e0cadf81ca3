#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>

#include "ioda/resolution.hpp"

using namespace ioda;

namespace {

struct Maker {
    explicit Maker(std::uint64_t seed) : rng(seed) {}
    std::mt19937_64 rng;

    int pick(int lo, int hi) {
        return std::uniform_int_distribution<int>(lo, hi)(rng);
    }

    TagMap tags() {
        static const std::vector<std::pair<std::string, std::vector<std::string>>>
            pool = {{"kind", {"traffic", "energy", "health"}},
                    {"zone", {"north", "south"}},
                    {"grade", {"a", "b"}}};
        TagMap t;
        for (const auto& [k, vals] : pool)
            if (pick(0, 2) > 0) t[k] = vals[pick(0, (int)vals.size() - 1)];
        return t;
    }

    Schema schema() {
        static const std::vector<std::pair<std::string, FieldType>> pool = {
            {"speed", FieldType::Float},
            {"count", FieldType::Int},
            {"label", FieldType::String}};
        Schema s;
        for (const auto& [n, t] : pool)
            if (pick(0, 1)) s.fields.push_back({n, t, true});
        return s;
    }

    GateMetadata gate(const std::string& domain, int idx) {
        GateMetadata m;
        m.address = {domain, "g" + std::to_string(idx), std::nullopt};
        m.description = "gen";
        m.tags = tags();
        int nports = pick(1, 3);
        for (int i = 0; i < nports; ++i) {
            OPortMetadata op;
            op.schema = schema();
            op.exported = pick(0, 1) == 1;
            op.tags = tags();
            m.oports["o" + std::to_string(i)] = op;
        }
        return m;
    }

    Selector selector() {
        Selector s;
        TagMap t = tags();
        if (!t.empty()) {
            auto it = t.begin();
            std::advance(it, pick(0, (int)t.size() - 1));
            s.constraints[it->first] = it->second;
        }
        if (pick(0, 1) || s.constraints.empty())
            s.schema_requires.push_back(
                pick(0, 1) ? std::pair<std::string, FieldType>{"speed", FieldType::Float}
                           : std::pair<std::string, FieldType>{"count", FieldType::Int});
        return s;
    }
};

GateMetadata requester(const std::string& domain) {
    GateMetadata m;
    m.address = {domain, "asker", std::nullopt};
    m.tags = {{"zone", "north"}};
    return m;
}

}  // namespace

TEST_CASE("selector: at least one constraint required") {
    Selector empty;
    CHECK_THROWS_AS(empty.validate(), InvalidSpec);
    Selector ok;
    ok.constraints["kind"] = "traffic";
    CHECK_NOTHROW(ok.validate());
    CHECK(selector_from_json(selector_to_json(ok)).constraints == ok.constraints);
    CHECK_THROWS_AS(selector_from_json(Value::object()), InvalidSpec);
}

TEST_CASE("registry: domain fencing and last-write-wins") {
    DomainRegistry reg("citya");
    Maker mk(1);
    GateMetadata m = mk.gate("citya", 0);
    reg.register_gate(m, "aabb");
    CHECK(reg.lookup("g0"));
    CHECK(reg.lookup_key("g0") == "aabb");
    CHECK(!reg.lookup("ghost"));

    GateMetadata updated = m;
    updated.description = "new";
    reg.register_gate(updated, "ccdd");
    CHECK(reg.lookup("g0")->description == "new");
    CHECK(reg.lookup_key("g0") == "ccdd");

    GateMetadata wrong = mk.gate("cityb", 1);
    CHECK_THROWS_AS(reg.register_gate(wrong), WrongDomain);
}

TEST_CASE("resolve: constraints, tie-breaks, and NotFound") {
    DomainRegistry reg("d");
    auto add = [&](const std::string& name, TagMap gate_tags, TagMap oport_tags,
                   bool exported) {
        GateMetadata m;
        m.address = {"d", name, std::nullopt};
        m.tags = std::move(gate_tags);
        OPortMetadata op;
        op.schema.fields = {{"speed", FieldType::Float, true}};
        op.exported = exported;
        op.tags = std::move(oport_tags);
        m.oports["o"] = op;
        reg.register_gate(m);
    };
    // oport tags shadow gate tags
    add("shadowed", {{"kind", "traffic"}}, {{"kind", "energy"}}, true);
    add("plain", {{"kind", "traffic"}}, {}, true);

    Selector sel;
    sel.constraints["kind"] = "traffic";
    CHECK(format_address(resolve(reg, requester("d"), sel)) == "d/plain/o");

    // tag overlap with the requester wins over address order
    add("zfar", {{"kind", "traffic"}, {"zone", "south"}}, {}, true);
    add("znear", {{"kind", "traffic"}, {"zone", "north"}}, {}, true);
    CHECK(format_address(resolve(reg, requester("d"), sel)) == "d/znear/o");

    // schema requirements are part of matching
    Selector strict = sel;
    strict.schema_requires = {{"label", FieldType::String}};
    CHECK_THROWS_AS(resolve(reg, requester("d"), strict), NotFound);

    Selector nothing;
    nothing.constraints["kind"] = "quantum";
    CHECK_THROWS_AS(resolve(reg, requester("d"), nothing), NotFound);
}

TEST_CASE("property: resolution is deterministic under registration order") {
    for (int round = 0; round < 500; ++round) {
        Maker mk(1000 + round);
        int n = mk.pick(2, 8);
        std::vector<GateMetadata> gates;
        for (int i = 0; i < n; ++i) gates.push_back(mk.gate("d", i));
        Selector sel = mk.selector();

        auto resolve_with_order = [&](std::vector<GateMetadata> order)
            -> std::optional<std::string> {
            DomainRegistry reg("d");
            for (const auto& g : order) reg.register_gate(g);
            try {
                return format_address(resolve(reg, requester("d"), sel));
            } catch (const NotFound&) {
                return std::nullopt;
            }
        };

        auto baseline = resolve_with_order(gates);
        std::vector<GateMetadata> shuffled = gates;
        std::shuffle(shuffled.begin(), shuffled.end(), mk.rng);
        CAPTURE(round);
        CHECK(resolve_with_order(shuffled) == baseline);
        CHECK(resolve_with_order(gates) == baseline);  // and repeatable
    }
}

TEST_CASE("property: cross-domain resolution never leaks unexported oports") {
    for (int round = 0; round < 300; ++round) {
        Maker mk(9000 + round);
        std::vector<std::string> domains = {"da", "db", "dc", "dd"};
        std::map<std::string, std::unique_ptr<DomainRegistry>> regs;
        std::map<std::string, GateMetadata> all;  // formatted oport -> gate meta
        for (const auto& d : domains) {
            regs[d] = std::make_unique<DomainRegistry>(d);
            int n = mk.pick(0, 3);
            for (int i = 0; i < n; ++i) {
                GateMetadata g = mk.gate(d, i);
                regs[d]->register_gate(g);
                for (const auto& [oname, _] : g.oports)
                    all[format_address(g.address.with_oport(oname))] = g;
            }
        }
        PeeringTable peers;
        for (const auto& d : domains)
            if (d != "da") peers.peers[d] = make_local_client(*regs[d]);

        Selector sel = mk.selector();
        if (mk.pick(0, 3) == 0) sel.domain_hint = domains[mk.pick(0, 3)];
        try {
            GateAddress got =
                resolve_cross(*regs["da"], peers, requester("da"), sel);
            const GateMetadata& g = all.at(format_address(got));
            CAPTURE(round);
            CAPTURE(format_address(got));
            if (g.address.domain != "da")
                CHECK(g.oports.at(*got.oport).exported);
        } catch (const NotFound&) {
        } catch (const UnknownPeer&) {
            CHECK(sel.domain_hint);
        }
    }
}

TEST_CASE("cross-domain: domain hints route or fail closed") {
    Maker mk(5);
    DomainRegistry local("home");
    DomainRegistry remote("clinic");
    GateMetadata g;
    g.address = {"clinic", "records", std::nullopt};
    OPortMetadata op;
    op.exported = true;
    op.tags = {{"feed", "health"}};
    g.oports["visits"] = op;
    remote.register_gate(g);
    PeeringTable peers;
    peers.peers["clinic"] = make_local_client(remote);

    Selector sel;
    sel.constraints["feed"] = "health";
    CHECK(format_address(resolve_cross(local, peers, requester("home"), sel)) ==
          "clinic/records/visits");

    sel.domain_hint = "clinic";
    CHECK_NOTHROW(resolve_cross(local, peers, requester("home"), sel));
    sel.domain_hint = "nowhere";
    CHECK_THROWS_AS(resolve_cross(local, peers, requester("home"), sel),
                    UnknownPeer);
}

TEST_CASE("registry entries are data: export and rebuild preserve resolution") {
    Maker mk(77);
    DomainRegistry reg("d");
    for (int i = 0; i < 5; ++i) reg.register_gate(mk.gate("d", i));

    IdGen ids(77);
    std::vector<DataRecord> records = reg.export_records(ids);
    CHECK(records.size() == 5);
    for (const auto& r : records)  // payloads are well-formed records
        CHECK_NOTHROW(from_canonical(to_canonical(r)));

    DomainRegistry rebuilt = DomainRegistry::rebuild("d", records);
    for (int round = 0; round < 50; ++round) {
        Selector sel = mk.selector();
        std::optional<std::string> a, b;
        try {
            a = format_address(resolve(reg, requester("d"), sel));
        } catch (const NotFound&) {}
        try {
            b = format_address(resolve(rebuilt, requester("d"), sel));
        } catch (const NotFound&) {}
        CHECK(a == b);
    }
}
