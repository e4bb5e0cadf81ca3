#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <thread>

#include "circuit_gen.hpp"
#include "ioda/harness.hpp"

using namespace ioda;

namespace {

const Principal kTester{"tester", {"gate"}};

// a linear chain d0/g0 -> d0/g1 -> d1/g2 with a filter and a project stage
ScenarioConfig chain_config() {
    ScenarioConfig cfg;
    cfg.name = "chain";
    cfg.domains = {{"d0", {"d1"}}, {"d1", {"d0"}}};

    auto gate = [&](const std::string& addr) {
        GateSpec s;
        s.address = parse_address(addr);
        s.principal = {addr, {"gate"}};
        OPortSpec out;
        out.name = "out";
        out.schema.fields = {{"n", FieldType::Int, true},
                             {"room", FieldType::String, true}};
        out.exported = true;
        out.policy.entries = {{"gate", "out", {Permission::Query, Permission::Watch}}};
        s.oports.push_back(out);
        return s;
    };

    GateSpec head = gate("d0/g0");
    IPortSpec in;
    in.name = "in";
    in.source_selector = Selector{{{"kind", "seed"}}, {}, std::nullopt};
    head.iports.push_back(in);
    head.metadata = make_metadata(head);

    GateSpec mid = gate("d0/g1");
    IPortSpec min;
    min.name = "feed";
    min.source_address = parse_address("d0/g0/out");
    min.dataflow.stages = {FilterOp{{"n"}, Comparator::Ge, std::int64_t{10}}};
    mid.iports.push_back(min);
    mid.metadata = make_metadata(mid);

    GateSpec tail = gate("d1/g2");
    IPortSpec tin;
    tin.name = "feed";
    tin.source_address = parse_address("d0/g1/out");
    tin.dataflow.stages = {ProjectOp{{{"n"}, {"room"}}}};
    tail.iports.push_back(tin);
    tail.metadata = make_metadata(tail);

    cfg.gates = {head, mid, tail};
    CircuitSpec c;
    c.name = "chain";
    c.edges = {{parse_address("d0/g0/out"), parse_address("d0/g1"), "feed"},
               {parse_address("d0/g1/out"), parse_address("d1/g2"), "feed"}};
    cfg.circuits.push_back(c);
    return cfg;
}

Batch rooms(IdGen& ids, std::vector<std::pair<int, std::string>> rows) {
    Batch b;
    std::int64_t ts = 1;
    for (auto& [n, room] : rows)
        b.push_back(make_source_record(ids, ts++,
                                       Value{{"n", n}, {"room", room}}));
    return b;
}

// retry until the view converges; circuit delivery is asynchronous
bool eventually(const std::function<bool()>& done, int timeout_ms = 5000) {
    auto deadline = std::chrono::steady_clock::now() +
                    std::chrono::milliseconds(timeout_ms);
    while (std::chrono::steady_clock::now() < deadline) {
        if (done()) return true;
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    return done();
}

std::vector<std::string> view_multiset(Deployment& dep, const std::string& gate) {
    return cgen::payload_multiset(
        dep.local_gate(parse_address(gate))->query("out", kTester));
}

}  // namespace

TEST_CASE("circuit spec: validation and json round-trip") {
    CircuitSpec c;
    c.name = "c";
    c.edges = {{parse_address("a/b/o"), parse_address("a/c"), "in"},
               {parse_address("d/e/o"), parse_address("a/b"), "in"}};
    CHECK_NOTHROW(c.validate());
    CHECK(c.domains() == std::set<std::string>{"a", "d"});
    CHECK(circuit_spec_from_json(circuit_spec_to_json(c)).edges == c.edges);

    CircuitSpec unnamed = c;
    unnamed.name.clear();
    CHECK_THROWS_AS(unnamed.validate(), InvalidSpec);
    CircuitSpec no_oport = c;
    no_oport.edges[0].from = parse_address("a/b");
    CHECK_THROWS_AS(no_oport.validate(), InvalidSpec);
    CircuitSpec oport_dst = c;
    oport_dst.edges[0].to_gate = parse_address("a/c/o");
    CHECK_THROWS_AS(oport_dst.validate(), InvalidSpec);
    CircuitSpec dup = c;
    dup.edges.push_back(dup.edges[0]);
    CHECK_THROWS_AS(dup.validate(), InvalidSpec);
}

TEST_CASE("verify: a well-formed chain passes all five checks") {
    ScenarioConfig cfg = chain_config();
    Deployment dep(cfg, TransportKind::Inproc);
    VerificationReport rep = verify(cfg.circuits[0], dep.verify_env());
    CHECK(rep.passed());
    for (const char* name :
         {"resolvable", "acyclic", "schema", "exported", "permission"}) {
        const CheckResult* c = rep.check(name);
        REQUIRE(c);
        CHECK(c->passed);
        CHECK(c->failures.empty());
    }
    CHECK(rep.to_json().at("passed") == true);
    CHECK(rep.to_text().find("circuit verification passed") != std::string::npos);
}

TEST_CASE("verify: hand-built defects land in the right check") {
    ScenarioConfig cfg = chain_config();
    Deployment dep(cfg, TransportKind::Inproc);

    // unregistered source gate
    CircuitSpec ghost = cfg.circuits[0];
    ghost.edges[0].from = parse_address("d0/phantom/out");
    VerificationReport rep = verify(ghost, dep.verify_env());
    CHECK(!rep.passed());
    CHECK(!rep.check("resolvable")->passed);
    CHECK(rep.check("acyclic")->passed);
    // an unresolvable source oport also leaves its policy unknowable
    CHECK(!rep.check("permission")->passed);

    // unknown domain
    CircuitSpec nowhere = cfg.circuits[0];
    nowhere.edges[0].from = parse_address("dx/g0/out");
    CHECK(!verify(nowhere, dep.verify_env()).check("resolvable")->passed);

    // a back-edge closing a two-gate loop, named in the failure
    CircuitSpec loop = cfg.circuits[0];
    loop.edges.push_back({parse_address("d0/g1/out"), parse_address("d0/g0"), "in"});
    rep = verify(loop, dep.verify_env());
    CHECK(!rep.check("acyclic")->passed);
    CHECK(rep.check("acyclic")->failures[0].find("gate cycle:") !=
          std::string::npos);
    CHECK(rep.check("acyclic")->failures[0].find("d0/g0") != std::string::npos);
}

TEST_CASE("verify: cross-domain edges need the export flag") {
    ScenarioConfig cfg = chain_config();
    cfg.gates[1].oports[0].exported = false;  // d0/g1 feeds d1/g2 across domains
    cfg.gates[1].metadata = make_metadata(cfg.gates[1]);
    Deployment dep(cfg, TransportKind::Inproc);
    VerificationReport rep = verify(cfg.circuits[0], dep.verify_env());
    CHECK(!rep.check("exported")->passed);
    CHECK(rep.check("exported")->failures.size() == 1);
    CHECK(rep.check("exported")->failures[0].find("d0/g1/out") !=
          std::string::npos);
    // the intra-domain edge from g0 is untouched by the export rule
    CHECK(rep.check("schema")->passed);
    CHECK(rep.check("permission")->passed);

    // the same dark oport inside one domain is fine
    ScenarioConfig intra = chain_config();
    intra.gates[0].oports[0].exported = false;
    intra.gates[0].metadata = make_metadata(intra.gates[0]);
    Deployment dep2(intra, TransportKind::Inproc);
    CHECK(verify(intra.circuits[0], dep2.verify_env()).check("exported")->passed);
}

TEST_CASE("property: injected defects trip exactly the matching check") {
    std::mt19937_64 rng(4100);
    IdGen ids(4100);
    const cgen::Defect defects[] = {cgen::Defect::Cycle, cgen::Defect::Schema,
                                    cgen::Defect::Permission};
    for (int round = 0; round < 30; ++round) {
        cgen::Generated g = cgen::make(rng, ids);
        std::string broken = cgen::inject(g, defects[round % 3], rng);
        Deployment dep(g.cfg, TransportKind::Inproc);
        VerificationReport rep = verify(g.cfg.circuits[0], dep.verify_env());
        CAPTURE(round);
        CAPTURE(broken);
        CAPTURE(circuit_spec_to_json(g.cfg.circuits[0]).dump());
        CHECK(!rep.passed());
        for (const auto& c : rep.checks)
            CHECK(c.passed == (c.check != broken));
        if (broken != "acyclic") {
            // the failure names the edge the defect was planted on
            const auto& edge = g.cfg.circuits[0].edges[g.defect_edge];
            bool named = false;
            for (const auto& f : rep.check(broken)->failures)
                if (f.find(format_address(edge.from)) != std::string::npos)
                    named = true;
            CHECK(named);
        }
    }
}

TEST_CASE("activate: chain goes live and moves transformed data end to end") {
    ScenarioConfig cfg = chain_config();
    Deployment dep(cfg, TransportKind::Inproc);
    auto circuit = activate(cfg.circuits[0], dep.verify_env(), dep);

    CircuitStatus st = circuit->status();
    CHECK(st.running);
    REQUIRE(st.edges.size() == 2);
    for (const auto& e : st.edges) {
        CHECK(e.state == EdgeState::Open);
        CHECK(e.high_water == 0);
    }
    CHECK(st.gate_live.at("d0/g0"));
    CHECK(st.gate_live.at("d1/g2"));

    IdGen ids(1);
    Batch in = rooms(ids, {{5, "r1"}, {15, "r2"}, {25, "r3"}});
    dep.local_gate(parse_address("d0/g0"))->ingest("in", in);
    circuit->drain();

    std::vector<std::string> want = {Value{{"n", 15}, {"room", "r2"}}.dump(),
                                     Value{{"n", 25}, {"room", "r3"}}.dump()};
    std::sort(want.begin(), want.end());
    CHECK(eventually([&] { return view_multiset(dep, "d1/g2") == want; }));
    CHECK(view_multiset(dep, "d0/g1") == want);

    // high-water marks count acknowledged deliveries per edge
    CHECK(eventually([&] {
        CircuitStatus now = circuit->status();
        return now.edges[0].high_water == 3 && now.edges[1].high_water == 2;
    }));
    circuit->stop();
    CHECK(!circuit->status().running);
}

TEST_CASE("activate: a failing verification stops activation cold") {
    ScenarioConfig cfg = chain_config();
    cfg.gates[0].oports[0].policy.entries.clear();  // nobody may watch g0
    cfg.gates[0].metadata = make_metadata(cfg.gates[0]);
    Deployment dep(cfg, TransportKind::Inproc);
    CHECK(!verify(cfg.circuits[0], dep.verify_env()).passed());
    CHECK_THROWS_AS(activate(cfg.circuits[0], dep.verify_env(), dep),
                    ActivationFailed);
}

TEST_CASE("activate: edge setup failure rolls back and names the edge") {
    ScenarioConfig cfg = chain_config();
    // the registry carries a different key than d0/g1 actually signs with,
    // so the first edge g1 initiates (as the consumer of g0) fails its
    // handshake and activation unwinds
    cfg.identities["d0/g1"] = {"", "imposter-seed"};
    Deployment dep(cfg, TransportKind::Inproc);
    CHECK(verify(cfg.circuits[0], dep.verify_env()).passed());
    try {
        activate(cfg.circuits[0], dep.verify_env(), dep);
        FAIL("activation should have thrown");
    } catch (const ActivationFailed& e) {
        std::string msg = e.what();
        CHECK(msg.find("d0/g0/out -> d0/g1:feed") != std::string::npos);
        CHECK(msg.find("AuthFailed") != std::string::npos);
    }
    // the deployment stays usable: the honest edge's endpoints still serve
    ScenarioConfig ok = chain_config();
    Deployment dep2(ok, TransportKind::Inproc);
    CHECK_NOTHROW(activate(ok.circuits[0], dep2.verify_env(), dep2));
}

TEST_CASE("fault and reconnect: resumes above the high-water mark, no gaps") {
    ScenarioConfig cfg = chain_config();
    Deployment dep(cfg, TransportKind::Inproc);
    auto circuit = activate(cfg.circuits[0], dep.verify_env(), dep);
    Gate* head = dep.local_gate(parse_address("d0/g0"));

    IdGen ids(2);
    head->ingest("in", rooms(ids, {{10, "a"}, {11, "b"}}));
    circuit->drain();
    CHECK(eventually([&] { return view_multiset(dep, "d1/g2").size() == 2; }));

    circuit->inject_fault(0);
    CHECK(circuit->status().edges[0].state == EdgeState::Degraded);
    CHECK(circuit->status().edges[1].state == EdgeState::Open);

    // ingested while the first hop is down; nothing may move past it
    head->ingest("in", rooms(ids, {{12, "c"}, {13, "d"}}));
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    CHECK(view_multiset(dep, "d1/g2").size() == 2);

    std::uint64_t high_before = circuit->status().edges[0].high_water;
    circuit->reconnect(0);
    CHECK(circuit->status().edges[0].state == EdgeState::Open);
    circuit->drain();
    CHECK(eventually([&] { return view_multiset(dep, "d1/g2").size() == 4; }));

    // exactly the two missed events were redelivered: no gaps, no duplicates
    CircuitStatus st = circuit->status();
    CHECK(st.edges[0].high_water == high_before + 2);
    std::vector<std::string> want;
    for (int n : {10, 11, 12, 13})
        want.push_back(Value{{"n", n}, {"room", std::string(1, 'a' + (n - 10))}}.dump());
    std::sort(want.begin(), want.end());
    CHECK(view_multiset(dep, "d1/g2") == want);
    circuit->stop();
}

TEST_CASE("property: verified random circuits run and match the composed oracle") {
    std::mt19937_64 rng(600);
    IdGen ids(600);
    for (int round = 0; round < 40; ++round) {
        cgen::Generated g = cgen::make(rng, ids);
        Deployment dep(g.cfg, TransportKind::Inproc);
        VerificationReport rep = verify(g.cfg.circuits[0], dep.verify_env());
        CAPTURE(round);
        CAPTURE(circuit_spec_to_json(g.cfg.circuits[0]).dump());
        REQUIRE(rep.passed());

        auto circuit = activate(g.cfg.circuits[0], dep.verify_env(), dep);
        for (const auto& [root, batch] : g.root_batches)
            dep.local_gate(parse_address(root))->ingest("in", batch);
        circuit->drain();

        for (const auto& [gate, want] : g.expected) {
            CAPTURE(gate);
            bool converged = eventually(
                [&] { return view_multiset(dep, gate) == want; }, 3000);
            CHECK(converged);
        }
        circuit->stop();
    }
}
