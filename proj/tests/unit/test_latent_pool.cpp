#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>

#include "oracles.hpp"
#include "planted.hpp"
#include "relink/error.hpp"
#include "relink/latent_pool.hpp"
#include "relink/llm_gateway.hpp"
#include "relink/random.hpp"

using namespace relink;

namespace {

EntityCatalog small_catalog() {
    EntityCatalog c;
    for (auto [id, name] : std::vector<std::pair<std::string, std::string>>{
             {"a", "Ann"}, {"b", "Bob"}, {"c", "Cy"}, {"d", "Dee"}, {"e", "Eve"}})
        c.add({id, name, {}});
    return c;
}

// T = 10; Ann 3, Bob 2, Cy 2, Dee 2, Eve 5; pairs ab 2, ac 1, cd 1.
CorpusStore fixture_store() {
    CorpusStore s;
    s.add_document("d1", "", "Ann met Bob in town. Ann and Bob Bob argued. Ann called Cy.");
    s.add_document("d2", "", "Cy visited Dee. Dee slept. Eve ran. Eve sang. Eve ate. Eve read. Eve left.");
    return annotate_mentions(s, small_catalog());
}

std::unique_ptr<LlmGateway> mock_gateway(int dim = 16) {
    auto cfg = planted::mock_gateway_config(dim);
    return std::make_unique<LlmGateway>(cfg, std::make_unique<MockBackend>(cfg.mock));
}

EntityCatalog random_catalog(int entities) {
    EntityCatalog cat;
    for (int i = 0; i < entities; ++i) cat.add({"x" + std::to_string(i), "Name" + std::to_string(i), {}});
    return cat;
}

CorpusStore random_store(int sentences, int entities, std::uint64_t seed) {
    const EntityCatalog cat = random_catalog(entities);
    Rng rng(seed);
    std::string text;
    for (int s = 0; s < sentences; ++s) {
        text += "Start";
        for (std::size_t k = 0, n = rng.below(5); k < n; ++k) text += " Name" + std::to_string(rng.below(entities));
        text += ". ";
    }
    CorpusStore store;
    store.add_document("r", "", text);
    return annotate_mentions(store, cat);
}

} // namespace

TEST_CASE("co-occurrence counting") {
    auto stats = count_cooccurrences(fixture_store());
    CHECK(stats.total_units == 10);
    CHECK(stats.entity_counts.at("a") == 3);
    CHECK(stats.entity_counts.at("b") == 2);  // twice in one sentence counts once
    CHECK(stats.entity_counts.at("e") == 5);
    CHECK(stats.pair_count("a", "b") == 2);
    CHECK(stats.pair_count("b", "a") == 2);
    CHECK(stats.pair_count("a", "c") == 1);
    CHECK(stats.pair_count("c", "d") == 1);
    CHECK(stats.pair_count("a", "d") == 0);
    CHECK(stats.pair_counts.size() == 3);

    CorpusStore three;
    three.add_document("t", "", "Ann, Bob and Cy.");
    auto s3 = count_cooccurrences(annotate_mentions(three, small_catalog()));
    CHECK(s3.pair_counts.size() == 3);
    for (const auto& [k, v] : s3.pair_counts) CHECK(v == 1);
}

TEST_CASE("co-occurrence counts equal a nested-loop recount") {
    auto store = random_store(50, 8, 4);
    auto stats = count_cooccurrences(store);
    CHECK(stats.total_units == static_cast<long>(store.sentences().size()));
    for (int i = 0; i < 8; ++i) {
        const std::string a = "x" + std::to_string(i);
        long ca = 0;
        for (const auto& s : store.sentences()) ca += s.mentions_entity(a) ? 1 : 0;
        CHECK((ca == 0 ? !stats.entity_counts.count(a) : stats.entity_counts.at(a) == ca));
        for (int j = i + 1; j < 8; ++j) {
            const std::string b = "x" + std::to_string(j);
            long cab = 0;
            for (const auto& s : store.sentences()) cab += (s.mentions_entity(a) && s.mentions_entity(b)) ? 1 : 0;
            CHECK(stats.pair_count(a, b) == cab);
            if (cab > 0) CHECK(cab <= std::min(stats.entity_counts.at(a), stats.entity_counts.at(b)));
        }
    }
    for (const auto& [k, v] : stats.pair_counts) CHECK(k.first < k.second);
}

TEST_CASE("pmi closed-form cases") {
    CooccurrenceStats s;
    s.total_units = 100;
    s.entity_counts = {{"a", 10}, {"b", 10}, {"c", 20}, {"d", 50}};
    s.pair_counts[ordered_pair("a", "b")] = 10;
    s.pair_counts[ordered_pair("c", "d")] = 10;
    CHECK(pmi(s, "a", "b", {0.0}) == doctest::Approx(std::log(10.0)).epsilon(1e-12));
    CHECK(std::abs(pmi(s, "c", "d", {0.0})) < 1e-12);
    CHECK(pmi(s, "a", "c", {0.0}) == -std::numeric_limits<double>::infinity());
    CHECK(std::isfinite(pmi(s, "a", "c", {0.5})));
    CHECK(pmi(s, "a", "c", {0.5, true}) == 0.0);
    try {
        pmi(s, "a", "zz");
        FAIL("expected UnknownEntity");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::UnknownEntity);
    }
}

TEST_CASE("pmi matches the reference formula, is symmetric and scale invariant") {
    Rng rng(21);
    for (int trial = 0; trial < 200; ++trial) {
        CooccurrenceStats s;
        s.total_units = 50 + static_cast<long>(rng.below(1000));
        const long ci = 1 + static_cast<long>(rng.below(s.total_units));
        const long cj = 1 + static_cast<long>(rng.below(s.total_units));
        const long cij = static_cast<long>(rng.below(std::min(ci, cj) + 1));
        s.entity_counts = {{"i", ci}, {"j", cj}};
        if (cij > 0) s.pair_counts[ordered_pair("i", "j")] = cij;
        const double alpha = (trial % 2) ? 0.5 : 0.0;
        const double got = pmi(s, "i", "j", {alpha});
        if (cij == 0 && alpha == 0.0) {
            CHECK(got == -std::numeric_limits<double>::infinity());
            continue;
        }
        CHECK(std::abs(got - oracle::pmi(cij, ci, cj, s.total_units, alpha)) < 1e-9);
        CHECK(got == pmi(s, "j", "i", {alpha}));

        if (alpha == 0.0) {
            CooccurrenceStats d = s;
            d.total_units *= 2;
            for (auto& [k, v] : d.entity_counts) v *= 2;
            for (auto& [k, v] : d.pair_counts) v *= 2;
            CHECK(std::abs(pmi(d, "i", "j", {0.0}) - got) < 1e-12);
        }
    }
}

TEST_CASE("pool membership follows the hand-computed PMI filter") {
    auto store = fixture_store();
    auto stats = count_cooccurrences(store);
    auto gw = mock_gateway();
    // With alpha = 0: pmi(a,b) = ln(2/0.6) = 1.204, pmi(a,c) = ln(1/0.6) = 0.511, pmi(c,d) = ln(2.5) = 0.916.
    auto pairs_of = [&](double tau) {
        PoolConfig cfg;
        cfg.alpha = 0.0;
        cfg.tau_c = tau;
        cfg.max_contexts_per_pair = 1;
        std::set<std::pair<std::string, std::string>> out;
        const auto pool = build_pool(store, small_catalog(), stats, *gw, cfg);
        for (const auto& r : pool.relations()) out.insert({r.e_i, r.e_j});
        return out;
    };
    using P = std::set<std::pair<std::string, std::string>>;
    CHECK(pairs_of(1.0) == P{{"a", "b"}});
    CHECK(pairs_of(0.6) == P{{"a", "b"}, {"c", "d"}});
    CHECK(pairs_of(0.5) == P{{"a", "b"}, {"a", "c"}, {"c", "d"}});
    CHECK(pairs_of(std::numeric_limits<double>::infinity()).empty());
    CHECK(pairs_of(-std::numeric_limits<double>::infinity()).size() == stats.pair_counts.size());
}

TEST_CASE("pool relations carry verified contexts and mask-mode vectors") {
    auto store = fixture_store();
    auto stats = count_cooccurrences(store);
    auto gw = mock_gateway(16);
    PoolConfig cfg;
    cfg.tau_c = -std::numeric_limits<double>::infinity();
    auto pool = build_pool(store, small_catalog(), stats, *gw, cfg);
    CHECK(pool.dim() == 16);
    std::size_t ab = 0;
    for (const auto& r : pool.relations()) {
        const auto& s = store.sentence(r.context);
        CHECK(s.mentions_entity(r.e_i));
        CHECK(s.mentions_entity(r.e_j));
        CHECK(r.e_i < r.e_j);
        CHECK(r.vector.size() == 16);
        if (r.e_i == "a" && r.e_j == "b") ++ab;
        const auto input = render_latent_input(s.text, small_catalog().name_of(r.e_i), small_catalog().name_of(r.e_j));
        // Pool vectors are held at float32 precision.
        CHECK((r.vector - gw->embed_one(input, true).cast<float>().cast<double>()).norm() == 0.0);
    }
    CHECK(ab == 2);
    // The shorter context is chosen first when only one is allowed.
    cfg.max_contexts_per_pair = 1;
    auto one = build_pool(store, small_catalog(), stats, *gw, cfg);
    for (const auto& r : one.relations())
        if (r.e_i == "a" && r.e_j == "b") CHECK(r.context == "d1#0");
    CHECK(render_latent_input("Ann met Bob.", "Ann", "Bob") == "[CLS] Ann met Bob. [SEP] Ann [MASK] Bob [SEP]");
}

TEST_CASE("raising the threshold never adds members") {
    auto store = random_store(80, 10, 9);
    auto stats = count_cooccurrences(store);
    auto gw = mock_gateway(8);
    std::optional<std::set<std::string>> prev;
    for (double tau : {-5.0, -1.0, 0.0, 0.5, 1.0, 2.0, 5.0}) {
        PoolConfig cfg;
        cfg.tau_c = tau;
        std::set<std::string> ids;
        const auto pool = build_pool(store, random_catalog(10), stats, *gw, cfg);
        for (const auto& r : pool.relations()) {
            CHECK(r.pmi > tau);
            ids.insert(r.latent_id);
        }
        if (prev) CHECK(std::includes(prev->begin(), prev->end(), ids.begin(), ids.end()));
        prev = ids;
    }
}

TEST_CASE("latent neighbors equal a linear scan ordered by pmi") {
    auto store = random_store(120, 12, 5);
    auto stats = count_cooccurrences(store);
    auto gw = mock_gateway(8);
    PoolConfig cfg;
    cfg.tau_c = -10.0;
    auto pool = build_pool(store, random_catalog(12), stats, *gw, cfg);
    REQUIRE(pool.size() > 10);
    for (int i = 0; i < 12; ++i) {
        const std::string e = "x" + std::to_string(i);
        std::vector<LatentRelation> expected;
        for (const auto& r : pool.relations())
            if (r.e_i == e || r.e_j == e) expected.push_back(r);
        std::sort(expected.begin(), expected.end(), [](const auto& a, const auto& b) {
            return a.pmi != b.pmi ? a.pmi > b.pmi : a.latent_id < b.latent_id;
        });
        CHECK(neighbors_latent(pool, e) == expected);
    }
    CHECK(neighbors_latent(pool, "unknown").empty());
}

TEST_CASE("pool persistence round-trips through float32 storage") {
    auto store = fixture_store();
    auto gw = mock_gateway(16);
    PoolConfig cfg;
    cfg.tau_c = -100.0;
    auto pool = build_pool(store, small_catalog(), count_cooccurrences(store), *gw, cfg);
    auto dir = std::filesystem::temp_directory_path() / "relink_pool_test";
    std::filesystem::create_directories(dir);
    pool.save(dir / "pool.json");
    auto back = LatentPool::load(dir / "pool.json");
    REQUIRE(back.size() == pool.size());
    CHECK(back.dim() == pool.dim());
    for (std::size_t i = 0; i < pool.size(); ++i) {
        CHECK(back.relations()[i].latent_id == pool.relations()[i].latent_id);
        CHECK(back.relations()[i].vector == pool.relations()[i].vector);
    }
    CHECK(back == pool);
    back.save(dir / "pool2.json");
    CHECK(read_file(dir / "pool.f32") == read_file(dir / "pool2.f32"));
    auto meta = nlohmann::json::parse(read_file(dir / "pool.json"));
    auto meta2 = nlohmann::json::parse(read_file(dir / "pool2.json"));
    meta.erase("vectors_file");
    meta2.erase("vectors_file");
    CHECK(meta == meta2);
}
