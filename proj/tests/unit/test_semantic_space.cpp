#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "planted.hpp"
#include "relink/error.hpp"
#include "relink/llm_gateway.hpp"
#include "relink/random.hpp"
#include "relink/semantic_space.hpp"

using namespace relink;

namespace {

Vec random_vec(Rng& rng, int n) {
    Vec v(n);
    for (int k = 0; k < n; ++k) v[k] = rng.normal();
    return v;
}

std::vector<double> as_std(const Vec& v) { return {v.data(), v.data() + v.size()}; }

EdgeVector edge(const Vec& v, SourceKind kind = SourceKind::Explicit) { return {normalized(v), kind}; }

// Matrix-vector product written out by hand.
std::vector<double> affine(const Mat& w, const Vec& b, const Vec& x) {
    std::vector<double> y(static_cast<std::size_t>(w.rows()));
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
        double acc = b[r];
        for (Eigen::Index c = 0; c < w.cols(); ++c) acc += w(r, c) * x[c];
        y[static_cast<std::size_t>(r)] = acc;
    }
    double n = 0;
    for (double v : y) n += v * v;
    for (double& v : y) v /= std::sqrt(n);
    return y;
}

std::unique_ptr<LlmGateway> mock_gateway(int dim) {
    auto cfg = planted::mock_gateway_config(dim);
    return std::make_unique<LlmGateway>(cfg, std::make_unique<MockBackend>(cfg.mock));
}

EntityCatalog two_entities() {
    EntityCatalog c;
    c.add({"a", "Ada Lovelace", {}});
    c.add({"b", "London", {}});
    return c;
}

} // namespace

TEST_CASE("triple encoding") {
    auto gw = mock_gateway(12);
    const FactTriple t{"", "a", "was born in", "b", "d#0", TripleOrigin::Explicit, 1.0};
    CHECK(linearize_triple(t, two_entities()) == "Ada Lovelace was born in London");
    const Vec raw = gw->embed_one("Ada Lovelace was born in London");

    SUBCASE("identity adapter gives the normalized raw embedding") {
        auto id = ProjectionAdapter::initial(12, 12, 0.07, 1);
        CHECK(id.factual.weight == Mat::Identity(12, 12));
        auto v = encode_triple(t, two_entities(), *gw, id);
        CHECK((v.vector - raw.normalized()).norm() < 1e-12);
        CHECK(v.source_kind == SourceKind::Explicit);
    }
    SUBCASE("zero weights with a bias give the normalized bias") {
        auto a = ProjectionAdapter::initial(5, 12, 0.07, 1);
        a.factual.weight.setZero();
        a.factual.bias = Vec::LinSpaced(5, 1.0, 5.0);
        auto v = encode_triple(t, two_entities(), *gw, a);
        CHECK((v.vector - a.factual.bias.normalized()).norm() < 1e-12);
    }
    SUBCASE("random adapter matches a hand-written projection") {
        auto a = ProjectionAdapter::initial(5, 12, 0.07, 3);
        Rng rng(4);
        a.factual.bias = random_vec(rng, 5);
        auto v = encode_triple(t, two_entities(), *gw, a);
        auto expected = affine(a.factual.weight, a.factual.bias, raw);
        for (int k = 0; k < 5; ++k) CHECK(std::abs(v.vector[k] - expected[static_cast<std::size_t>(k)]) < 1e-12);
        auto again = encode_triple(t, two_entities(), *gw, a);
        CHECK(again.vector == v.vector);
    }
}

TEST_CASE("latent encoding") {
    Rng rng(8);
    LatentRelation r{"L-x", "a", "b", "d#0", 1.0, random_vec(rng, 6)};
    auto id = ProjectionAdapter::initial(6, 6, 0.07, 1);
    auto v = encode_latent(r, id);
    CHECK((v.vector - r.vector.normalized()).norm() < 1e-12);
    CHECK(v.source_kind == SourceKind::Latent);

    auto a = ProjectionAdapter::initial(4, 6, 0.07, 9);
    a.latent.bias = random_vec(rng, 4);
    auto expected = affine(a.latent.weight, a.latent.bias, r.vector);
    auto got = encode_latent(r, a);
    for (int k = 0; k < 4; ++k) CHECK(std::abs(got.vector[k] - expected[static_cast<std::size_t>(k)]) < 1e-12);

    r.vector = Vec::Zero(6);
    try {
        encode_latent(r, id);
        FAIL("expected DegenerateVector");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DegenerateVector);
    }
    r.vector = Vec::Ones(5);
    try {
        encode_latent(r, id);
        FAIL("expected DimensionMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DimensionMismatch);
    }
}

TEST_CASE("encoded vectors are unit norm") {
    Rng rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        auto a = ProjectionAdapter::initial(7, 9, 0.07, static_cast<std::uint64_t>(trial));
        CHECK(std::abs(project_factual(random_vec(rng, 9), a).vector.norm() - 1.0) < 1e-6);
        CHECK(std::abs(project_latent(random_vec(rng, 9), a).vector.norm() - 1.0) < 1e-6);
    }
}

TEST_CASE("contrastive loss closed forms") {
    Vec e1 = Vec::Unit(3, 0);
    std::vector<EdgeVector> f = {edge(e1), edge(-e1)};
    std::vector<EdgeVector> l = {edge(e1), edge(-e1)};
    const double expected = -std::log(std::exp(1.0) / (std::exp(1.0) + std::exp(-1.0)));
    CHECK(contrastive_loss(f, l, 1.0) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(expected == doctest::Approx(0.1269).epsilon(1e-3));

    for (int b : {2, 3, 7, 16}) {
        std::vector<EdgeVector> same(static_cast<std::size_t>(b), edge(Vec::Ones(4)));
        CHECK(std::abs(contrastive_loss(same, same, 0.07) - std::log(b)) < 1e-12);
    }
    CHECK_THROWS_AS(contrastive_loss(f, l, 0.0), Error);
    CHECK_THROWS_AS(contrastive_loss({f[0]}, {l[0]}, 1.0), Error);
}

TEST_CASE("contrastive loss matches the double-loop reference") {
    Rng rng(12);
    for (int trial = 0; trial < 100; ++trial) {
        const int b = 2 + static_cast<int>(rng.below(10));
        const double tau = 0.05 + rng.uniform();
        std::vector<EdgeVector> f, l;
        std::vector<std::vector<double>> fs, ls;
        for (int i = 0; i < b; ++i) {
            f.push_back(edge(random_vec(rng, 5)));
            l.push_back(edge(random_vec(rng, 5), SourceKind::Latent));
            fs.push_back(as_std(f.back().vector));
            ls.push_back(as_std(l.back().vector));
        }
        CHECK(std::abs(contrastive_loss(f, l, tau) - oracle::infonce(fs, ls, tau)) < 1e-7);
    }
}

TEST_CASE("adapter gradients match central finite differences") {
    Rng rng(31);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto a = ProjectionAdapter::initial(4, 6, 0.2 + 0.1 * static_cast<double>(seed % 3), seed);
        a.factual.bias = 0.1 * random_vec(rng, 4);
        a.latent.bias = 0.1 * random_vec(rng, 4);
        std::vector<AlignmentPair> batch;
        for (int i = 0; i < 5; ++i) batch.push_back({random_vec(rng, 6), random_vec(rng, 6)});

        AdapterGradient grad;
        alignment_loss(a, batch, &grad);
        ProjectionAdapter g = a;
        g.factual = {grad.factual_weight, grad.factual_bias};
        g.latent = {grad.latent_weight, grad.latent_bias};

        auto f = [&](const std::vector<double>& x) {
            ProjectionAdapter p = a;
            p.unflatten(x);
            return alignment_loss(p, batch);
        };
        const auto numeric = gradcheck::numeric_gradient(f, a.flatten());
        CHECK(gradcheck::relative_error(g.flatten(), numeric) < 1e-4);
    }
}

TEST_CASE("alignment training") {
    Rng rng(5);
    std::vector<AlignmentPair> data;
    for (int i = 0; i < 2; ++i) data.push_back({random_vec(rng, 6), random_vec(rng, 6)});
    auto start = ProjectionAdapter::initial(6, 6, 0.1, 1);

    SUBCASE("zero epochs leave the adapter unchanged") {
        auto out = train_alignment(data, start, {0, 0.1, 32, 0});
        CHECK(out.parameter_hash() == start.parameter_hash());
    }
    SUBCASE("the positive pair's cosine rises monotonically and plateaus") {
        // In-batch InfoNCE needs a second pair to act as the negative.
        auto cos0 = [&](const ProjectionAdapter& a) {
            return cosine(project_factual(data[0].factual_raw, a).vector, project_latent(data[0].latent_raw, a).vector);
        };
        std::vector<double> trend = {cos0(start)};
        auto a = start;
        for (int step = 0; step < 3000; ++step) {
            a = train_alignment(data, a, {1, 0.5, 2, 0});
            trend.push_back(cos0(a));
        }
        for (std::size_t k = 1; k < trend.size(); ++k) CHECK(trend[k] >= trend[k - 1] - 1e-12);
        // Once the softmax saturates the gradient vanishes and the cosine
        // levels off below 1.
        CHECK(trend.back() - trend.front() > 1.0);
        CHECK(trend[3000] - trend[2000] < trend[1000] - trend[0]);
    }
    SUBCASE("logged loss decreases and training is deterministic") {
        std::vector<AlignmentPair> more;
        for (int i = 0; i < 40; ++i) more.push_back({random_vec(rng, 6), random_vec(rng, 6)});
        TrainLog log;
        auto a = train_alignment(more, start, {30, 0.05, 8, 3}, &log);
        REQUIRE(log.epoch_loss.size() == 30);
        CHECK(log.epoch_loss.back() < log.epoch_loss.front());
        CHECK(train_alignment(more, start, {30, 0.05, 8, 3}).parameter_hash() == a.parameter_hash());
        CHECK(a.epoch == 30);
    }
}

TEST_CASE("alignment pair mining requires a shared pair and context") {
    EntityCatalog c;
    for (auto id : {"a", "b", "c"}) c.add({id, std::string("N") + id, {}});
    GraphBackbone g(c);
    g.add({"", "a", "p", "b", "s#0", TripleOrigin::Explicit, 1.0});
    g.add({"", "b", "q", "c", "s#1", TripleOrigin::Explicit, 1.0});
    LatentPool pool(2, {{make_latent_id("a", "b", "s#0"), "a", "b", "s#0", 1.0, Vec::Ones(2)},
                        {make_latent_id("a", "b", "s#9"), "a", "b", "s#9", 1.0, Vec::Ones(2)},
                        {make_latent_id("b", "c", "s#2"), "b", "c", "s#2", 1.0, Vec::Ones(2)}});
    auto pairs = mine_alignment_pairs(g, pool);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].first.predicate == "p");
    CHECK(pairs[0].second.context == "s#0");
}

TEST_CASE("adapter checkpoints round-trip") {
    auto a = ProjectionAdapter::initial(4, 6, 0.3, 7);
    a.epoch = 5;
    auto dir = std::filesystem::temp_directory_path() / "relink_adapter_test";
    std::filesystem::create_directories(dir);
    a.save(dir / "adapter.json");
    auto b = ProjectionAdapter::load(dir / "adapter.json");
    CHECK(b.dim() == 4);
    CHECK(b.raw_dim() == 6);
    CHECK(b.epoch == 5);
    CHECK(b.temperature == doctest::Approx(0.3));
    CHECK((b.factual.weight - a.factual.weight).cwiseAbs().maxCoeff() < 1e-6);
}
