#include <doctest.h>

#include "test_util.hpp"
#include "trackcentre/baselines.hpp"

using namespace trackcentre;
using testutil::random_matrix;
using testutil::TempDir;

namespace {

TrackSet two_identities(std::uint64_t seed, std::size_t per_identity, std::size_t dim) {
    std::mt19937_64 rng(seed);
    TrackSet set;
    set.dim = dim;
    std::int64_t cursor = 0;
    for (std::size_t i = 0; i < 2 * per_identity; ++i) {
        EmbeddingTrack t;
        t.track_id = static_cast<std::int64_t>(i);
        const std::size_t n = 3 + i % 5;
        // Pairs of opposite identity overlap in time.
        t.start_frame = cursor + static_cast<std::int64_t>(i % 2);
        t.end_frame = t.start_frame + static_cast<std::int64_t>(n) - 1;
        if (i % 2 == 1) cursor = t.end_frame + 10;
        t.label = static_cast<std::int64_t>(i % 2);
        t.embeddings = random_matrix(n, dim, rng, 0.2);
        for (std::size_t f = 0; f < n; ++f) t.embeddings(f, 0) += i % 2 == 0 ? 2.0 : -2.0;
        set.tracks.push_back(std::move(t));
    }
    return set;
}

TrainConfig short_run(std::size_t epochs) {
    TrainConfig c;
    c.epochs = epochs;
    c.warmup_epochs = std::max<std::size_t>(1, epochs * 4 / 9);
    c.batch_size = 32;
    c.max_lr = 0.01;
    c.seed = 5;
    return c;
}

EncoderConfig tiny_encoder(std::size_t d) {
    EncoderConfig c;
    c.model_dim = d;
    c.heads = 2;
    c.layers = 1;
    c.mlp_hidden = 8;
    return c;
}

}  // namespace

TEST_CASE("temporal average") {
    Matrix constant(4, 3, 2.5);
    CHECK(temporal_average(constant) == Vector{2.5, 2.5, 2.5});
    Matrix two(2, 2);
    two.data = {0, 2, 2, 0};
    CHECK(temporal_average(two) == Vector{1, 1});
    CHECK_THROWS_AS(temporal_average(Matrix(0, 3)), std::invalid_argument);

    std::mt19937_64 rng(1);
    for (int rep = 0; rep < 50; ++rep) {
        const Matrix m = random_matrix(1 + rep, 7, rng, 3.0);
        const Vector got = temporal_average(m);
        for (std::size_t j = 0; j < 7; ++j) {
            long double s = 0;
            for (std::size_t i = m.rows; i-- > 0;) s += m.data[i * 7 + j];
            CHECK(std::abs(got[j] - static_cast<double>(s / m.rows)) <= 1e-12);
        }
    }
}

TEST_CASE("contrastive loss examples and symmetry") {
    const Vector a{1, 2}, b{1, 0};
    CHECK(pairwise_contrastive_loss(a, a, 1, 1.0) == 0.0);
    CHECK(pairwise_contrastive_loss(a, a, 0, 1.0) == doctest::Approx(0.5));
    CHECK(pairwise_contrastive_loss(a, b, 1, 1.0) == doctest::Approx(2.0));
    CHECK(pairwise_contrastive_loss(a, b, 0, 1.0) == 0.0);
    CHECK(pairwise_contrastive_loss(a, b, 0, 3.0) == doctest::Approx(0.5));
    CHECK_THROWS_AS(pairwise_contrastive_loss(a, Vector{1}, 1, 1.0), std::invalid_argument);
    CHECK(pairwise_contrastive_grad(a, a, 0, 1.0).degenerate);

    std::mt19937_64 rng(2);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int rep = 0; rep < 500; ++rep) {
        Vector x(3), y(3);
        for (auto& v : x) v = g(rng);
        for (auto& v : y) v = g(rng);
        const int t = rep % 2;
        const double margin = 0.5 + rep % 4;
        CHECK(pairwise_contrastive_loss(x, y, t, margin) == doctest::Approx(pairwise_contrastive_loss(y, x, t, margin)).epsilon(1e-15));
        const LossGradient gi = pairwise_contrastive_grad(x, y, t, margin);
        const LossGradient gj = pairwise_contrastive_grad(y, x, t, margin);
        for (std::size_t k = 0; k < 3; ++k) {
            CHECK(gj.value[k] == doctest::Approx(-gi.value[k]).epsilon(1e-14));
            const double h = 1e-6, keep = x[k];
            x[k] = keep + h;
            const double up = pairwise_contrastive_loss(x, y, t, margin);
            x[k] = keep - h;
            const double down = pairwise_contrastive_loss(x, y, t, margin);
            x[k] = keep;
            const double num = (up - down) / (2 * h);
            CHECK(std::abs(num - gi.value[k]) <= 1e-6 * std::max({std::abs(num), std::abs(gi.value[k]), 1e-3}));
        }
    }
}

TEST_CASE("mlp shapes, representation and gradients") {
    std::mt19937_64 rng(3);
    const SiameseMlpParams p = init_mlp(6, 0, 2, rng);
    CHECK(p.hidden == 3);
    CHECK(init_mlp(1, 0, 2, rng).hidden == 1);
    const Matrix frames = random_matrix(5, 6, rng);
    const Vector rep = mlp_track_representation(p, frames);
    const Vector comp = temporal_average(mlp_forward(p, frames));
    for (std::size_t k = 0; k < 2; ++k) CHECK(std::abs(rep[k] - comp[k]) <= 1e-12);
    CHECK_THROWS_AS(mlp_forward(p, Matrix(2, 5)), std::invalid_argument);

    // Gradient of sum(R .* out) against central differences.
    SiameseMlpParams q = p;
    std::normal_distribution<double> g(0.0, 0.5);
    for (double& v : q.b1.data) v = g(rng);
    const Matrix r = random_matrix(5, 2, rng);
    auto objective = [&](const SiameseMlpParams& w) {
        const Matrix out = mlp_forward(w, frames);
        double s = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) s += out.data[i] * r.data[i];
        return s;
    };
    MlpCache cache;
    mlp_forward(q, frames, &cache);
    SiameseMlpParams grads = zero_mlp(6, 3, 2);
    mlp_backward_acc(q, cache, r, grads);
    std::vector<const Matrix*> ga;
    grads.for_each([&](const std::string&, const Matrix& m, bool) { ga.push_back(&m); });
    SiameseMlpParams probe = q;
    std::size_t t = 0;
    probe.for_each([&](const std::string&, Matrix& m, bool) {
        for (std::size_t i = 0; i < m.size(); ++i) {
            const double keep = m.data[i];
            m.data[i] = keep + 1e-5;
            const double up = objective(probe);
            m.data[i] = keep - 1e-5;
            const double down = objective(probe);
            m.data[i] = keep;
            const double num = (up - down) / 2e-5;
            const double a = ga[t]->data[i];
            CHECK(std::abs(a - num) <= 1e-4 * std::max({std::abs(a), std::abs(num), 1e-6}));
        }
        ++t;
    });
}

TEST_CASE("mlp checkpoint round trip") {
    TempDir dir("mlp");
    std::mt19937_64 rng(4);
    const SiameseMlpParams p = init_mlp(5, 4, 2, rng);
    write_checkpoint(mlp_checkpoint(p), dir / "m.tcv");
    const Checkpoint c = read_checkpoint(dir / "m.tcv");
    CHECK(c.header.at("kind") == "tsiam");
    CHECK(mlp_from_checkpoint(c) == p);
    CHECK_THROWS_AS(encoder_from_checkpoint(c), std::runtime_error);
}

TEST_CASE("siamese mlp separates a two-identity fixture") {
    const TrackSet set = two_identities(6, 6, 4);
    const auto links = derive_cannot_links(set);
    REQUIRE(links.any());
    TrainConfig cfg = short_run(30);
    cfg.max_lr = 0.05;
    const PairwiseResult r = train_pairwise(PairwiseModel::Mlp, set, links, tiny_encoder(4), cfg);
    REQUIRE(r.mlp);
    const auto part = hac(mlp_representations(*r.mlp, set), Linkage::Average, KnownK{2});
    std::vector<std::int64_t> truth;
    for (const auto& t : set.tracks) truth.push_back(*t.label);
    CHECK(nmi(part.labels, truth) == 1.0);

    const PairwiseResult again = train_pairwise(PairwiseModel::Mlp, set, links, tiny_encoder(4), cfg);
    CHECK(*again.mlp == *r.mlp);
    CHECK(again.history == r.history);
}

TEST_CASE("positive-only pairs on a single track decrease the loss") {
    std::mt19937_64 rng(7);
    TrackSet set;
    set.dim = 4;
    EmbeddingTrack t;
    t.track_id = 0;
    t.start_frame = 0;
    t.end_frame = 19;
    t.embeddings = random_matrix(20, 4, rng);
    set.tracks.push_back(t);
    TrainConfig cfg = short_run(10);
    cfg.attract_clips = 4000;
    cfg.batch_size = 256;
    const PairwiseResult r = train_pairwise(PairwiseModel::Mlp, set, derive_cannot_links(set), tiny_encoder(4), cfg);
    CHECK(r.warnings.size() == 1);
    for (std::size_t e = 1; e < r.history.size(); ++e) CHECK(r.history[e].mean_loss <= r.history[e - 1].mean_loss);
}

TEST_CASE("pairwise transformer trains deterministically") {
    const TrackSet set = two_identities(8, 3, 4);
    const auto links = derive_cannot_links(set);
    TrainConfig cfg = short_run(4);
    const PairwiseResult a = train_pairwise(PairwiseModel::Transformer, set, links, tiny_encoder(4), cfg);
    const PairwiseResult b = train_pairwise(PairwiseModel::Transformer, set, links, tiny_encoder(4), cfg);
    REQUIRE(a.transformer);
    CHECK(*a.transformer == *b.transformer);
    CHECK(a.history == b.history);
    CHECK(a.history.size() == 4);
    for (const auto& h : a.history) CHECK(std::isfinite(h.mean_loss));
}

TEST_CASE("pairwise training input errors") {
    TrackSet set;
    set.dim = 2;
    EmbeddingTrack t;
    t.track_id = 0;
    t.embeddings = Matrix(1, 2, 1.0);
    set.tracks.push_back(t);
    const auto links = derive_cannot_links(set);
    CHECK_THROWS_AS(train_pairwise(PairwiseModel::Mlp, set, links, tiny_encoder(2), short_run(3)), std::invalid_argument);
    CHECK_THROWS_WITH_AS(train_pairwise(PairwiseModel::Mlp, set, links, tiny_encoder(4), short_run(3)),
                         doctest::Contains("dimension mismatch"), std::invalid_argument);
}
