#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <iterator>
#include <numeric>

#include "gradcheck.hpp"
#include "naive_encoder.hpp"
#include "test_util.hpp"
#include "trackcentre/checkpoint.hpp"
#include "trackcentre/encoder.hpp"

using namespace trackcentre;
using testutil::random_matrix;
using testutil::TempDir;

namespace {

EncoderConfig tiny(std::size_t d = 4, std::size_t h = 2, std::size_t l = 1) {
    EncoderConfig c;
    c.model_dim = d;
    c.heads = h;
    c.layers = l;
    return c;
}

// Non-default LN and bias values so the oracle comparison covers them.
EncoderParams perturbed(const EncoderConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    EncoderParams p = init_params(cfg, rng);
    std::normal_distribution<double> g(0.0, 0.5);
    p.for_each([&](const std::string&, Matrix& m, bool decays) {
        if (!decays)
            for (double& v : m.data) v += g(rng);
    });
    return p;
}

Matrix permute_rows(const Matrix& m, const std::vector<std::size_t>& perm) {
    Matrix out(m.rows, m.cols);
    for (std::size_t r = 0; r < m.rows; ++r)
        std::copy(m.row(perm[r]).begin(), m.row(perm[r]).end(), out.row(r).begin());
    return out;
}

}  // namespace

TEST_CASE("config validation") {
    CHECK_NOTHROW(tiny(32, 16).validate());
    CHECK(tiny(32, 16).head_dim() == 2);
    CHECK_THROWS_AS(tiny(30, 16).validate(), std::invalid_argument);
    CHECK_THROWS_AS(tiny(4, 2, 0).validate(), std::invalid_argument);
    EncoderConfig z = tiny();
    z.head_out_dim = 0;
    CHECK_THROWS_AS(z.validate(), std::invalid_argument);
    CHECK(tiny(8, 2).ffn_width() == 32);
    std::mt19937_64 rng(0);
    CHECK_THROWS_AS(init_params(tiny(4, 2, 0), rng), std::invalid_argument);
}

TEST_CASE("init is seeded and follows the stated distributions") {
    const EncoderConfig cfg = tiny(16, 4, 2);
    std::mt19937_64 a(9), b(9);
    const EncoderParams pa = init_params(cfg, a), pb = init_params(cfg, b);
    CHECK(pa == pb);
    for (const auto& l : pa.layers) {
        for (double v : l.ln1_gain.data) CHECK(v == 1.0);
        for (double v : l.ln2_gain.data) CHECK(v == 1.0);
        for (double v : l.ln1_bias.data) CHECK(v == 0.0);
        for (double v : l.bq.data) CHECK(v == 0.0);
        const double bound = 1.0 / std::sqrt(16.0);
        for (double v : l.wq.data) CHECK(std::abs(v) <= bound);
        const double bound2 = 1.0 / std::sqrt(64.0);
        for (double v : l.w2.data) CHECK(std::abs(v) <= bound2);
    }
    for (double v : pa.head_ln_gain.data) CHECK(v == 1.0);
    for (double v : pa.class_token.data) CHECK(std::abs(v) < 0.02 * 6);
}

TEST_CASE("forward matches the naive straight-line oracle") {
    SUBCASE("tiny instance d=4 h=2 L=1 len=3") {
        const EncoderParams p = perturbed(tiny(), 1);
        std::mt19937_64 rng(2);
        const Matrix clip = random_matrix(3, 4, rng);
        const auto want = naive::run(p, clip);
        const TrainOutput got = forward_train(p, clip);
        REQUIRE(got.z_head.size() == want.head.size());
        for (std::size_t i = 0; i < want.head.size(); ++i) CHECK(std::abs(got.z_head[i] - want.head[i]) <= 1e-12);
        const Vector cls = forward_eval(p, clip);
        for (std::size_t i = 0; i < want.cls.size(); ++i) CHECK(std::abs(cls[i] - want.cls[i]) <= 1e-12);
    }
    SUBCASE("random shapes, with and without positional embedding") {
        std::mt19937_64 rng(3);
        for (int rep = 0; rep < 20; ++rep) {
            const std::size_t h = 1 + rep % 4;
            EncoderConfig cfg = tiny(h * (1 + rep % 3), h, 1 + rep % 3);
            cfg.mlp_hidden = 1 + rep % 7;
            cfg.head_out_dim = 1 + rep % 3;
            cfg.use_positional_embedding = rep % 2 == 1;
            cfg.max_positions = 12;
            const EncoderParams p = perturbed(cfg, 100 + rep);
            const Matrix clip = random_matrix(1 + rep % 9, cfg.model_dim, rng);
            const auto want = naive::run(p, clip);
            const TrainOutput got = forward_train(p, clip);
            for (std::size_t i = 0; i < want.head.size(); ++i) CHECK(std::abs(got.z_head[i] - want.head[i]) <= 1e-11);
            const auto& probs = got.cache.layers.back().probs;
            for (std::size_t head = 0; head < h; ++head)
                for (std::size_t r = 0; r < clip.rows + 1; ++r)
                    for (std::size_t c = 0; c < clip.rows + 1; ++c)
                        CHECK(std::abs(probs[head](r, c) - want.last_probs[head][r][c]) <= 1e-12);
        }
    }
}

TEST_CASE("head decomposition and determinism") {
    const EncoderParams p = perturbed(tiny(8, 2, 2), 4);
    std::mt19937_64 rng(5);
    const Matrix clip = random_matrix(5, 8, rng);
    const Vector z = forward_head(p, clip);
    const Vector via = apply_head(p, forward_eval(p, clip));
    for (std::size_t i = 0; i < z.size(); ++i) CHECK(std::abs(z[i] - via[i]) <= 1e-12);
    CHECK(forward_train(p, clip).z_head == forward_train(p, clip).z_head);
    CHECK(forward_train(p, clip).z_head == z);
}

TEST_CASE("clips of one frame are valid") {
    const EncoderParams p = perturbed(tiny(), 6);
    Matrix clip(1, 4, 0.5);
    const TrainOutput out = forward_train(p, clip);
    CHECK(out.cache.tokens == 2);
    for (double v : out.z_head) CHECK(std::isfinite(v));
}

TEST_CASE("bad inputs are rejected") {
    const EncoderParams p = perturbed(tiny(), 7);
    CHECK_THROWS_WITH_AS(forward_train(p, Matrix(2, 5)), doctest::Contains("dimension mismatch"), std::invalid_argument);
    CHECK_THROWS_AS(forward_eval(p, Matrix(0, 4)), std::invalid_argument);
    Matrix nan(2, 4);
    nan(1, 1) = std::nan("");
    CHECK_THROWS_AS(forward_head(p, nan), std::invalid_argument);
    const TrainOutput out = forward_train(p, Matrix(2, 4, 1.0));
    const EncoderParams other = perturbed(tiny(4, 2, 2), 7);
    CHECK_THROWS_AS(backward(other, out.cache, Vector(2, 1.0)), std::invalid_argument);
    CHECK_THROWS_AS(backward(p, out.cache, Vector(3, 1.0)), std::invalid_argument);
}

TEST_CASE("class-token output is invariant to frame order without positional embedding") {
    std::mt19937_64 rng(8);
    for (int rep = 0; rep < 25; ++rep) {
        const EncoderParams p = perturbed(tiny(8, rep % 2 == 0 ? 2 : 4, 1 + rep % 3), 200 + rep);
        const Matrix clip = random_matrix(2 + rep % 10, 8, rng);
        std::vector<std::size_t> perm(clip.rows);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        const Vector a = forward_eval(p, clip), b = forward_eval(p, permute_rows(clip, perm));
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-9);
    }
    // With a learnable positional table the symmetry is broken.
    EncoderConfig cfg = tiny(8, 2, 1);
    cfg.use_positional_embedding = true;
    cfg.max_positions = 16;
    EncoderParams p = perturbed(cfg, 3);
    for (double& v : p.positional.data) v *= 50.0;
    const Matrix clip = random_matrix(4, 8, rng);
    const Vector a = forward_eval(p, clip), b = forward_eval(p, permute_rows(clip, {3, 2, 1, 0}));
    double diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
    CHECK(diff > 1e-6);
}

TEST_CASE("cached normalisation and softmax statistics") {
    const EncoderParams p = perturbed(tiny(8, 4, 2), 10);
    std::mt19937_64 rng(11);
    const TrainOutput out = forward_train(p, random_matrix(6, 8, rng, 3.0));
    for (const auto& l : out.cache.layers) {
        for (const auto& pr : l.probs)
            for (std::size_t r = 0; r < pr.rows; ++r) {
                double s = 0.0;
                for (double v : pr.row(r)) s += v;
                CHECK(std::abs(s - 1.0) <= 1e-12);
            }
        for (const auto* n : {&l.ln1, &l.ln2})
            for (std::size_t r = 0; r < n->normed.rows; ++r) {
                double mean = 0.0, var = 0.0;
                for (double v : n->normed.row(r)) mean += v;
                mean /= 8.0;
                for (double v : n->normed.row(r)) var += (v - mean) * (v - mean);
                var /= 8.0;
                CHECK(std::abs(mean) <= 1e-9);
                // Exactly 1 - eps / (raw variance + eps); within 1e-6 of 1 once the raw variance reaches 1.
                const double rstd = n->rstd[r];
                CHECK(std::abs(var - (1.0 - 1e-6 * rstd * rstd)) <= 1e-12);
                if (rstd <= 1.0) CHECK(std::abs(var - 1.0) <= 1e-6);
            }
    }
}

TEST_CASE("backward matches central finite differences") {
    std::mt19937_64 rng(12);
    for (int rep = 0; rep < 20; ++rep) {
        const auto in = gradcheck::random_instance(rng);
        const auto rep_out = gradcheck::check(in);
        CAPTURE(rep);
        CHECK(rep_out.max_rel <= 1e-4);
    }
}

TEST_CASE("zero upstream gradient gives exactly zero parameter gradients") {
    const EncoderParams p = perturbed(tiny(8, 2, 2), 13);
    std::mt19937_64 rng(14);
    const TrainOutput out = forward_train(p, random_matrix(4, 8, rng));
    const ParamGrads g = backward(p, out.cache, Vector(2, 0.0));
    g.for_each([](const std::string&, const Matrix& m, bool) {
        for (double v : m.data) CHECK(v == 0.0);
    });
}

TEST_CASE("backward_acc accumulates") {
    const EncoderParams p = perturbed(tiny(4, 2, 1), 15);
    std::mt19937_64 rng(16);
    const TrainOutput out = forward_train(p, random_matrix(3, 4, rng));
    const Vector gz{0.3, -0.7};
    ParamGrads twice = backward(p, out.cache, gz);
    backward_acc(p, out.cache, gz, twice);
    ParamGrads once = backward(p, out.cache, gz);
    scale(once, 2.0);
    std::vector<const Matrix*> a;
    twice.for_each([&](const std::string&, const Matrix& m, bool) { a.push_back(&m); });
    std::size_t i = 0;
    once.for_each([&](const std::string&, const Matrix& m, bool) {
        for (std::size_t k = 0; k < m.size(); ++k) CHECK(a[i]->data[k] == doctest::Approx(m.data[k]).epsilon(1e-14));
        ++i;
    });
}

TEST_CASE("duplicated frames receive identical gradients") {
    // Positional table gradients expose per-token input gradients.
    EncoderConfig cfg = tiny(8, 2, 2);
    cfg.use_positional_embedding = true;
    cfg.max_positions = 8;
    EncoderParams p = perturbed(cfg, 17);
    for (double& v : p.positional.data) v = 0.0;
    std::mt19937_64 rng(18);
    Matrix clip = random_matrix(4, 8, rng);
    std::copy(clip.row(1).begin(), clip.row(1).end(), clip.row(3).begin());
    const TrainOutput out = forward_train(p, clip);
    const ParamGrads g = backward(p, out.cache, Vector{1.0, -0.5});
    // Tokens 2 and 4 hold frames 1 and 3.
    for (std::size_t j = 0; j < 8; ++j) CHECK(g.positional(2, j) == doctest::Approx(g.positional(4, j)).epsilon(1e-12));
}

TEST_CASE("attention profile") {
    const EncoderParams p = perturbed(tiny(8, 4, 2), 19);
    std::mt19937_64 rng(20);
    SUBCASE("unit norm") {
        for (int rep = 0; rep < 10; ++rep) {
            const auto prof = attention_profile(p, random_matrix(1 + rep * 3, 8, rng));
            double s = 0.0;
            for (double v : prof.scores) s += v * v;
            CHECK(std::abs(std::sqrt(s) - 1.0) <= 1e-9);
            CHECK(prof.sigma >= 0.0);
        }
    }
    SUBCASE("single frame") {
        const auto prof = attention_profile(p, random_matrix(1, 8, rng));
        REQUIRE(prof.scores.size() == 1);
        CHECK(prof.scores[0] == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(prof.sigma == 0.0);
    }
    SUBCASE("identical frames") {
        const Matrix frame = random_matrix(1, 8, rng);
        Matrix clip(5, 8);
        for (std::size_t r = 0; r < 5; ++r) std::copy(frame.data.begin(), frame.data.end(), clip.row(r).begin());
        const auto prof = attention_profile(p, clip);
        for (double v : prof.scores) CHECK(std::abs(v - 1.0 / std::sqrt(5.0)) <= 1e-12);
        CHECK(prof.sigma <= 1e-9);
    }
    SUBCASE("raw scores are the head-averaged class-token attention") {
        const Matrix clip = random_matrix(4, 8, rng);
        const auto want = naive::run(p, clip);
        Vector raw(4, 0.0);
        for (const auto& head : want.last_probs)
            for (std::size_t f = 0; f < 4; ++f) raw[f] += head[0][f + 1] / 4.0;
        double n = 0.0;
        for (double v : raw) n += v * v;
        const auto prof = attention_profile(p, clip);
        for (std::size_t f = 0; f < 4; ++f) CHECK(std::abs(prof.scores[f] - raw[f] / std::sqrt(n)) <= 1e-12);
    }
}

TEST_CASE("checkpoint round trip") {
    TempDir dir("ckpt");
    EncoderConfig cfg = tiny(8, 2, 2);
    cfg.use_positional_embedding = true;
    cfg.max_positions = 5;
    const EncoderParams p = perturbed(cfg, 21);
    write_checkpoint(encoder_checkpoint(p, "vc"), dir / "a.tcv");
    const Checkpoint back = read_checkpoint(dir / "a.tcv");
    CHECK(back.header.at("format") == "TCV1");
    CHECK(back.header.at("kind") == "vc");
    CHECK(encoder_from_checkpoint(back) == p);

    write_checkpoint(encoder_checkpoint(p, "vc"), dir / "b.tcv");
    std::ifstream fa(dir / "a.tcv", std::ios::binary), fb(dir / "b.tcv", std::ios::binary);
    CHECK(std::string(std::istreambuf_iterator<char>(fa), {}) == std::string(std::istreambuf_iterator<char>(fb), {}));
}

TEST_CASE("corrupt checkpoints are rejected") {
    TempDir dir("badckpt");
    const EncoderParams p = perturbed(tiny(), 22);
    write_checkpoint(encoder_checkpoint(p, "vc"), dir / "a.tcv");
    std::ifstream in(dir / "a.tcv", std::ios::binary);
    std::string bytes(std::istreambuf_iterator<char>(in), {});
    auto rewrite = [&](const std::string& b) {
        std::ofstream out(dir / "x.tcv", std::ios::binary | std::ios::trunc);
        out << b;
    };
    rewrite(bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(read_checkpoint(dir / "x.tcv"), std::runtime_error);
    rewrite(bytes + "xx");
    CHECK_THROWS_AS(read_checkpoint(dir / "x.tcv"), std::runtime_error);
    rewrite("TCV2" + bytes.substr(4));
    CHECK_THROWS_AS(read_checkpoint(dir / "x.tcv"), std::runtime_error);
    CHECK_THROWS_AS(read_checkpoint(dir / "missing.tcv"), std::runtime_error);
}
