#include <doctest.h>

#include <map>
#include <set>

#include "oracles.hpp"
#include "trackcentre/constraints.hpp"

using namespace trackcentre;

namespace {

TrackSet spans(const std::vector<std::pair<std::int64_t, std::int64_t>>& s) {
    TrackSet set;
    set.dim = 1;
    for (std::size_t i = 0; i < s.size(); ++i) {
        EmbeddingTrack t;
        t.track_id = static_cast<std::int64_t>(i);
        t.start_frame = s[i].first;
        t.end_frame = s[i].second;
        t.embeddings = Matrix(static_cast<std::size_t>(s[i].second - s[i].first + 1), 1);
        set.tracks.push_back(t);
    }
    return set;
}

}  // namespace

TEST_CASE("span intersection examples") {
    const TrackSet set = spans({{0, 10}, {5, 12}, {13, 20}, {0, 4}, {5, 9}});
    const auto n = derive_cannot_links(set);
    CHECK(n(0, 1));
    CHECK(n(1, 0));
    CHECK_FALSE(n(1, 2));
    CHECK_FALSE(n(3, 4));
    CHECK(n(0, 3));
    CHECK(n(0, 4));
    CHECK(n.partners(0) == std::vector<std::size_t>{1, 3, 4});
    CHECK(n.count_links() == 4);
}

TEST_CASE("derived links equal the brute-force frame oracle") {
    std::mt19937_64 rng(99);
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t m = std::uniform_int_distribution<std::size_t>(1, 200)(rng);
        std::uniform_int_distribution<std::int64_t> start(0, 300), len(1, 40);
        std::vector<std::pair<std::int64_t, std::int64_t>> s;
        for (std::size_t i = 0; i < m; ++i) {
            const auto a = start(rng);
            s.emplace_back(a, a + len(rng) - 1);
        }
        const TrackSet set = spans(s);
        const auto n = derive_cannot_links(set);
        REQUIRE(n.size() == m);
        for (std::size_t a = 0; a < m; ++a) {
            CHECK_FALSE(n(a, a));
            for (std::size_t b = 0; b < m; ++b) {
                CHECK(n(a, b) == n(b, a));
                if (a != b) CHECK(n(a, b) == oracles::share_a_frame(set.tracks[a], set.tracks[b]));
            }
        }
    }
}

TEST_CASE("matrix rejects self links") {
    CannotLinkMatrix n(3);
    CHECK_THROWS_AS(n.link(1, 1), std::invalid_argument);
    CHECK_THROWS_AS(n.link(1, 3), std::out_of_range);
    CHECK_FALSE(n.any());
    n.link(0, 2);
    CHECK(n.any());
    CHECK(n(2, 0));
}

TEST_CASE("sample_pairs examples") {
    std::mt19937_64 rng(1);
    SUBCASE("length-2 track has one positive pair") {
        const TrackSet set = spans({{0, 1}});
        const auto pairs = sample_pairs(set, derive_cannot_links(set), rng, 1, 0);
        REQUIRE(pairs.size() == 1);
        CHECK(pairs[0] == ConstraintPair{0, 0, 0, 1, 1});
    }
    SUBCASE("no cannot links") {
        const TrackSet set = spans({{0, 3}, {5, 9}});
        CHECK_THROWS_WITH_AS(sample_pairs(set, derive_cannot_links(set), rng, 0, 5), "no cannot-links available",
                             std::invalid_argument);
        CHECK_NOTHROW(sample_pairs(set, derive_cannot_links(set), rng, 3, 0));
    }
    SUBCASE("no must links") {
        const TrackSet set = spans({{0, 0}, {0, 0}});
        CHECK_THROWS_AS(sample_pairs(set, derive_cannot_links(set), rng, 1, 0), std::invalid_argument);
        CHECK(sample_pairs(set, derive_cannot_links(set), rng, 0, 2).size() == 2);
    }
}

TEST_CASE("sampled pairs cover exactly the enumerated support, uniformly") {
    // Track 0 overlaps 1; track 2 stands alone.
    const TrackSet set = spans({{0, 2}, {1, 2}, {10, 13}});
    const auto links = derive_cannot_links(set);
    std::set<ConstraintPair> pos_support, neg_support;
    for (std::size_t a = 0; a < set.size(); ++a)
        for (std::size_t i = 0; i < set.tracks[a].length(); ++i)
            for (std::size_t j = i + 1; j < set.tracks[a].length(); ++j) pos_support.insert({a, i, a, j, 1});
    for (std::size_t a = 0; a < set.size(); ++a)
        for (std::size_t b = a + 1; b < set.size(); ++b)
            if (links(a, b))
                for (std::size_t i = 0; i < set.tracks[a].length(); ++i)
                    for (std::size_t j = 0; j < set.tracks[b].length(); ++j) neg_support.insert({a, i, b, j, 0});
    REQUIRE(pos_support.size() == 3 + 1 + 6);
    REQUIRE(neg_support.size() == 6);

    std::mt19937_64 rng(2024);
    const std::size_t draws = 100000;
    const auto pairs = sample_pairs(set, links, rng, draws, draws);
    std::map<ConstraintPair, std::size_t> pos_count, neg_count;
    for (std::size_t s = 0; s < pairs.size(); ++s) (s < draws ? pos_count : neg_count)[pairs[s]]++;
    CHECK(pos_count.size() == pos_support.size());
    CHECK(neg_count.size() == neg_support.size());
    for (const auto& [p, c] : pos_count) {
        CHECK(pos_support.count(p) == 1);
        CHECK(static_cast<double>(c) / draws == doctest::Approx(1.0 / 10).epsilon(0.05));
    }
    for (const auto& [p, c] : neg_count) {
        CHECK(neg_support.count(p) == 1);
        CHECK(static_cast<double>(c) / draws == doctest::Approx(1.0 / 6).epsilon(0.05));
    }
}

TEST_CASE("sampled pairs respect the pair invariants") {
    TrackSet set = spans({{0, 9}, {5, 7}, {8, 30}, {40, 41}, {41, 44}});
    const auto links = derive_cannot_links(set);
    std::mt19937_64 rng(8);
    for (const auto& p : sample_pairs(set, links, rng, 5000, 5000)) {
        if (p.y == 1) {
            CHECK(p.track_a == p.track_b);
            CHECK(p.frame_a != p.frame_b);
        } else {
            CHECK(links(p.track_a, p.track_b));
        }
        CHECK(p.frame_a < set.tracks[p.track_a].length());
        CHECK(p.frame_b < set.tracks[p.track_b].length());
    }
}
