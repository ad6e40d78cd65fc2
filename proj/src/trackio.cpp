#include "trackcentre/trackio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace trackcentre {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kManifestSuffix = ".manifest.json";
constexpr std::string_view kBlobSuffix = ".emb";

std::string base_string(const fs::path& base) {
    std::string s = base.string();
    if (s.size() > kManifestSuffix.size() && s.ends_with(kManifestSuffix))
        s.resize(s.size() - kManifestSuffix.size());
    else if (s.size() > kBlobSuffix.size() && s.ends_with(kBlobSuffix))
        s.resize(s.size() - kBlobSuffix.size());
    return s;
}

std::uint32_t to_le(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::big) return __builtin_bswap32(v);
    return v;
}

double round_to_float(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

fs::path manifest_path(const fs::path& base) { return base_string(base) + std::string(kManifestSuffix); }
fs::path blob_path(const fs::path& base) { return base_string(base) + std::string(kBlobSuffix); }

bool TrackSet::has_labels() const {
    return !tracks.empty() &&
           std::all_of(tracks.begin(), tracks.end(), [](const EmbeddingTrack& t) { return t.label.has_value(); });
}

void validate(const TrackSet& set) {
    if (set.tracks.empty()) throw std::invalid_argument("empty trackset");
    if (set.dim == 0) throw std::invalid_argument("trackset dim must be >= 1");
    std::set<std::int64_t> ids;
    for (const auto& t : set.tracks) {
        if (t.track_id < 0) throw std::invalid_argument("negative track id " + std::to_string(t.track_id));
        if (!ids.insert(t.track_id).second)
            throw std::invalid_argument("duplicate track id " + std::to_string(t.track_id));
        if (t.end_frame < t.start_frame) throw std::invalid_argument("track end_frame before start_frame");
        const auto n = static_cast<std::size_t>(t.end_frame - t.start_frame + 1);
        if (t.embeddings.rows != n)
            throw std::invalid_argument("track " + std::to_string(t.track_id) + ": frame span does not match frame count");
        if (t.embeddings.cols != set.dim)
            throw std::invalid_argument("dimension mismatch in track " + std::to_string(t.track_id));
        for (double v : t.embeddings.data)
            if (!std::isfinite(v))
                throw std::invalid_argument("non-finite value in track " + std::to_string(t.track_id));
        for (std::size_t f : t.distractor_frames)
            if (f >= n) throw std::invalid_argument("distractor frame out of range");
    }
}

void save_trackset(const TrackSet& set, const fs::path& base) {
    validate(set);
    json manifest;
    manifest["video_id"] = set.video_id;
    manifest["dim"] = set.dim;
    json tracks = json::array();
    std::size_t offset = 0;
    for (const auto& t : set.tracks) {
        json jt;
        jt["track_id"] = t.track_id;
        jt["start_frame"] = t.start_frame;
        jt["end_frame"] = t.end_frame;
        jt["label"] = t.label ? json(*t.label) : json(nullptr);
        jt["offset"] = offset;
        jt["count"] = t.length();
        if (!t.distractor_frames.empty()) jt["distractors"] = t.distractor_frames;
        tracks.push_back(std::move(jt));
        offset += t.length();
    }
    manifest["tracks"] = std::move(tracks);

    std::ofstream mf(manifest_path(base), std::ios::binary | std::ios::trunc);
    if (!mf) throw std::runtime_error("cannot write " + manifest_path(base).string());
    mf << manifest.dump(2) << '\n';
    if (!mf) throw std::runtime_error("failed writing " + manifest_path(base).string());

    std::vector<std::uint32_t> words;
    words.reserve(offset * set.dim);
    for (const auto& t : set.tracks)
        for (double v : t.embeddings.data) {
            const float f = static_cast<float>(v);
            words.push_back(to_le(std::bit_cast<std::uint32_t>(f)));
        }
    std::ofstream bf(blob_path(base), std::ios::binary | std::ios::trunc);
    if (!bf) throw std::runtime_error("cannot write " + blob_path(base).string());
    bf.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
    if (!bf) throw std::runtime_error("failed writing " + blob_path(base).string());
}

TrackSet load_trackset(const fs::path& base) {
    const auto mpath = manifest_path(base);
    const auto bpath = blob_path(base);
    std::ifstream mf(mpath);
    if (!mf) throw std::runtime_error("missing manifest " + mpath.string());
    json manifest;
    try {
        manifest = json::parse(mf);
    } catch (const json::exception& e) {
        throw std::runtime_error("corrupt manifest " + mpath.string() + ": " + e.what());
    }
    std::ifstream bf(bpath, std::ios::binary);
    if (!bf) throw std::runtime_error("missing embedding blob " + bpath.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());
    if (bytes.size() % 4 != 0) throw std::runtime_error("corrupt embedding blob: size not a multiple of 4");
    const std::size_t values = bytes.size() / 4;

    TrackSet set;
    try {
        set.video_id = manifest.at("video_id").get<std::string>();
        set.dim = manifest.at("dim").get<std::size_t>();
        if (set.dim == 0) throw std::runtime_error("manifest dim must be >= 1");
        std::size_t declared = 0;
        for (const auto& jt : manifest.at("tracks")) declared += jt.at("count").get<std::size_t>() * set.dim;
        if (declared != values)
            throw std::runtime_error("dimension mismatch: manifest declares " + std::to_string(declared) +
                                     " values, blob holds " + std::to_string(values));
        std::set<std::int64_t> ids;
        for (const auto& jt : manifest.at("tracks")) {
            EmbeddingTrack t;
            t.track_id = jt.at("track_id").get<std::int64_t>();
            if (!ids.insert(t.track_id).second)
                throw std::runtime_error("duplicate track id " + std::to_string(t.track_id));
            t.start_frame = jt.at("start_frame").get<std::int64_t>();
            t.end_frame = jt.at("end_frame").get<std::int64_t>();
            if (jt.contains("label") && !jt.at("label").is_null()) t.label = jt.at("label").get<std::int64_t>();
            const auto offset = jt.at("offset").get<std::size_t>();
            const auto count = jt.at("count").get<std::size_t>();
            if (count == 0 || t.end_frame - t.start_frame + 1 != static_cast<std::int64_t>(count))
                throw std::runtime_error("track " + std::to_string(t.track_id) + ": count does not match frame span");
            if ((offset + count) * set.dim > values)
                throw std::runtime_error("track " + std::to_string(t.track_id) + ": offset out of range");
            if (jt.contains("distractors")) t.distractor_frames = jt.at("distractors").get<std::vector<std::size_t>>();
            t.embeddings = Matrix(count, set.dim);
            for (std::size_t i = 0; i < count * set.dim; ++i) {
                std::uint32_t w;
                std::memcpy(&w, bytes.data() + (offset * set.dim + i) * 4, 4);
                const float f = std::bit_cast<float>(to_le(w));
                if (!std::isfinite(f))
                    throw std::runtime_error("non-finite value in track " + std::to_string(t.track_id));
                t.embeddings.data[i] = f;
            }
            set.tracks.push_back(std::move(t));
        }
    } catch (const json::exception& e) {
        throw std::runtime_error("corrupt manifest " + mpath.string() + ": " + e.what());
    }
    try {
        validate(set);
    } catch (const std::invalid_argument& e) {
        throw std::runtime_error(e.what());
    }
    return set;
}

TrackSet generate_synthetic(const SyntheticSpec& spec) {
    if (spec.identities < 1) throw std::invalid_argument("synthetic spec: identities must be >= 1");
    if (spec.tracks_per_identity < 1) throw std::invalid_argument("synthetic spec: tracks_per_identity must be >= 1");
    if (spec.dim < 1) throw std::invalid_argument("synthetic spec: dim must be >= 1");
    if (spec.min_length < 1 || spec.max_length < spec.min_length)
        throw std::invalid_argument("synthetic spec: need 1 <= min_length <= max_length");
    if (!(spec.noise >= 0) || !(spec.distractor_noise >= 0))
        throw std::invalid_argument("synthetic spec: noise scales must be >= 0");
    if (!(spec.distractor_prob >= 0 && spec.distractor_prob <= 1) ||
        !(spec.cooccurrence >= 0 && spec.cooccurrence <= 1))
        throw std::invalid_argument("synthetic spec: probabilities must lie in [0, 1]");

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const std::size_t k = spec.identities, d = spec.dim;
    const std::size_t m = k * spec.tracks_per_identity;

    Matrix centroids(k, d);
    for (std::size_t c = 0; c < k; ++c) {
        double norm = 0.0;
        do {
            norm = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                centroids(c, j) = gauss(rng);
                norm += centroids(c, j) * centroids(c, j);
            }
        } while (norm == 0.0);
        norm = std::sqrt(norm);
        for (std::size_t j = 0; j < d; ++j) centroids(c, j) = round_to_float(centroids(c, j) / norm);
    }

    std::vector<std::int64_t> labels(m);
    for (std::size_t i = 0; i < m; ++i) labels[i] = static_cast<std::int64_t>(i / spec.tracks_per_identity);
    std::shuffle(labels.begin(), labels.end(), rng);
    std::uniform_int_distribution<std::size_t> len_dist(spec.min_length, spec.max_length);
    std::vector<std::size_t> lengths(m);
    for (auto& n : lengths) n = len_dist(rng);

    // Scenes: groups of tracks with pairwise distinct identities that share
    // at least one frame. Everything else is placed alone on the timeline.
    std::vector<std::size_t> order(m);
    for (std::size_t i = 0; i < m; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    const auto co_count = static_cast<std::size_t>(std::llround(spec.cooccurrence * static_cast<double>(m)));
    std::vector<std::size_t> pool(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(co_count));
    std::vector<std::vector<std::size_t>> blocks;
    for (std::size_t i = co_count; i < m; ++i) blocks.push_back({order[i]});
    while (!pool.empty()) {
        const std::size_t cap = std::min(k, pool.size());
        std::size_t want = 1;
        if (cap >= 2) want = std::uniform_int_distribution<std::size_t>(2, cap)(rng);
        std::vector<std::size_t> scene{pool.front()};
        std::vector<std::size_t> rest;
        for (std::size_t i = 1; i < pool.size(); ++i) {
            const std::size_t t = pool[i];
            const bool clash = std::any_of(scene.begin(), scene.end(), [&](std::size_t s) { return labels[s] == labels[t]; });
            if (scene.size() < want && !clash)
                scene.push_back(t);
            else
                rest.push_back(t);
        }
        blocks.push_back(std::move(scene));
        pool = std::move(rest);
    }
    std::shuffle(blocks.begin(), blocks.end(), rng);

    std::vector<std::int64_t> starts(m);
    std::int64_t cursor = 0;
    for (const auto& block : blocks) {
        std::size_t longest = 0;
        for (std::size_t t : block) longest = std::max(longest, lengths[t]);
        const std::int64_t anchor = cursor + static_cast<std::int64_t>(longest) - 1;
        std::int64_t block_end = cursor;
        for (std::size_t t : block) {
            std::int64_t start = cursor;
            if (block.size() > 1) {
                const auto back = std::uniform_int_distribution<std::size_t>(0, lengths[t] - 1)(rng);
                start = anchor - static_cast<std::int64_t>(back);
            }
            starts[t] = start;
            block_end = std::max(block_end, start + static_cast<std::int64_t>(lengths[t]) - 1);
        }
        cursor = block_end + 2;
    }

    std::vector<std::size_t> by_time(m);
    for (std::size_t i = 0; i < m; ++i) by_time[i] = i;
    std::stable_sort(by_time.begin(), by_time.end(), [&](std::size_t a, std::size_t b) { return starts[a] < starts[b]; });

    std::bernoulli_distribution is_distractor(spec.distractor_prob);
    TrackSet set;
    set.video_id = spec.video_id;
    set.dim = d;
    set.tracks.reserve(m);
    for (std::size_t idx = 0; idx < m; ++idx) {
        const std::size_t src = by_time[idx];
        EmbeddingTrack t;
        t.track_id = static_cast<std::int64_t>(idx);
        t.start_frame = starts[src];
        t.end_frame = starts[src] + static_cast<std::int64_t>(lengths[src]) - 1;
        t.label = labels[src];
        t.embeddings = Matrix(lengths[src], d);
        const auto c = static_cast<std::size_t>(labels[src]);
        for (std::size_t f = 0; f < lengths[src]; ++f) {
            const bool distract = is_distractor(rng);
            if (distract) t.distractor_frames.push_back(f);
            const double scale = distract ? spec.distractor_noise : spec.noise;
            for (std::size_t j = 0; j < d; ++j)
                t.embeddings(f, j) = round_to_float(centroids(c, j) + scale * gauss(rng));
        }
        set.tracks.push_back(std::move(t));
    }
    return set;
}

TrackSet l2_normalised(TrackSet set) {
    for (auto& t : set.tracks)
        for (std::size_t f = 0; f < t.length(); ++f) {
            auto row = t.embeddings.row(f);
            double s = 0.0;
            for (double v : row) s += v * v;
            if (s == 0.0) continue;
            const double inv = 1.0 / std::sqrt(s);
            for (double& v : row) v *= inv;
        }
    return set;
}

}  // namespace trackcentre
