#include "commands.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

#include <CLI11.hpp>

#include "trackcentre/kernels.hpp"

namespace trackcentre::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

const std::map<std::string, Linkage> kLinkages{
    {"single", Linkage::Single}, {"complete", Linkage::Complete}, {"average", Linkage::Average}};
const std::map<std::string, CheckpointPolicy> kPolicies{
    {"final", CheckpointPolicy::Final}, {"best-sdbw", CheckpointPolicy::BestSdbw}};
const std::map<std::string, ClipSampler> kSamplers{
    {"consecutive", ClipSampler::Consecutive}, {"uniform", ClipSampler::Uniform}};

template <class E>
std::string name_of(const std::map<std::string, E>& table, E value) {
    for (const auto& [name, v] : table)
        if (v == value) return name;
    throw std::logic_error("unnamed enum value");
}

template <class E>
E parse_name(const std::map<std::string, E>& table, const std::string& name, const char* what) {
    const auto it = table.find(name);
    if (it == table.end()) throw std::runtime_error(std::string("unknown ") + what + " '" + name + "'");
    return it->second;
}

template <class E>
std::vector<std::string> names(const std::map<std::string, E>& table) {
    std::vector<std::string> out;
    for (const auto& [name, v] : table) out.push_back(name);
    return out;
}

// Flags that override a manifest only when given on the command line.
class Overrides {
public:
    template <class T, class Apply>
    CLI::Option* add(CLI::App* app, const std::string& flag, const std::string& help, Apply apply) {
        auto value = std::make_shared<T>();
        CLI::Option* opt = app->add_option(flag, *value, help);
        entries_.push_back({opt, [value, apply](RunManifest& m) { apply(m, *value); }});
        return opt;
    }

    template <class Apply>
    CLI::Option* add_flag(CLI::App* app, const std::string& flag, const std::string& help, Apply apply) {
        CLI::Option* opt = app->add_flag(flag, help);
        entries_.push_back({opt, [apply](RunManifest& m) { apply(m); }});
        return opt;
    }

    void apply(RunManifest& m) const {
        for (const auto& e : entries_)
            if (e.opt->count() > 0) e.fn(m);
    }

private:
    struct Entry {
        CLI::Option* opt;
        std::function<void(RunManifest&)> fn;
    };
    std::vector<Entry> entries_;
};

void add_training_flags(CLI::App* app, Overrides& o) {
    o.add<std::uint64_t>(app, "--seed", "RNG seed", [](RunManifest& m, std::uint64_t v) { m.train.seed = v; });
    // Warm-up keeps its default share of the run unless --warmup is also given.
    o.add<std::size_t>(app, "--epochs", "training epochs", [](RunManifest& m, std::size_t v) {
        m.train.epochs = v;
        m.train.warmup_epochs = std::max<std::size_t>(1, v * 4 / 9);
    })->check(CLI::Range(2, 1 << 30));
    o.add<std::size_t>(app, "--warmup", "warm-up epochs", [](RunManifest& m, std::size_t v) { m.train.warmup_epochs = v; });
    o.add<double>(app, "--max-lr", "peak learning rate", [](RunManifest& m, double v) { m.train.max_lr = v; });
    o.add<double>(app, "--momentum", "SGD momentum", [](RunManifest& m, double v) { m.train.momentum = v; });
    o.add<double>(app, "--weight-decay", "weight decay on projection matrices",
                  [](RunManifest& m, double v) { m.train.weight_decay = v; });
    o.add<std::size_t>(app, "--batch", "batch size", [](RunManifest& m, std::size_t v) { m.train.batch_size = v; });
    o.add<std::size_t>(app, "--clip-cap", "maximum clip length", [](RunManifest& m, std::size_t v) { m.train.clip_cap = v; });
    o.add<std::size_t>(app, "--attract-clips", "attract clips per track per epoch",
                       [](RunManifest& m, std::size_t v) { m.train.attract_clips = v; });
    o.add<std::size_t>(app, "--repel-clips", "repel clips per track per epoch",
                       [](RunManifest& m, std::size_t v) { m.train.repel_clips = v; });
    o.add<double>(app, "--margin", "repel margin", [](RunManifest& m, double v) { m.train.margin = v; });
    o.add<double>(app, "--centre-lr-factor", "centre rate as a multiple of the current learning rate",
                  [](RunManifest& m, double v) { m.train.centre_lr_factor = v; });
    o.add<std::size_t>(app, "--recompute-every", "epochs between full centre recomputes",
                       [](RunManifest& m, std::size_t v) { m.train.recompute_every = v; });
    o.add<std::string>(app, "--policy", "checkpoint policy",
                       [](RunManifest& m, const std::string& v) { m.train.policy = parse_name(kPolicies, v, "policy"); })
        ->check(CLI::IsMember(names(kPolicies)));
    o.add<std::string>(app, "--sampler", "clip sampler",
                       [](RunManifest& m, const std::string& v) { m.train.sampler = parse_name(kSamplers, v, "sampler"); })
        ->check(CLI::IsMember(names(kSamplers)));
    o.add<std::size_t>(app, "--selection-every", "epochs between S-Dbw checks",
                       [](RunManifest& m, std::size_t v) { m.train.selection_every = v; });
    o.add<std::size_t>(app, "--selection-k", "known K for the S-Dbw partition (0 uses the threshold)",
                       [](RunManifest& m, std::size_t v) { m.train.selection_k = v; });
    o.add<double>(app, "--selection-threshold", "HAC threshold for the S-Dbw partition",
                  [](RunManifest& m, double v) { m.train.selection_threshold = v; });
    o.add<std::size_t>(app, "--layers", "encoder layers", [](RunManifest& m, std::size_t v) { m.encoder.layers = v; });
    o.add<std::size_t>(app, "--heads", "attention heads", [](RunManifest& m, std::size_t v) { m.encoder.heads = v; });
    o.add<std::size_t>(app, "--ffn", "feed-forward width (0 = 4d)", [](RunManifest& m, std::size_t v) { m.encoder.mlp_hidden = v; });
    o.add<std::size_t>(app, "--out-dim", "representation size of the training head",
                       [](RunManifest& m, std::size_t v) { m.encoder.head_out_dim = v; });
    o.add_flag(app, "--pe", "enable learned positional embeddings",
               [](RunManifest& m) { m.encoder.use_positional_embedding = true; });
    o.add<std::size_t>(app, "--max-positions", "positional table size",
                       [](RunManifest& m, std::size_t v) { m.encoder.max_positions = v; });
    o.add<std::size_t>(app, "--mlp-hidden", "hidden width of the siamese MLP (0 = default)",
                       [](RunManifest& m, std::size_t v) { m.mlp_hidden = v; });
    o.add_flag(app, "--normalise", "L2-normalise every frame embedding", [](RunManifest& m) { m.normalise = true; });
}

fs::path track_base(const std::string& path) {
    const std::string suffix = ".manifest.json";
    if (path.size() > suffix.size() && path.compare(path.size() - suffix.size(), suffix.size(), suffix) == 0)
        return path.substr(0, path.size() - suffix.size());
    return path;
}

TrackSet load_tracks(const std::string& path, bool normalise) {
    TrackSet set = load_trackset(track_base(path));
    return normalise ? l2_normalised(std::move(set)) : set;
}

std::ofstream open_output(const fs::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    return f;
}

// Writes to <dir>/<file> when a directory was given, else to the console.
template <class Emit>
void emit(const std::string& dir, const std::string& file, std::ostream& console, Emit&& body) {
    if (dir.empty()) {
        body(console);
        return;
    }
    fs::create_directories(dir);
    std::ofstream f = open_output(fs::path(dir) / file);
    body(f);
}

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(12);
    s << v;
    return s.str();
}

struct StopFlags {
    std::size_t known_k = 0;
    double threshold = 0.0;
    CLI::Option* k_opt = nullptr;
    CLI::Option* t_opt = nullptr;
    std::string linkage = "average";

    void add(CLI::App* app) {
        k_opt = app->add_option("--known-k", known_k, "stop HAC at exactly this many clusters")->check(CLI::PositiveNumber);
        t_opt = app->add_option("--threshold", threshold, "stop HAC once the next merge is above this height")
                    ->check(CLI::NonNegativeNumber);
        k_opt->excludes(t_opt);
        app->add_option("--linkage", linkage, "HAC linkage")->check(CLI::IsMember(names(kLinkages)));
    }
    bool given() const { return k_opt->count() + t_opt->count() > 0; }
    StopRule rule() const {
        if (k_opt->count() > 0) return KnownK{known_k};
        if (t_opt->count() > 0) return Threshold{threshold};
        throw UsageError("one of --known-k or --threshold is required");
    }
    Linkage link() const { return kLinkages.at(linkage); }
};

struct Trained {
    std::optional<EncoderParams> encoder;
    std::optional<SiameseMlpParams> mlp;
    std::vector<EpochRecord> history;
    std::size_t selected_epoch = 0;
    std::vector<std::string> warnings;
};

Trained run_training(const RunManifest& m, const TrackSet& set) {
    EncoderConfig enc = m.encoder;
    if (enc.model_dim != set.dim)
        throw std::runtime_error("dimension mismatch: encoder width " + std::to_string(enc.model_dim) +
                                 ", tracks have " + std::to_string(set.dim));
    const CannotLinkMatrix links = derive_cannot_links(set);
    Trained t;
    if (m.method == "vc") {
        TrainResult r = train(set, links, enc, m.train);
        t.encoder = std::move(r.params);
        t.history = std::move(r.history);
        t.selected_epoch = r.selected_epoch;
        t.warnings = std::move(r.warnings);
    } else if (m.method == "ct" || m.method == "tsiam") {
        const auto model = m.method == "ct" ? PairwiseModel::Transformer : PairwiseModel::Mlp;
        PairwiseResult r = train_pairwise(model, set, links, enc, m.train, m.mlp_hidden);
        t.encoder = std::move(r.transformer);
        t.mlp = std::move(r.mlp);
        t.history = std::move(r.history);
        t.selected_epoch = t.history.size();
        t.warnings = std::move(r.warnings);
    } else if (m.method == "avg") {
        throw UsageError("avg requires no training");
    } else {
        throw UsageError("unknown method '" + m.method + "'");
    }
    return t;
}

Matrix representations(const Trained& t, const TrackSet& set) {
    if (t.encoder) return eval_representations(*t.encoder, set);
    if (t.mlp) return mlp_representations(*t.mlp, set);
    return average_representations(set);
}

Checkpoint to_checkpoint(const Trained& t, const std::string& method) {
    if (t.mlp) return mlp_checkpoint(*t.mlp);
    return encoder_checkpoint(*t.encoder, method);
}

Trained from_checkpoint(const Checkpoint& c, const TrackSet& set) {
    Trained t;
    const std::string kind = c.header.value("kind", "");
    std::size_t dim = 0;
    if (kind == "tsiam") {
        t.mlp = mlp_from_checkpoint(c);
        dim = t.mlp->input_dim;
    } else {
        t.encoder = encoder_from_checkpoint(c);
        dim = t.encoder->config.model_dim;
    }
    if (dim != set.dim)
        throw std::runtime_error("dimension mismatch: checkpoint expects " + std::to_string(dim) + ", tracks have " +
                                 std::to_string(set.dim));
    return t;
}

void print_warnings(const std::vector<std::string>& warnings, std::ostream& err) {
    for (const auto& w : warnings) err << "warning: " << w << '\n';
}

// ---- synth

struct SynthArgs {
    SyntheticSpec spec;
    std::string out = ".";
};

void register_synth(CLI::App& app, SynthArgs& a) {
    app.add_option("--out", a.out, "output directory");
    app.add_option("--seed", a.spec.seed, "generator seed");
    app.add_option("--k", a.spec.identities, "number of identities")->check(CLI::PositiveNumber);
    app.add_option("--tracks-per-identity", a.spec.tracks_per_identity)->check(CLI::PositiveNumber);
    app.add_option("--dim", a.spec.dim, "embedding dimension")->check(CLI::PositiveNumber);
    app.add_option("--min-length", a.spec.min_length)->check(CLI::PositiveNumber);
    app.add_option("--max-length", a.spec.max_length)->check(CLI::PositiveNumber);
    app.add_option("--noise", a.spec.noise, "per-frame noise scale")->check(CLI::NonNegativeNumber);
    app.add_option("--distractor-prob", a.spec.distractor_prob)->check(CLI::Range(0.0, 1.0));
    app.add_option("--distractor-noise", a.spec.distractor_noise)->check(CLI::NonNegativeNumber);
    app.add_option("--cooccurrence", a.spec.cooccurrence, "co-occurrence density")->check(CLI::Range(0.0, 1.0));
    app.add_option("--video-id", a.spec.video_id);
}

int cmd_synth(const SynthArgs& a, std::ostream& out) {
    const TrackSet set = generate_synthetic(a.spec);
    fs::create_directories(a.out);
    const fs::path base = fs::path(a.out) / a.spec.video_id;
    save_trackset(set, base);
    out << "wrote " << base.string() << ": M=" << set.size() << " K=" << a.spec.identities << " dim=" << set.dim
        << '\n';
    return 0;
}

// ---- train

int cmd_train(RunManifest m, std::ostream& out, std::ostream& err) {
    if (m.method == "avg") throw UsageError("avg requires no training");
    if (m.tracks.empty()) throw UsageError("--tracks is required");
    if (m.out.empty()) throw UsageError("--out is required");
    const TrackSet set = load_tracks(m.tracks, m.normalise);
    m.encoder.model_dim = set.dim;
    if (m.method != "tsiam") m.encoder.validate();
    m.train.validate();

    fs::create_directories(m.out);
    {
        std::ofstream f = open_output(fs::path(m.out) / "run_manifest.json");
        f << manifest_to_json(m).dump(2) << '\n';
    }
    const Trained t = run_training(m, set);
    print_warnings(t.warnings, err);
    write_checkpoint(to_checkpoint(t, m.method), fs::path(m.out) / "checkpoint.tcv");
    {
        std::ofstream f = open_output(fs::path(m.out) / "history.csv");
        write_history_csv(t.history, f);
    }
    out << "trained " << m.method << " on " << set.size() << " tracks for " << t.history.size() << " epochs";
    if (!t.history.empty()) out << ", final loss " << fmt(t.history.back().mean_loss);
    out << ", kept epoch " << t.selected_epoch << '\n';
    return 0;
}

}  // namespace

// ---- manifest

json manifest_to_json(const RunManifest& m) {
    const TrainConfig& c = m.train;
    return {
        {"method", m.method},
        {"tracks", m.tracks},
        {"out", m.out},
        {"normalise", m.normalise},
        {"mlp_hidden", m.mlp_hidden},
        {"encoder", config_to_json(m.encoder)},
        {"train",
         {{"epochs", c.epochs},
          {"warmup_epochs", c.warmup_epochs},
          {"max_lr", c.max_lr},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size},
          {"clip_cap", c.clip_cap},
          {"attract_clips", c.attract_clips},
          {"repel_clips", c.repel_clips},
          {"margin", c.margin},
          {"centre_lr_factor", c.centre_lr_factor},
          {"recompute_every", c.recompute_every},
          {"seed", c.seed},
          {"policy", name_of(kPolicies, c.policy)},
          {"sampler", name_of(kSamplers, c.sampler)},
          {"selection_every", c.selection_every},
          {"selection_k", c.selection_k},
          {"selection_threshold", c.selection_threshold},
          {"selection_linkage", name_of(kLinkages, c.selection_linkage)}}},
    };
}

RunManifest manifest_from_json(const json& j) {
    RunManifest m;
    m.method = j.at("method").get<std::string>();
    m.tracks = j.at("tracks").get<std::string>();
    m.out = j.value("out", "");
    m.normalise = j.value("normalise", false);
    m.mlp_hidden = j.value("mlp_hidden", std::size_t{0});
    m.encoder = config_from_json(j.at("encoder"));
    const json& t = j.at("train");
    TrainConfig& c = m.train;
    c.epochs = t.at("epochs");
    c.warmup_epochs = t.at("warmup_epochs");
    c.max_lr = t.at("max_lr");
    c.momentum = t.at("momentum");
    c.weight_decay = t.at("weight_decay");
    c.batch_size = t.at("batch_size");
    c.clip_cap = t.at("clip_cap");
    c.attract_clips = t.at("attract_clips");
    c.repel_clips = t.at("repel_clips");
    c.margin = t.at("margin");
    c.centre_lr_factor = t.at("centre_lr_factor");
    c.recompute_every = t.at("recompute_every");
    c.seed = t.at("seed");
    c.policy = parse_name(kPolicies, t.at("policy").get<std::string>(), "policy");
    c.sampler = parse_name(kSamplers, t.at("sampler").get<std::string>(), "sampler");
    c.selection_every = t.at("selection_every");
    c.selection_k = t.at("selection_k");
    c.selection_threshold = t.at("selection_threshold");
    c.selection_linkage = parse_name(kLinkages, t.at("selection_linkage").get<std::string>(), "linkage");
    return m;
}

// ---- metrics

MetricsRow score_partition(const TrackSet& set, const std::string& method, const Matrix& reps, Linkage linkage,
                           const StopRule& stop) {
    const ClusterAssignment part = hac(reps, linkage, stop);
    MetricsRow row;
    row.video_id = set.video_id;
    row.method = method;
    row.k_pred = part.k;
    if (set.has_labels()) {
        std::vector<std::int64_t> truth;
        for (const auto& t : set.tracks) truth.push_back(*t.label);
        row.k_true = count_clusters(truth);
        row.nmi = nmi(part.labels, truth);
        row.wcp = wcp(part.labels, truth);
        row.c_dif = c_dif(part.k, *row.k_true);
    }
    if (part.k >= 2) row.sdbw = sdbw(reps, part.labels);
    return row;
}

void write_metrics_row(const MetricsRow& r, std::ostream& out) {
    auto opt = [&](const auto& v) {
        if (v) out << fmt(static_cast<double>(*v));
    };
    out << r.video_id << ',' << r.method << ',' << r.k_pred << ',';
    opt(r.k_true);
    out << ',';
    opt(r.nmi);
    out << ',';
    opt(r.wcp);
    out << ',';
    opt(r.c_dif);
    out << ',';
    opt(r.sdbw);
    out << '\n';
}

// ---- entry point

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    kernels::apply_thread_env();
    CLI::App app{"Video-centralised face-track representation learning and clustering"};
    app.require_subcommand(1);

    SynthArgs synth;
    CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic labelled track set");
    register_synth(*synth_cmd, synth);

    std::string train_tracks, train_out, train_method, manifest_file;
    Overrides train_over;
    CLI::App* train_cmd = app.add_subcommand("train", "train vc, ct or tsiam and write a checkpoint");
    train_cmd->add_option("--tracks", train_tracks, "track container base path");
    train_cmd->add_option("--out", train_out, "output directory");
    train_cmd->add_option("--method", train_method, "method")->check(CLI::IsMember({"vc", "ct", "tsiam", "avg"}));
    train_cmd->add_option("--manifest", manifest_file, "reproduce a recorded run")->check(CLI::ExistingFile);
    add_training_flags(train_cmd, train_over);

    std::string eval_tracks, eval_ckpt, eval_method, eval_out;
    bool eval_norm = false;
    StopFlags eval_stop;
    CLI::App* eval_cmd = app.add_subcommand("eval", "cluster track representations and report metrics");
    eval_cmd->add_option("--tracks", eval_tracks, "track container base path")->required();
    eval_cmd->add_option("--checkpoint", eval_ckpt, "trained checkpoint")->check(CLI::ExistingFile);
    eval_cmd->add_option("--method", eval_method, "method")->check(CLI::IsMember({"vc", "ct", "tsiam", "avg"}));
    eval_cmd->add_option("--out", eval_out, "directory for metrics.csv (default: stdout)");
    eval_cmd->add_flag("--normalise", eval_norm, "L2-normalise every frame embedding");
    eval_stop.add(eval_cmd);

    std::string attn_tracks, attn_ckpt, attn_out;
    bool attn_norm = false;
    CLI::App* attn_cmd = app.add_subcommand("attn", "per-frame class-token attention profile");
    attn_cmd->add_option("--tracks", attn_tracks, "track container base path")->required();
    attn_cmd->add_option("--checkpoint", attn_ckpt, "transformer checkpoint")->required()->check(CLI::ExistingFile);
    attn_cmd->add_option("--out", attn_out, "directory for attention.csv (default: stdout)");
    attn_cmd->add_flag("--normalise", attn_norm, "L2-normalise every frame embedding");

    std::string cmp_tracks, cmp_out;
    Overrides cmp_over;
    StopFlags cmp_stop;
    CLI::App* cmp_cmd = app.add_subcommand("compare", "run avg, tsiam, ct and vc with one seed");
    cmp_cmd->add_option("--tracks", cmp_tracks, "labelled track container base path")->required();
    cmp_cmd->add_option("--out", cmp_out, "directory for compare.csv and per-method artifacts (default: stdout)");
    add_training_flags(cmp_cmd, cmp_over);
    cmp_stop.add(cmp_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*synth_cmd) return cmd_synth(synth, out);

        if (*train_cmd) {
            RunManifest m;
            if (!manifest_file.empty()) {
                std::ifstream f(manifest_file);
                m = manifest_from_json(json::parse(f));
            }
            train_over.apply(m);
            if (!train_tracks.empty()) m.tracks = train_tracks;
            if (!train_out.empty()) m.out = train_out;
            if (!train_method.empty()) m.method = train_method;
            return cmd_train(std::move(m), out, err);
        }

        if (*eval_cmd) {
            const TrackSet set = load_tracks(eval_tracks, eval_norm);
            const StopRule stop = eval_stop.rule();
            Trained t;
            std::string method = eval_method;
            if (eval_method == "avg") {
                if (!eval_ckpt.empty()) throw UsageError("--method avg takes no checkpoint");
            } else {
                if (eval_ckpt.empty()) throw UsageError("--checkpoint is required unless --method avg");
                const Checkpoint c = read_checkpoint(eval_ckpt);
                const std::string kind = c.header.value("kind", "");
                if (!method.empty() && method != kind)
                    throw UsageError("checkpoint holds a " + kind + " model, not " + method);
                method = kind;
                t = from_checkpoint(c, set);
            }
            const MetricsRow row = score_partition(set, method, representations(t, set), eval_stop.link(), stop);
            emit(eval_out, "metrics.csv", out, [&](std::ostream& o) {
                o << kMetricsHeader << '\n';
                write_metrics_row(row, o);
            });
            return 0;
        }

        if (*attn_cmd) {
            const TrackSet set = load_tracks(attn_tracks, attn_norm);
            const Trained t = from_checkpoint(read_checkpoint(attn_ckpt), set);
            if (!t.encoder) throw std::runtime_error("attention profiles need a transformer checkpoint");
            emit(attn_out, "attention.csv", out, [&](std::ostream& o) {
                o << kAttentionHeader << '\n';
                o.precision(17);
                for (const auto& track : set.tracks) {
                    const AttentionProfile prof = attention_profile(*t.encoder, track.embeddings);
                    std::vector<bool> distractor(track.length(), false);
                    for (std::size_t f : track.distractor_frames) distractor.at(f) = true;
                    for (std::size_t f = 0; f < track.length(); ++f)
                        o << track.track_id << ',' << track.start_frame + static_cast<std::int64_t>(f) << ','
                          << prof.scores[f] << ',' << prof.sigma << ',' << (distractor[f] ? 1 : 0) << '\n';
                }
            });
            return 0;
        }

        if (*cmp_cmd) {
            RunManifest m;
            cmp_over.apply(m);
            m.tracks = cmp_tracks;
            const TrackSet set = load_tracks(cmp_tracks, m.normalise);
            if (!set.has_labels()) throw std::runtime_error("compare needs a labelled track set");
            m.encoder.model_dim = set.dim;
            m.encoder.validate();
            m.train.validate();
            StopRule stop;
            if (cmp_stop.given()) {
                stop = cmp_stop.rule();
            } else {
                std::vector<std::int64_t> truth;
                for (const auto& tr : set.tracks) truth.push_back(*tr.label);
                stop = KnownK{count_clusters(truth)};
            }
            std::vector<MetricsRow> rows;
            for (const std::string method : {"avg", "tsiam", "ct", "vc"}) {
                Trained t;
                if (method != "avg") {
                    m.method = method;
                    t = run_training(m, set);
                    print_warnings(t.warnings, err);
                    if (!cmp_out.empty()) {
                        const fs::path dir = fs::path(cmp_out) / method;
                        fs::create_directories(dir);
                        RunManifest rec = m;
                        rec.out = dir.string();
                        std::ofstream(dir / "run_manifest.json") << manifest_to_json(rec).dump(2) << '\n';
                        write_checkpoint(to_checkpoint(t, method), dir / "checkpoint.tcv");
                        std::ofstream h = open_output(dir / "history.csv");
                        write_history_csv(t.history, h);
                    }
                }
                rows.push_back(score_partition(set, method, representations(t, set), cmp_stop.link(), stop));
            }
            emit(cmp_out, "compare.csv", out, [&](std::ostream& o) {
                o << kMetricsHeader << '\n';
                for (const auto& r : rows) write_metrics_row(r, o);
            });
            return 0;
        }
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace trackcentre::cli
