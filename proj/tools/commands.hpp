#pragma once

#include <iosfwd>
#include <optional>
#include <string>

#include <json.hpp>

#include "trackcentre/baselines.hpp"
#include "trackcentre/vcl.hpp"

namespace trackcentre::cli {

// Everything needed to repeat a training run exactly.
struct RunManifest {
    std::string method = "vc";
    std::string tracks;
    std::string out;
    bool normalise = false;
    std::size_t mlp_hidden = 0;  // tsiam only, 0 = default width
    EncoderConfig encoder;
    TrainConfig train;
};

nlohmann::json manifest_to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);

struct MetricsRow {
    std::string video_id;
    std::string method;
    std::size_t k_pred = 0;
    std::optional<std::size_t> k_true;
    std::optional<double> nmi, wcp;
    std::optional<std::size_t> c_dif;
    std::optional<double> sdbw;
};

inline constexpr const char* kMetricsHeader = "video_id,method,k_pred,k_true,nmi,wcp,c_dif,sdbw";
inline constexpr const char* kAttentionHeader = "track_id,frame,score,sigma,distractor";

MetricsRow score_partition(const TrackSet& set, const std::string& method, const Matrix& reps, Linkage linkage,
                           const StopRule& stop);
void write_metrics_row(const MetricsRow& row, std::ostream& out);

// Runs one command line. Returns the process exit code; 2 signals a usage error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace trackcentre::cli
