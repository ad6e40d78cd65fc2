#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "trackcentre/matrix.hpp"

namespace trackcentre {

/// Self-describing parameter container.
///
/// Layout, all integers little-endian:
///   "TCV1" | u64 header_len | header JSON | u64 tensor_count |
///   per tensor: u32 name_len | name | u64 rows | u64 cols | rows*cols f64
struct Checkpoint {
    nlohmann::json header;
    std::vector<std::pair<std::string, Matrix>> tensors;

    const Matrix& tensor(const std::string& name) const;
    bool has(const std::string& name) const;
};

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace trackcentre
