#pragma once

#include <filesystem>

#include "pvd/fields.hpp"

namespace pvd {

/// Binary container: 8-byte magic, u32 version, u64 header length, JSON header
/// (arch, config, feature_dim, param_count, seed, segments), then the parameters as
/// little-endian float32. Writes go through a temporary file and a rename.
void save_checkpoint(const std::filesystem::path& path, const FieldPair& field);

/// Rebuilds the model from the header and checks it against the payload. Malformed files
/// raise Parse; a missing file raises Io.
FieldPair load_checkpoint(const std::filesystem::path& path);

nlohmann::json checkpoint_header(const FieldPair& field);

}  // namespace pvd
