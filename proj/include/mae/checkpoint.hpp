// Versioned binary checkpoints: magic + config header + named parameter
// blobs in fixed order, little-endian float32.
#pragma once

#include <string>

#include "mae/model.hpp"
#include "mae/scoring.hpp"

namespace mae {

void save_base(const std::string& path, const model::BaseParams& base);
model::BaseParams load_base(const std::string& path);

void save_adapter(const std::string& path, const model::AdapterParams& adapter,
                  const model::ModelConfig& cfg);
model::AdapterParams load_adapter(const std::string& path, const model::ModelConfig& cfg);

void save_embeddings(const std::string& path, const EmbeddingTable& table);
EmbeddingTable load_embeddings(const std::string& path);

// Checksum of a file's bytes, used in run manifests.
uint64_t file_checksum(const std::string& path);

}  // namespace mae
