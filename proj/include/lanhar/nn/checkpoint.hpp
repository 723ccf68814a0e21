#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "lanhar/nn/tensor.hpp"

namespace lanhar::nn {

// Weight archives: an 8-byte little-endian header length, a JSON header
// mapping tensor name -> {dtype, shape, data_offsets}, then raw row-major
// float64 payload. Metadata strings ride in the "__metadata__" header entry.

void write_checkpoint(const std::filesystem::path& path,
                      const std::vector<const Parameter*>& params,
                      const std::map<std::string, std::string>& metadata);

struct CheckpointData {
  std::map<std::string, Matrix> tensors;
  std::map<std::string, std::string> metadata;
};

CheckpointData read_checkpoint(const std::filesystem::path& path);

// Strict load: every parameter must be present with a matching shape, and the
// archive must not contain unknown tensors.
void load_parameters(const CheckpointData& data, const std::vector<Parameter*>& params);

// Identity of a weight archive, used to pair encoders with label banks.
std::string checkpoint_id(const std::filesystem::path& path);

// JSON sidecar convention: <archive>.json next to the archive.
void write_sidecar(const std::filesystem::path& archive_path, const nlohmann::ordered_json& doc);
nlohmann::json read_sidecar(const std::filesystem::path& archive_path);

}  // namespace lanhar::nn
