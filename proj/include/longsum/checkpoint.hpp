// SPDX-License-Identifier: Apache-2.0
//
// Binary container: the 8-byte magic "LSCKPT01", a little-endian uint64
// header length, a JSON header (metadata plus the name/shape table of every
// array, in order), then the arrays as raw little-endian doubles.
#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "longsum/optimizer.hpp"
#include "longsum/parameters.hpp"
#include "longsum/tensor.hpp"

namespace longsum {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedArray {
  std::string name;
  Tensor tensor;
};

void write_container(const std::filesystem::path& path, const nlohmann::json& meta,
                     const std::vector<std::pair<std::string, const Tensor*>>& arrays);

struct Container {
  nlohmann::json meta;
  std::vector<NamedArray> arrays;
};
Container read_container(const std::filesystem::path& path);

/// Model checkpoint: meta holds {"kind": "model", "config": ...}.
void save_parameters(const std::filesystem::path& path, const ModelConfig& config, const Parameters& params);

struct LoadedModel {
  ModelConfig config;
  Parameters params;
};
/// Validates every array's presence and shape against the stored config.
LoadedModel load_parameters(const std::filesystem::path& path);

/// Copies arrays from an external container into `params` wherever the name
/// matches. A matching name with the wrong shape is an error; unknown names
/// are skipped. Returns the number of arrays imported.
std::size_t import_weights(const std::filesystem::path& path, Parameters& params);

void save_optimizer_state(const std::filesystem::path& path, const Parameters& params, const AdafactorState& state);
/// `params` supplies the expected layout.
AdafactorState load_optimizer_state(const std::filesystem::path& path, const Parameters& params);

}  // namespace longsum
