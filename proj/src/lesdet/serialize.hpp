#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lesdet/models.hpp"
#include "lesdet/tensor.hpp"

namespace lesdet {

using Json = nlohmann::json;

/// In-memory form of the checkpoint container described in docs/FORMATS.md:
/// a JSON header plus named float32 tensors, sealed with a SHA-256 trailer.
struct Checkpoint {
  std::string kind;
  Json meta = Json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& tensor(const std::string& name) const;
};

inline constexpr std::string_view kCheckpointMagic = "LESDETv1";

std::string encode_checkpoint(const Checkpoint& c);
Checkpoint decode_checkpoint(std::string_view bytes);

void write_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Atomic-enough whole-file helpers shared by the artifact writers.
void write_file(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

/// Architecture description sufficient to rebuild an identical layer stack.
Json network_meta(const Network& net);
Network network_from_meta(const Json& meta);

void network_to_checkpoint(const Network& net, Checkpoint& c, const std::string& prefix = "");
Network network_from_checkpoint(const Checkpoint& c, const Json& meta,
                                const std::string& prefix = "");

void save_network(const Network& net, const std::filesystem::path& path,
                  const Json& extra_meta = Json::object());
Network load_network(const std::filesystem::path& path, Json* meta_out = nullptr);

}  // namespace lesdet
