#pragma once

// Single-file model container. Layout (all integers little-endian):
//
//   "RFDMODEL"  u32 version  u32 section_count
//   section_count x { u32 tag, u64 length, length bytes }
//
// Tags: META (JSON text), NETW (layers and parameters), ACTI (activation
// positions), FRST (forest), HYBR (tap index). docs/model-format.md has the
// per-section byte layout.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "rfd/forest.hpp"
#include "rfd/io/binary.hpp"
#include "rfd/network.hpp"

namespace rfd::io {

inline constexpr std::string_view kContainerMagic = "RFDMODEL";
inline constexpr std::uint32_t kContainerVersion = 1;

constexpr std::uint32_t section_tag(const char (&s)[5]) {
  return std::uint32_t{static_cast<unsigned char>(s[0])} | std::uint32_t{static_cast<unsigned char>(s[1])} << 8 |
         std::uint32_t{static_cast<unsigned char>(s[2])} << 16 | std::uint32_t{static_cast<unsigned char>(s[3])} << 24;
}
inline constexpr std::uint32_t kTagMeta = section_tag("META");
inline constexpr std::uint32_t kTagNetwork = section_tag("NETW");
inline constexpr std::uint32_t kTagActivations = section_tag("ACTI");
inline constexpr std::uint32_t kTagForest = section_tag("FRST");
inline constexpr std::uint32_t kTagHybrid = section_tag("HYBR");

struct Section {
  std::uint32_t tag = 0;
  std::string payload;
};

std::string encode_container(const std::vector<Section>& sections);
/// Throws FormatError with byte offsets on bad magic, unknown version,
/// truncation or trailing bytes.
std::vector<Section> decode_container(std::string_view bytes);
const Section* find_section(const std::vector<Section>& sections, std::uint32_t tag);
const Section& require_section(const std::vector<Section>& sections, std::uint32_t tag);

/// NETW and ACTI payloads.
std::string encode_network_layers(const Network& net);
std::string encode_activation_index(const Network& net);
Network decode_network(std::string_view layers, std::string_view activations);

/// Describes the activation index for the META section: one entry per
/// activation with its layer position, layer kind and flattened size.
nlohmann::json activation_map(const Network& net);

struct NetworkFile {
  Network network;
  nlohmann::json meta;
};

/// Writes META, NETW and ACTI; `meta` gains "kind": "dnn" and "activations".
void save_network(const std::filesystem::path& path, const Network& net, nlohmann::json meta);
NetworkFile load_network(const std::filesystem::path& path);

/// Reads only the META section of any container.
nlohmann::json read_meta(const std::filesystem::path& path);

}  // namespace rfd::io
