#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ortha/adapter.h"

namespace ortha {

// Binary adapter container, all integers and floats little-endian:
//
//   "OADP"  u16 version=1  u32 d_out  u32 d_in  u32 r  u8 mode_tag
//   mode payload:
//     0 shared subset   u64 basis_seed, u32 k, k × u32 index
//     1 gaussian        f64 sigma, u64 draw_seed
//     2 learned free    u64 init_seed, d_in×r f64 B (row-major)
//   255 dense layer     d_out×d_in f64 W (row-major), r = 0
//   d_out×r f64 A (row-major, absent for tag 255)
//   u32 length, UTF-8 JSON metadata
//   u32 CRC-32 of every preceding byte
//
// Frozen B (tags 0 and 1) is regenerated from the payload on load.
inline constexpr std::uint16_t kAdapterFormatVersion = 1;
inline constexpr std::uint8_t kDenseLayerTag = 255;

std::vector<std::uint8_t> encode_adapter(const Adapter& ad);
Adapter decode_adapter(std::span<const std::uint8_t> bytes);

// JSON text alternative with the same fields.
nlohmann::json adapter_to_json(const Adapter& ad);
Adapter adapter_from_json(const nlohmann::json& j);

void save_adapter(const Adapter& ad, const std::filesystem::path& path);
void save_adapter_json(const Adapter& ad, const std::filesystem::path& path);
// Accepts either the binary container or the JSON text form.
Adapter load_adapter(const std::filesystem::path& path);

// Merged layer stored with mode tag 255.
struct DenseLayer {
  Matrix w;
  nlohmann::json meta = nlohmann::json::object();
};

std::vector<std::uint8_t> encode_dense_layer(const DenseLayer& layer);
DenseLayer decode_dense_layer(std::span<const std::uint8_t> bytes);
void save_dense_layer(const DenseLayer& layer, const std::filesystem::path& path);
DenseLayer load_dense_layer(const std::filesystem::path& path);

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);
// Eight lowercase hex digits: the CRC trailer of the adapter's binary encoding.
std::string adapter_checksum(const Adapter& ad);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace ortha
