#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "neursplit/tensor.hpp"

namespace neursplit {

using json = nlohmann::ordered_json;

inline constexpr std::string_view kModelFormat = "neursplit-model/1";
inline constexpr std::string_view kStatsFormat = "neursplit-stats/1";
inline constexpr std::string_view kTraceFormat = "neursplit-trace/1";
inline constexpr std::string_view kPredictorFormat = "neursplit-pred/1";
inline constexpr std::string_view kPolicyFormat = "neursplit-policy/1";
inline constexpr std::string_view kReportFormat = "neursplit-report/1";
inline constexpr std::string_view kManifestFormat = "neursplit-manifest/1";

namespace io {

// Little-endian packing regardless of host byte order.
void append_f32(std::string& out, std::span<const float> values);
void append_u64(std::string& out, std::span<const std::uint64_t> values);
std::vector<float> read_f32(std::string_view bytes, std::size_t offset, std::size_t count);
std::vector<std::uint64_t> read_u64(std::string_view bytes, std::size_t offset, std::size_t count);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const json& doc);

// Throws unless doc["format"] == expected.
void check_format(const json& doc, std::string_view expected, const std::filesystem::path& path);

// Single-file container: one line of compact JSON, a newline, then raw payload bytes.
struct HeaderFile {
    json header;
    std::string payload;
};

void write_header_file(const std::filesystem::path& path, const json& header, std::string_view payload);
HeaderFile read_header_file(const std::filesystem::path& path, std::string_view expected_format);

// Companion blob path for a manifest: "model.json" -> "model.bin".
std::filesystem::path blob_path(const std::filesystem::path& manifest);

} // namespace io

// Model file: JSON manifest plus a float32 blob, matrices row-major.
void save_model(const Model& model, const std::filesystem::path& manifest);
Model load_model(const std::filesystem::path& manifest);

// Trace file: packed input vectors.
void save_trace(const std::vector<std::vector<float>>& inputs, const std::filesystem::path& path);
std::vector<std::vector<float>> load_trace(const std::filesystem::path& path);

} // namespace neursplit
