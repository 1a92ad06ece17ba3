#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace dtreg::io {

using nlohmann::json;

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
// Write to a sibling temp file and rename into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::vector<json> read_jsonl(const std::filesystem::path& path);
void write_jsonl_atomic(const std::filesystem::path& path, const std::vector<json>& rows);
// Append-only ledger writer; one compact JSON object per line, flushed per row.
void append_jsonl(const std::filesystem::path& path, const json& row);

// Minimal RFC 4180 CSV.
using CsvRow = std::vector<std::string>;
std::string csv_escape(std::string_view field);
std::string to_csv(const CsvRow& header, const std::vector<CsvRow>& rows);
std::vector<CsvRow> parse_csv(std::string_view text);

// Shortest round-trip decimal rendering for doubles in tables.
std::string fmt_double(double v);

}  // namespace dtreg::io
