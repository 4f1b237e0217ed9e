#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace medvqa {

using json = nlohmann::json;

/// ASCII lowercase; bytes >= 0x80 pass through untouched.
std::string to_lower(std::string_view s);

/// Canonical key for answer comparison: lowercase, trimmed, inner runs of
/// whitespace collapsed to a single space.
std::string normalize_answer(std::string_view s);

/// Word-level split used for questions and report sentences: lowercase,
/// ASCII punctuation treated as a separator, split on whitespace.
std::vector<std::string> split_words(std::string_view s);

/// Reads a JSONL file, calling `visit(record, line_number)` for each
/// non-blank line. Throws ParseError naming the line for invalid JSON or a
/// non-object line; anything `visit` throws as std::exception (other than
/// medvqa::Error) is rethrown as a ParseError for that line.
void read_jsonl(const std::filesystem::path& path,
                const std::function<void(const json&, std::size_t)>& visit);

/// One compact JSON object per line, keys sorted, trailing newline.
void write_jsonl(const std::filesystem::path& path, const std::vector<json>& records);

json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view contents);
std::string read_binary_file(const std::filesystem::path& path);

}  // namespace medvqa
