#pragma once

#include <filesystem>
#include <functional>
#include <istream>
#include <string>

#include <json.hpp>

namespace cnseg {

using json = nlohmann::json;

// Calls `fn(record, line_no)` for every non-blank line; line numbers are
// 1-based. Unparseable lines raise MalformedRecord.
void for_each_jsonl(std::istream& in, const std::function<void(const json&, std::size_t)>& fn);
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const json&, std::size_t)>& fn);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& contents);

// Field accessors raising MalformedRecord with the offending line.
std::string require_string(const json& record, const char* key, std::size_t line_no);
std::size_t require_index(const json& record, const char* key, std::size_t line_no);

}  // namespace cnseg
