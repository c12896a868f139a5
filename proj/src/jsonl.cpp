#include "cnseg/jsonl.hpp"

#include <fstream>
#include <sstream>

#include "cnseg/error.hpp"

namespace cnseg {

void for_each_jsonl(std::istream& in, const std::function<void(const json&, std::size_t)>& fn) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(Errc::MalformedRecord, e.what(), line_no);
    }
    if (!record.is_object()) throw Error(Errc::MalformedRecord, "record is not an object", line_no);
    fn(record, line_no);
  }
}

void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const json&, std::size_t)>& fn) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  for_each_jsonl(in, fn);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << contents;
  if (!out) throw Error(Errc::IoError, "short write to " + path.string());
}

std::string require_string(const json& record, const char* key, std::size_t line_no) {
  auto it = record.find(key);
  if (it == record.end() || !it->is_string())
    throw Error(Errc::MalformedRecord, std::string("missing string field '") + key + "'", line_no);
  return it->get<std::string>();
}

std::size_t require_index(const json& record, const char* key, std::size_t line_no) {
  auto it = record.find(key);
  if (it == record.end() || !it->is_number_integer() || it->get<long long>() < 0)
    throw Error(Errc::MalformedRecord,
                std::string("missing non-negative integer field '") + key + "'", line_no);
  return it->get<std::size_t>();
}

}  // namespace cnseg
