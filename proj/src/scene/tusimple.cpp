#include "ptseg/tusimple.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "ptseg/error.hpp"

namespace ptseg::tusimple {
namespace {

using nlohmann::json;

// Integral values are written as JSON integers so that files stay in the
// benchmark's native form (and -2 stays "-2").
json number(double v) {
  if (std::isfinite(v) && v == std::trunc(v) && std::abs(v) < 9.0e15) {
    return static_cast<long long>(v);
  }
  return v;
}

[[noreturn]] void malformed(std::size_t line, const std::string& what) {
  throw Error(ErrorCode::MalformedRecord, "line " + std::to_string(line) + ": " + what);
}

}  // namespace

void Record::validate() const {
  for (std::size_t i = 0; i < lanes.size(); ++i) {
    if (lanes[i].size() != h_samples.size()) {
      throw Error(ErrorCode::LengthMismatch,
                  "lane " + std::to_string(i) + " has " + std::to_string(lanes[i].size()) +
                      " points but there are " + std::to_string(h_samples.size()) + " h_samples");
    }
  }
}

std::string to_json_line(const Record& record) {
  record.validate();
  json lanes = json::array();
  for (const auto& lane : record.lanes) {
    json xs = json::array();
    for (double x : lane) xs.push_back(number(x));
    lanes.push_back(std::move(xs));
  }
  json j;
  j["lanes"] = std::move(lanes);
  j["h_samples"] = record.h_samples;
  j["raw_file"] = record.raw_file;
  return j.dump();
}

Record parse_json_line(const std::string& line, std::size_t line_number) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    malformed(line_number, e.what());
  }
  if (!j.is_object()) malformed(line_number, "expected a JSON object");
  for (const char* key : {"lanes", "h_samples", "raw_file"}) {
    if (!j.contains(key)) malformed(line_number, std::string("missing field '") + key + "'");
  }
  Record r;
  const auto& lanes = j["lanes"];
  const auto& rows = j["h_samples"];
  if (!lanes.is_array() || !rows.is_array() || !j["raw_file"].is_string()) {
    malformed(line_number, "fields have the wrong JSON types");
  }
  for (const auto& y : rows) {
    if (!y.is_number()) malformed(line_number, "h_samples must be numbers");
    r.h_samples.push_back(y.get<int>());
  }
  for (const auto& lane : lanes) {
    if (!lane.is_array()) malformed(line_number, "each lane must be an array");
    std::vector<double> xs;
    for (const auto& x : lane) {
      if (!x.is_number()) malformed(line_number, "lane x values must be numbers");
      xs.push_back(x.get<double>());
    }
    r.lanes.push_back(std::move(xs));
  }
  r.raw_file = j["raw_file"].get<std::string>();
  try {
    r.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::LengthMismatch, "line " + std::to_string(line_number) + ": " + e.what());
  }
  return r;
}

std::vector<Record> read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::vector<Record> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_json_line(line, n));
  }
  return out;
}

void write(const std::vector<Record>& records, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  for (const auto& r : records) out << to_json_line(r) << '\n';
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

}  // namespace ptseg::tusimple
