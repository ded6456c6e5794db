#pragma once

// TuSimple lane annotations: one JSON object per line with `lanes` (x per
// sampled row, -2 where the lane is absent), `h_samples` and `raw_file`.

#include <filesystem>
#include <string>
#include <vector>

namespace ptseg::tusimple {

inline constexpr double kAbsent = -2.0;

struct Record {
  std::vector<std::vector<double>> lanes;
  std::vector<int> h_samples;
  std::string raw_file;

  /// Throws LengthMismatch when a lane disagrees with h_samples.
  void validate() const;
  bool operator==(const Record&) const = default;
};

/// A record serialized as a single JSON line (no trailing newline).
std::string to_json_line(const Record& record);
/// Parses one line; `line_number` is only used in error messages.
Record parse_json_line(const std::string& line, std::size_t line_number = 1);

std::vector<Record> read(const std::filesystem::path& path);
void write(const std::vector<Record>& records, const std::filesystem::path& path);

}  // namespace ptseg::tusimple
