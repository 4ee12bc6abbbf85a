// Copyright (c) 2026 The dsprobe Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "dsprobe/pd.hpp"

namespace dsprobe {

inline constexpr int kReportSchemaVersion = 1;

/// "%.6g"; non-finite values print as "nan", "inf" or "-inf".
std::string format6(double v);

/// Number rounded to 6 significant digits, or null when not finite.
nlohmann::json json6(double v);

/// Rows of already formatted cells under a fixed header.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add(std::vector<std::string> row);
  std::string str() const;
};

CsvTable parse_csv(const std::string& text);

/// probe,count rows for 1..N followed by an "undefined" row.
CsvTable histogram_csv(const PdHistogram& h);
/// Inverse of histogram_csv; mean_pd is recomputed from the counts.
PdHistogram histogram_from_csv(const CsvTable& table);

/// Counts keyed by probe index as strings, plus "undefined".
nlohmann::json histogram_json(const PdHistogram& h);

nlohmann::json detector_json(const DetectorVerdict& v);

std::string read_file(const std::filesystem::path& path);
/// Writes through a temporary file and renames. Throws Error when the
/// destination is not writable.
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace dsprobe
