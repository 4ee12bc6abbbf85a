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

#include "dsprobe/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "dsprobe/error.hpp"

namespace dsprobe {

std::string format6(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

nlohmann::json json6(double v) {
  if (!std::isfinite(v)) return nullptr;
  return std::stod(format6(v));
}

void CsvTable::add(std::vector<std::string> row) {
  if (row.size() != header.size()) {
    throw ShapeError("csv: row has " + std::to_string(row.size()) + " cells, header " +
                     std::to_string(header.size()));
  }
  rows.push_back(std::move(row));
}

std::string CsvTable::str() const {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += cells[i];
    }
    out += '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
  return out;
}

CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    if (first) {
      t.header = std::move(cells);
      first = false;
    } else {
      t.add(std::move(cells));
    }
  }
  return t;
}

CsvTable histogram_csv(const PdHistogram& h) {
  CsvTable t{{"probe", "count"}, {}};
  for (std::size_t p = 0; p < h.counts.size(); ++p) {
    t.add({std::to_string(p + 1), std::to_string(h.counts[p])});
  }
  t.add({"undefined", std::to_string(h.undefined)});
  return t;
}

PdHistogram histogram_from_csv(const CsvTable& table) {
  if (table.header != std::vector<std::string>{"probe", "count"}) {
    throw FormatError("histogram csv: expected header probe,count");
  }
  PdHistogram h;
  double sum = 0.0;
  for (const auto& r : table.rows) {
    const std::uint64_t c = std::stoull(r[1]);
    h.total += c;
    if (r[0] == "undefined") {
      h.undefined = c;
      continue;
    }
    const std::size_t p = std::stoull(r[0]);
    if (p != h.counts.size() + 1) throw FormatError("histogram csv: probes out of order");
    h.counts.push_back(c);
    sum += static_cast<double>(p) * static_cast<double>(c);
  }
  h.mean_pd = h.defined() ? sum / static_cast<double>(h.defined())
                          : std::numeric_limits<double>::quiet_NaN();
  return h;
}

nlohmann::json histogram_json(const PdHistogram& h) {
  nlohmann::json counts = nlohmann::json::object();
  for (std::size_t p = 0; p < h.counts.size(); ++p) counts[std::to_string(p + 1)] = h.counts[p];
  counts["undefined"] = h.undefined;
  return {{"probes", h.probes()},
          {"counts", counts},
          {"total", h.total},
          {"defined", h.defined()},
          {"mean_pd", json6(h.mean_pd)}};
}

nlohmann::json detector_json(const DetectorVerdict& v) {
  return {{"suspicious", v.suspicious},   {"mass_rule", v.mass_rule},
          {"mean_rule", v.mean_rule},     {"early_probes", v.early_probes},
          {"early_mass", json6(v.early_mass)}, {"mean_pd", json6(v.mean_pd)},
          {"mu_ref", json6(v.mu_ref)},    {"peak_probes", v.peak_probes}};
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " into place: " + ec.message());
}

}  // namespace dsprobe
