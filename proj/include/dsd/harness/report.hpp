// Copyright 2026 The dsd Authors. All Rights Reserved.
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

#include <algorithm>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "dsd/canonical_json.hpp"

namespace dsd {

/// Plain-text table with left-aligned first column and right-aligned rest.
struct TextTable {
  std::string title;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string render() const {
    std::vector<std::size_t> width(header.size(), 0);
    const auto widen = [&](const std::vector<std::string>& r) {
      for (std::size_t i = 0; i < r.size() && i < width.size(); ++i) width[i] = std::max(width[i], r[i].size());
    };
    widen(header);
    for (const auto& r : rows) widen(r);
    const auto line = [&](const std::vector<std::string>& r) {
      std::string out;
      for (std::size_t i = 0; i < width.size(); ++i) {
        const std::string cell = i < r.size() ? r[i] : "";
        const std::string pad(width[i] - cell.size(), ' ');
        if (i) out += "  ";
        out += i == 0 ? cell + pad : pad + cell;
      }
      while (!out.empty() && out.back() == ' ') out.pop_back();
      return out + '\n';
    };
    std::string out;
    if (!title.empty()) out += title + '\n';
    out += line(header);
    std::size_t total = 0;
    for (std::size_t w : width) total += w;
    out += std::string(total + 2 * (width.empty() ? 0 : width.size() - 1), '-') + '\n';
    for (const auto& r : rows) out += line(r);
    return out;
  }

  Json to_json() const { return Json{{"title", title}, {"header", header}, {"rows", rows}}; }
};

inline std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string percent(double fraction) { return fixed(100.0 * fraction, 2); }

/// Everything a run produced. Serialized with sorted keys so equal inputs
/// give equal bytes.
struct RunReport {
  std::string command;
  Json config = Json::object();
  std::uint64_t seed = 0;
  Json metrics = Json::object();
  std::vector<TextTable> tables;
  std::map<std::string, std::vector<double>> loss_traces;

  Json to_json() const {
    Json t = Json::array();
    for (const auto& tb : tables) t.push_back(tb.to_json());
    return Json{{"command", command}, {"config", config},     {"seed", seed},
                {"metrics", metrics}, {"tables", t},          {"loss_traces", loss_traces}};
  }

  std::string json_text() const { return canonical_json(to_json(), 2) + '\n'; }

  std::string text() const {
    std::string out;
    for (const auto& tb : tables) {
      if (!out.empty()) out += '\n';
      out += tb.render();
    }
    return out;
  }
};

}  // namespace dsd
