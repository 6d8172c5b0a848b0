/*
 * Copyright (c) 2026 The opsforge Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "opsforge/report.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <fmt/format.h>

#include "opsforge/error.hpp"

namespace opsforge::report {

std::string_view to_string(ReportFormat f) {
  return f == ReportFormat::CSV ? "CSV" : "SVG_HEATMAP";
}

ReportFormat report_format_from_string(std::string_view text) {
  std::string t(text);
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) {
    return static_cast<char>(std::tolower(c));
  });
  if (t == "csv") return ReportFormat::CSV;
  if (t == "svg" || t == "svg_heatmap" || t == "heatmap") return ReportFormat::SVG_HEATMAP;
  throw ConfigError(fmt::format("unknown report format '{}'", text));
}

std::string scores_csv(
    const std::vector<detect::ScorePoint>& scores,
    double threshold,
    const std::vector<detect::AnomalyPeriod>& periods) {
  std::string out = "window_start,score,threshold,anomalous\n";
  for (const auto& p : scores) {
    bool inside = false;
    for (const auto& period : periods) {
      if (period.t_start <= p.window_start && p.window_start < period.t_end) {
        inside = true;
        break;
      }
    }
    out += fmt::format(
        "{},{},{},{}\n", format_instant(p.window_start), p.score, threshold, inside ? 1 : 0);
  }
  return out;
}

std::vector<std::string> server_order(
    const isolate::ConnectivityMatrix& matrix,
    const isolate::Hierarchy* hierarchy) {
  std::vector<std::string> servers = matrix.servers();
  if (hierarchy == nullptr || hierarchy->nodes().empty()) {
    return servers;
  }
  std::vector<std::string> order;
  std::set<std::string> present(servers.begin(), servers.end());
  std::vector<size_t> stack{hierarchy->root()};
  while (!stack.empty()) {
    const size_t i = stack.back();
    stack.pop_back();
    const auto& node = hierarchy->node(i);
    if (node.children.empty()) {
      if (present.erase(node.id)) order.push_back(node.id);
      continue;
    }
    for (auto it = node.children.rbegin(); it != node.children.rend(); ++it) {
      stack.push_back(*it);
    }
  }
  for (const auto& s : servers) {
    if (present.count(s)) order.push_back(s);
  }
  return order;
}

std::string reachability_csv(
    const isolate::ConnectivityMatrix& matrix,
    const std::vector<std::string>& order) {
  std::string out = "source,target,reachability,connected_minutes,observed_minutes\n";
  for (const auto& s : order) {
    for (const auto& t : order) {
      if (s == t) continue;
      auto it = matrix.pairs.find({s, t});
      if (it == matrix.pairs.end() || it->second.observed == 0) {
        out += fmt::format("{},{},,0,0\n", s, t);
      } else {
        out += fmt::format(
            "{},{},{},{},{}\n", s, t, it->second.fraction(), it->second.connected,
            it->second.observed);
      }
    }
  }
  return out;
}

namespace {

constexpr int kCell = 14;
constexpr int kLabel = 120;

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// Maximal runs of consecutive indices.
std::vector<std::pair<size_t, size_t>> runs(std::vector<size_t> idx) {
  std::sort(idx.begin(), idx.end());
  std::vector<std::pair<size_t, size_t>> out;
  for (size_t i : idx) {
    if (!out.empty() && out.back().second == i) {
      ++out.back().second;
    } else {
      out.emplace_back(i, i + 1);
    }
  }
  return out;
}

} // namespace

std::string heatmap_svg(
    const isolate::ConnectivityMatrix& matrix,
    const std::vector<std::string>& order,
    const std::vector<std::vector<std::string>>& outlined) {
  const int n = static_cast<int>(order.size());
  const int size = kLabel + n * kCell + 2;
  std::string out = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{0}\" "
      "viewBox=\"0 0 {0} {0}\" font-family=\"monospace\" font-size=\"9\">\n",
      size);
  out += fmt::format(
      "<title>reachability {} to {}</title>\n",
      format_instant(matrix.from), format_instant(matrix.to));
  for (int i = 0; i < n; ++i) {
    const int pos = kLabel + i * kCell;
    out += fmt::format(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
        kLabel - 4, pos + kCell - 3, xml_escape(order[i]));
    out += fmt::format(
        "<text x=\"{0}\" y=\"{1}\" transform=\"rotate(-90 {0} {1})\">{2}</text>\n",
        pos + kCell - 4, kLabel - 4, xml_escape(order[i]));
  }
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const int x = kLabel + c * kCell;
      const int y = kLabel + r * kCell;
      std::string fill = "#ffffff";
      std::string cls = "missing";
      if (r == c) {
        cls = "diag";
      } else if (auto f = matrix.fraction(order[r], order[c])) {
        const int v = static_cast<int>(std::lround(255.0 * std::clamp(*f, 0.0, 1.0)));
        fill = fmt::format("rgb({0},{0},{0})", v);
        cls = "cell";
      }
      out += fmt::format(
          "<rect class=\"{}\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\" "
          "stroke=\"#dddddd\" stroke-width=\"0.5\"/>\n",
          cls, x, y, kCell, kCell, fill);
    }
  }
  std::map<std::string, size_t> pos;
  for (size_t i = 0; i < order.size(); ++i) pos[order[i]] = i;
  for (const auto& group : outlined) {
    std::vector<size_t> idx;
    for (const auto& s : group) {
      if (auto it = pos.find(s); it != pos.end()) idx.push_back(it->second);
    }
    for (const auto& [b, e] : runs(idx)) {
      const int lo = kLabel + static_cast<int>(b) * kCell;
      const int len = static_cast<int>(e - b) * kCell;
      out += fmt::format(
          "<rect class=\"locus\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" "
          "stroke=\"#d62728\" stroke-width=\"2\"/>\n",
          kLabel, lo, n * kCell, len);
      out += fmt::format(
          "<rect class=\"locus\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" "
          "stroke=\"#d62728\" stroke-width=\"2\"/>\n",
          lo, kLabel, len, n * kCell);
    }
  }
  out += "</svg>\n";
  return out;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f << text;
  if (!f) {
    throw StageError(fmt::format("cannot write {}", path.string()));
  }
}

} // namespace

std::vector<std::filesystem::path> render_report(
    const ReportInputs& inputs,
    ReportFormat format,
    const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  const isolate::Hierarchy* h = inputs.hierarchy ? &*inputs.hierarchy : nullptr;
  if (format == ReportFormat::CSV) {
    written.push_back(out_dir / "scores.csv");
    write_text(written.back(), scores_csv(inputs.scores, inputs.threshold, inputs.periods));
    if (inputs.matrix) {
      written.push_back(out_dir / "reachability.csv");
      write_text(written.back(), reachability_csv(*inputs.matrix, server_order(*inputs.matrix, h)));
    }
    return written;
  }
  if (!inputs.matrix) {
    throw ConfigError("heatmap report needs a connectivity matrix");
  }
  std::vector<std::vector<std::string>> outlined;
  for (const auto& locus : inputs.loci) {
    std::vector<std::string> servers;
    if (h != nullptr) {
      if (auto i = h->find(locus.node_id)) {
        for (size_t leaf : h->leaves_under(*i)) servers.push_back(h->node(leaf).id);
      }
    }
    if (servers.empty()) servers.push_back(locus.node_id);
    outlined.push_back(std::move(servers));
  }
  written.push_back(out_dir / "heatmap.svg");
  write_text(
      written.back(),
      heatmap_svg(*inputs.matrix, server_order(*inputs.matrix, h), outlined));
  return written;
}

} // namespace opsforge::report
