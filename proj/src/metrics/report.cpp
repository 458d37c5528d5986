#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "cstyolo/errors.hpp"
#include "cstyolo/metrics.hpp"

namespace cstyolo {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double to_number(const std::string& s, const std::string& path, int line) {
  if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
  try {
    size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ParseError(path + ":" + std::to_string(line) + ": not a number: '" + s + "'");
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string pad(std::string s, size_t w) {
  if (s.size() < w) s.append(w - s.size(), ' ');
  return s;
}

std::string lpad(std::string s, size_t w) {
  if (s.size() < w) s.insert(0, w - s.size(), ' ');
  return s;
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

Table read_table_csv(const std::string& path) {
  const auto lines = read_lines(path);
  if (lines.empty()) throw ParseError(path + ": empty table");
  const auto head = split_csv(lines[0]);
  if (head.size() < 5 || head[0] != "group" || head[1] != "dataset" || head[2] != "model" ||
      head.back() != "Overall") {
    throw ParseError(path + ":1: expected header group,dataset,model,<classes...>,Overall");
  }
  Table t;
  t.columns.assign(head.begin() + 3, head.end() - 1);
  for (size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto cells = split_csv(lines[i]);
    if (cells.size() != head.size()) {
      throw ParseError(path + ":" + std::to_string(i + 1) + ": expected " +
                       std::to_string(head.size()) + " fields");
    }
    TableRow r{cells[0], cells[1], cells[2], {}, 0};
    for (size_t c = 3; c + 1 < cells.size(); ++c) r.ap.push_back(to_number(cells[c], path, i + 1));
    r.overall = to_number(cells.back(), path, i + 1);
    t.rows.push_back(r);
  }
  return t;
}

std::vector<Claim> read_claims_csv(const std::string& path) {
  const auto lines = read_lines(path);
  if (lines.empty() || lines[0] != "dataset,stated") {
    throw ParseError(path + ":1: expected header dataset,stated");
  }
  std::vector<Claim> out;
  for (size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto cells = split_csv(lines[i]);
    if (cells.size() != 2) throw ParseError(path + ":" + std::to_string(i + 1) + ": expected 2 fields");
    out.push_back({cells[0], to_number(cells[1], path, i + 1)});
  }
  return out;
}

std::vector<Delta> compute_deltas(const Table& t, const std::string& model,
                                  const std::string& baseline) {
  std::vector<Delta> out;
  for (const auto& r : t.rows) {
    if (r.model != model) continue;
    for (const auto& b : t.rows) {
      if (b.model != baseline || b.dataset != r.dataset || b.group != r.group) continue;
      Delta d;
      d.dataset = r.dataset;
      // Compared at the 3-decimal precision the Overall column is reported in.
      d.model_overall = std::round(mean_of(r.ap) * 1000.0) / 1000.0;
      d.baseline_overall = std::round(mean_of(b.ap) * 1000.0) / 1000.0;
      d.absolute = d.model_overall - d.baseline_overall;
      d.relative = d.absolute / d.baseline_overall;
      out.push_back(d);
    }
  }
  return out;
}

std::string render_table(const Table& t) {
  std::ostringstream os;
  os << pad("Dataset", 10) << pad("Model", 14);
  for (const auto& c : t.columns) os << lpad(c, 11);
  os << lpad("Overall", 10) << lpad("Published", 11) << "\n";
  for (const auto& r : t.rows) {
    os << pad(r.dataset, 10) << pad(r.model, 14);
    for (double v : r.ap) os << lpad(fmt("%.3f", v), 11);
    os << lpad(fmt("%.3f", mean_of(r.ap)), 10);
    os << lpad(std::isnan(r.overall) ? "-" : fmt("%.3f", r.overall), 11) << "\n";
  }
  return os.str();
}

std::string render_table_csv(const Table& t) {
  std::ostringstream os;
  os << "group,dataset,model";
  for (const auto& c : t.columns) os << "," << c;
  os << ",Overall,Computed\n";
  for (const auto& r : t.rows) {
    os << r.group << "," << r.dataset << "," << r.model;
    for (double v : r.ap) os << "," << fmt("%.3f", v);
    os << "," << (std::isnan(r.overall) ? "" : fmt("%.3f", r.overall)) << ","
       << fmt("%.6f", mean_of(r.ap)) << "\n";
  }
  return os.str();
}

std::string render_deltas(const std::vector<Delta>& deltas, const std::vector<Claim>& claims,
                          const std::string& model, const std::string& baseline) {
  std::ostringstream os;
  os << "Overall mAP@0.5 of " << model << " vs " << baseline << ":\n";
  std::vector<std::string> notes;
  for (const auto& d : deltas) {
    os << "  " << pad(d.dataset, 8) << fmt("%+.3f", d.absolute) << " ("
       << fmt("%+.2f", 100.0 * d.relative) << "% relative)";
    for (const auto& c : claims) {
      if (c.dataset != d.dataset) continue;
      const double points = std::round(d.absolute * 1000.0) / 10.0;
      if (std::abs(points - c.stated) > 0.05) {
        os << " [" << notes.size() + 1 << "]";
        notes.push_back("stated improvement for " + d.dataset + " is " + fmt("%.1f", c.stated) +
                        "; the table gives " + fmt("%.1f", points) + " points (" +
                        fmt("%.3f", d.model_overall) + " - " + fmt("%.3f", d.baseline_overall) +
                        "), " + fmt("%.2f", 100.0 * d.relative) + "% relative");
      }
    }
    os << "\n";
  }
  for (size_t i = 0; i < notes.size(); ++i) os << "[" << i + 1 << "] " << notes[i] << "\n";
  return os.str();
}

std::string render_eval(const EvalResult& r, const std::string& title) {
  std::ostringstream os;
  os << title << "\n";
  for (const auto& c : r.classes) os << lpad(c.name, 11);
  os << lpad("Overall", 10) << "\n";
  for (const auto& c : r.classes) os << lpad(fmt("%.3f", c.ap), 11);
  os << lpad(fmt("%.3f", r.map50), 10) << "\n";
  return os.str();
}

std::string render_eval_csv(const EvalResult& r) {
  std::ostringstream os;
  os << "class,ap,tp,fp,fn,gt\n";
  for (const auto& c : r.classes) {
    os << c.name << "," << fmt("%.6f", c.ap) << "," << c.tp << "," << c.fp << "," << c.fn << ","
       << c.gt << "\n";
  }
  os << "Overall," << fmt("%.6f", r.map50) << ",,,,\n";
  return os.str();
}

}  // namespace cstyolo
