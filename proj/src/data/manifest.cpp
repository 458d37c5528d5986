#include <fstream>
#include <set>
#include <sstream>

#include "cstyolo/data.hpp"
#include "cstyolo/errors.hpp"

namespace cstyolo::data {

const std::vector<std::string>& SplitManifest::split(const std::string& name) const {
  for (const auto& [n, stems] : splits) {
    if (n == name) return stems;
  }
  throw ConfigError("manifest " + dataset + " has no split '" + name + "'");
}

bool SplitManifest::has_split(const std::string& name) const {
  for (const auto& s : splits) {
    if (s.first == name) return true;
  }
  return false;
}

SplitManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open manifest " + path.string());
  SplitManifest m;
  std::string line;
  int lineno = 0;
  int64_t expected = -1;
  std::set<std::string> seen;
  auto where = [&] { return path.string() + ":" + std::to_string(lineno); };
  auto close_split = [&] {
    if (expected >= 0 && static_cast<int64_t>(m.splits.back().second.size()) != expected) {
      throw ParseError(path.string() + ": split '" + m.splits.back().first + "' declares " +
                       std::to_string(expected) + " entries but lists " +
                       std::to_string(m.splits.back().second.size()));
    }
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "dataset") {
      if (!(ls >> m.dataset)) throw ParseError(where() + ": dataset needs a name");
    } else if (word == "split") {
      close_split();
      std::string name;
      if (!(ls >> name >> expected) || expected < 0) {
        throw ParseError(where() + ": expected 'split NAME COUNT'");
      }
      if (m.has_split(name)) throw ParseError(where() + ": duplicate split '" + name + "'");
      m.splits.push_back({name, {}});
    } else {
      if (m.splits.empty()) throw ParseError(where() + ": entry before any split header");
      if (!seen.insert(word).second) throw ParseError(where() + ": '" + word + "' listed twice");
      m.splits.back().second.push_back(word);
    }
  }
  if (m.dataset.empty()) throw ParseError(path.string() + ": missing 'dataset' line");
  if (!m.splits.empty()) close_split();
  return m;
}

void write_manifest(const fs::path& path, const SplitManifest& m) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write manifest " + path.string());
  out << "dataset " << m.dataset << "\n";
  for (const auto& [name, stems] : m.splits) {
    out << "split " << name << " " << stems.size() << "\n";
    for (const auto& s : stems) out << s << "\n";
  }
}

std::vector<DatasetRecord> load_split(const fs::path& root, const SplitManifest& m,
                                      const std::string& split) {
  std::vector<DatasetRecord> out;
  for (const auto& stem : m.split(split)) {
    DatasetRecord r;
    r.stem = stem;
    for (const char* ext : {".png", ".bmp"}) {
      const fs::path p = root / "images" / (stem + ext);
      if (fs::exists(p)) {
        r.image_path = p;
        break;
      }
    }
    if (r.image_path.empty()) {
      throw LoadError("missing image for '" + stem + "': " + (root / "images" / (stem + ".png")).string());
    }
    r.image = read_image(r.image_path);
    r.annotation = parse_voc_xml(root / "annotations" / (stem + ".xml"));
    if (r.annotation.width == 0) {
      r.annotation.width = r.image.width;
      r.annotation.height = r.image.height;
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace cstyolo::data
