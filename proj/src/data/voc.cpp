#include <algorithm>
#include <cmath>
#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <fstream>
#include <sstream>

#include "cstyolo/data.hpp"
#include "cstyolo/errors.hpp"

namespace cstyolo::data {

namespace pt = boost::property_tree;

namespace {

int get_int(const pt::ptree& t, const std::string& key, const std::string& where) {
  const auto v = t.get_optional<std::string>(key);
  if (!v) throw ParseError(where + ": missing <" + key + ">");
  try {
    // VOC exports sometimes write coordinates as "12.0".
    return static_cast<int>(std::lround(std::stod(*v)));
  } catch (const std::exception&) {
    throw ParseError(where + ": <" + key + "> is not a number: '" + *v + "'");
  }
}

Annotation from_tree(const pt::ptree& root, const std::string& source) {
  const auto ann = root.get_child_optional("annotation");
  if (!ann) throw ParseError(source + ": missing <annotation> root");
  Annotation a;
  a.filename = ann->get<std::string>("filename", "");
  if (const auto size = ann->get_child_optional("size")) {
    a.width = get_int(*size, "width", source + " <size>");
    a.height = get_int(*size, "height", source + " <size>");
    a.depth = size->get<int>("depth", 3);
  }
  int index = 0;
  for (const auto& [tag, obj] : *ann) {
    if (tag != "object") continue;
    const std::string where = source + " object " + std::to_string(index++);
    Object o;
    o.name = obj.get<std::string>("name", "");
    if (o.name.empty()) throw ParseError(where + ": missing <name>");
    const auto bb = obj.get_child_optional("bndbox");
    if (!bb) throw ParseError(where + " (" + o.name + "): missing <bndbox>");
    o.xmin = get_int(*bb, "xmin", where);
    o.ymin = get_int(*bb, "ymin", where);
    o.xmax = get_int(*bb, "xmax", where);
    o.ymax = get_int(*bb, "ymax", where);
    a.objects.push_back(o);
  }
  return a;
}

}  // namespace

Annotation parse_voc_xml_string(const std::string& xml, const std::string& source) {
  std::istringstream in(xml);
  pt::ptree tree;
  try {
    pt::read_xml(in, tree, pt::xml_parser::trim_whitespace);
  } catch (const pt::xml_parser_error& e) {
    throw ParseError(source + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  return from_tree(tree, source);
}

Annotation parse_voc_xml(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open annotation " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_voc_xml_string(ss.str(), path.string());
}

std::string serialize_voc_xml(const Annotation& a) {
  std::ostringstream os;
  os << "<annotation>\n";
  os << "  <filename>" << a.filename << "</filename>\n";
  os << "  <size>\n    <width>" << a.width << "</width>\n    <height>" << a.height
     << "</height>\n    <depth>" << a.depth << "</depth>\n  </size>\n";
  for (const auto& o : a.objects) {
    os << "  <object>\n    <name>" << o.name << "</name>\n    <bndbox>\n";
    os << "      <xmin>" << o.xmin << "</xmin>\n      <ymin>" << o.ymin << "</ymin>\n";
    os << "      <xmax>" << o.xmax << "</xmax>\n      <ymax>" << o.ymax << "</ymax>\n";
    os << "    </bndbox>\n  </object>\n";
  }
  os << "</annotation>\n";
  return os.str();
}

const std::vector<std::string>& blood_cell_classes() {
  static const std::vector<std::string> names{"WBC", "RBC", "Platelets"};
  return names;
}

std::vector<std::string> unknown_classes(const Annotation& a, const std::vector<std::string>& classes) {
  std::vector<std::string> out;
  for (const auto& o : a.objects) {
    if (std::find(classes.begin(), classes.end(), o.name) == classes.end() &&
        std::find(out.begin(), out.end(), o.name) == out.end()) {
      out.push_back(o.name);
    }
  }
  return out;
}

std::vector<GroundTruth> to_ground_truth(const Annotation& a, const std::vector<std::string>& classes,
                                         int image_index) {
  const auto unknown = unknown_classes(a, classes);
  if (!unknown.empty()) {
    throw ConfigError("annotation " + a.filename + " has unknown class '" + unknown.front() + "'");
  }
  std::vector<GroundTruth> out;
  for (const auto& o : a.objects) {
    const int cls = static_cast<int>(std::find(classes.begin(), classes.end(), o.name) - classes.begin());
    Box b{double(o.xmin), double(o.ymin), double(o.xmax), double(o.ymax)};
    if (a.width > 0) {
      b.x1 = std::clamp(b.x1, 0.0, double(a.width));
      b.x2 = std::clamp(b.x2, 0.0, double(a.width));
    }
    if (a.height > 0) {
      b.y1 = std::clamp(b.y1, 0.0, double(a.height));
      b.y2 = std::clamp(b.y2, 0.0, double(a.height));
    }
    if (b.width() <= 0 || b.height() <= 0) continue;
    out.push_back({b, cls, image_index});
  }
  return out;
}

}  // namespace cstyolo::data
