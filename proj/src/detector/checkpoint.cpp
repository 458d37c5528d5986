#include "cstyolo/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"

namespace cstyolo {

using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

struct Header {
  NetworkConfig cfg;
  bool fused = false;
  json entries;
  size_t payload_offset = 0;
};

std::vector<char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Header parse_header(const std::vector<char>& bytes, const std::string& source) {
  uint64_t len = 0;
  if (bytes.size() < sizeof len) throw ParseError(source + ": truncated checkpoint header");
  std::memcpy(&len, bytes.data(), sizeof len);
  if (len > bytes.size() - sizeof len) throw ParseError(source + ": truncated checkpoint header");
  json j;
  try {
    j = json::parse(bytes.begin() + sizeof len, bytes.begin() + static_cast<std::ptrdiff_t>(sizeof len + len));
  } catch (const json::exception& e) {
    throw ParseError(source + ": bad checkpoint header: " + e.what());
  }
  if (!j.is_object() || !j.contains("config") || !j.contains("tensors") || !j["tensors"].is_array()) {
    throw ParseError(source + ": checkpoint header lacks config or tensors");
  }
  Header h;
  h.cfg = network_config_from_json(j["config"].dump(), source);
  h.fused = j.value("fused", false);
  h.entries = j["tensors"];
  h.payload_offset = sizeof len + len;
  return h;
}

void load_state(const std::vector<char>& bytes, const Header& h, Detector& net,
                const std::string& source) {
  if (h.fused && !net.fused()) net.fuse();
  if (!h.fused && net.fused()) throw LoadError(source + ": unfused checkpoint into a fused network");
  auto state = net.state();
  if (state.size() != h.entries.size()) {
    throw LoadError(source + ": checkpoint has " + std::to_string(h.entries.size()) +
                    " tensors, network has " + std::to_string(state.size()));
  }
  const size_t payload = bytes.size() - h.payload_offset;
  for (size_t i = 0; i < state.size(); ++i) {
    const json& e = h.entries[i];
    std::string name;
    std::vector<int64_t> dims;
    uint64_t offset = 0;
    try {
      name = e.at("path").get<std::string>();
      dims = e.at("shape").get<std::vector<int64_t>>();
      offset = e.at("offset").get<uint64_t>();
    } catch (const json::exception& ex) {
      throw ParseError(source + ": bad tensor entry " + std::to_string(i) + ": " + ex.what());
    }
    Tensor& t = *state[i].tensor;
    if (name != state[i].path) {
      throw LoadError(source + ": tensor " + std::to_string(i) + " is '" + name + "', expected '" +
                      state[i].path + "'");
    }
    const auto& want = t.shape().dims;
    if (dims.size() != 4 || !std::equal(dims.begin(), dims.end(), want.begin())) {
      throw LoadError(source + ": shape mismatch for '" + name + "': checkpoint has [" +
                      [&] {
                        std::string s;
                        for (size_t k = 0; k < dims.size(); ++k) s += (k ? ", " : "") + std::to_string(dims[k]);
                        return s;
                      }() +
                      "], network has " + t.shape().str());
    }
    const uint64_t nbytes = static_cast<uint64_t>(t.numel()) * 4;
    if (offset > payload || nbytes > payload - offset) {
      throw ParseError(source + ": truncated payload at '" + name + "'");
    }
    const char* src = bytes.data() + h.payload_offset + offset;
    if (t.dtype() == DType::f32) {
      std::memcpy(t.mutable_data<float>().data(), src, nbytes);
    } else {
      auto dst = t.mutable_data<double>();
      for (size_t k = 0; k < dst.size(); ++k) {
        float v;
        std::memcpy(&v, src + 4 * k, 4);
        dst[k] = v;
      }
    }
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, Detector& net) {
  json entries = json::array();
  uint64_t offset = 0;
  auto state = net.state();
  for (const auto& s : state) {
    const auto& d = s.tensor->shape().dims;
    entries.push_back({{"path", s.path}, {"shape", {d[0], d[1], d[2], d[3]}}, {"offset", offset}});
    offset += static_cast<uint64_t>(s.tensor->numel()) * 4;
  }
  json header{{"format", "cstyolo-checkpoint"},
              {"version", 1},
              {"config", json::parse(network_config_to_json(net.config()))},
              {"fused", net.fused()},
              {"tensors", entries}};
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError("cannot write checkpoint " + path.string());
  const uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& s : state) {
    if (s.tensor->dtype() == DType::f32) {
      auto v = s.tensor->data<float>();
      out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 4));
    } else {
      for (double x : s.tensor->data<double>()) {
        const auto f = static_cast<float>(x);
        out.write(reinterpret_cast<const char*>(&f), 4);
      }
    }
  }
  if (!out) throw LoadError("failed writing checkpoint " + path.string());
}

void load_checkpoint(const std::filesystem::path& path, Detector& net) {
  const auto bytes = read_all(path);
  const Header h = parse_header(bytes, path.string());
  load_state(bytes, h, net, path.string());
}

std::unique_ptr<Detector> load_detector(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  const Header h = parse_header(bytes, path.string());
  auto net = std::make_unique<Detector>(h.cfg);
  load_state(bytes, h, *net, path.string());
  return net;
}

}  // namespace cstyolo
