#include "disents/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <map>

#include <json.hpp>

#include "disents/error.hpp"

namespace disents {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint format is little-endian");

using json = nlohmann::json;

std::string file_name(const std::string& name) { return name + ".bin"; }

void write_array(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(t.data().data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
}

Tensor read_array(const std::filesystem::path& path, const Shape& shape) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw Error("missing checkpoint array '" + path.string() + "'");
  const auto bytes = static_cast<std::size_t>(in.tellg());
  Tensor t(shape);
  if (bytes != t.size() * sizeof(double)) {
    throw ShapeError("checkpoint array '" + path.filename().string() + "' holds " +
                     std::to_string(bytes / sizeof(double)) + " values, expected " +
                     std::to_string(t.size()));
  }
  in.seekg(0);
  in.read(reinterpret_cast<char*>(t.data().data()), static_cast<std::streamsize>(bytes));
  return t;
}

json entry(const std::string& name, const Shape& shape) {
  return {{"name", name}, {"file", file_name(name)}, {"shape", shape}, {"dtype", "float64"}};
}

}  // namespace

void save_checkpoint(const DisenTSModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["format"] = "disents-checkpoint";
  manifest["version"] = 1;
  manifest["experts"] = model.experts();
  manifest["unified"] = model.config().unified;
  json arrays = json::array();
  for (const auto& p : model.parameters()) {
    write_array(dir / file_name(p.name), p.var.value());
    arrays.push_back(entry(p.name, p.var.shape()));
  }
  json ema = json::array();
  for (std::size_t m = 0; m < model.experts(); ++m) {
    const std::string name = "ema.gamma" + std::to_string(m);
    write_array(dir / file_name(name), model.registry().gamma(m));
    arrays.push_back(entry(name, model.registry().gamma(m).shape()));
    ema.push_back(model.registry().updates(m));
  }
  manifest["arrays"] = std::move(arrays);
  manifest["ema_updates"] = std::move(ema);
  std::ofstream out(dir / "manifest.json");
  if (!out) throw Error("cannot write checkpoint manifest in '" + dir.string() + "'");
  out << manifest.dump(2) << '\n';
}

void load_checkpoint(DisenTSModel& model, const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error("no checkpoint manifest in '" + dir.string() + "'");
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed checkpoint manifest: ") + e.what());
  }
  if (manifest.value("experts", std::size_t{0}) != model.experts() ||
      manifest.value("unified", false) != model.config().unified) {
    throw ShapeError("checkpoint has " + manifest.value("experts", json(0)).dump() +
                     " experts (unified=" + manifest.value("unified", json(false)).dump() +
                     "), model is configured for " + std::to_string(model.experts()));
  }
  std::map<std::string, Shape> shapes;
  std::vector<std::uint64_t> ema_updates;
  try {
    for (const auto& a : manifest.at("arrays")) shapes[a.at("name").get<std::string>()] = a.at("shape").get<Shape>();
    ema_updates = manifest.at("ema_updates").get<std::vector<std::uint64_t>>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed checkpoint manifest: ") + e.what());
  }

  auto load = [&](const std::string& name, const Shape& expected) {
    const auto it = shapes.find(name);
    if (it == shapes.end()) throw ShapeError("checkpoint lacks array '" + name + "'");
    if (it->second != expected) {
      throw ShapeError("checkpoint array '" + name + "' has shape " + shape_str(it->second) +
                       ", model expects " + shape_str(expected));
    }
    return read_array(dir / file_name(name), expected);
  };

  ModelState state;
  for (const auto& p : model.parameters()) state.params.push_back(load(p.name, p.var.shape()));
  for (std::size_t m = 0; m < model.experts(); ++m) {
    state.gamma.push_back(load("ema.gamma" + std::to_string(m), model.registry().gamma(m).shape()));
  }
  state.ema_updates = std::move(ema_updates);
  model.restore(state);
}

}  // namespace disents
