#include <bit>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "dgpvae/params.hpp"

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace dgpvae {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

std::string sanitize(const std::string& name) {
  std::string out = name;
  for (char& c : out) {
    if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
  }
  return out;
}

void write_binary(const fs::path& path, const std::vector<double>& values) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char*>(values.data()),
          static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!f) throw std::runtime_error("checkpoint: write failed for '" + path.string() + "'");
}

std::vector<double> read_binary(const fs::path& path, std::size_t count) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open '" + path.string() + "'");
  std::vector<double> values(count);
  f.read(reinterpret_cast<char*>(values.data()),
         static_cast<std::streamsize>(count * sizeof(double)));
  if (f.gcount() != static_cast<std::streamsize>(count * sizeof(double))) {
    throw std::runtime_error("checkpoint: '" + path.string() + "' is shorter than expected");
  }
  return values;
}

}  // namespace

void save_checkpoint(const ParameterStore& store, const std::string& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["format"] = "dgpvae-checkpoint";
  manifest["version"] = 1;
  manifest["dtype"] = "float64";
  manifest["byte_order"] = "little";
  json entries = json::array();
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Parameter& p = store.at(i);
    char idx[8];
    std::snprintf(idx, sizeof(idx), "%04zu", i);
    std::string file = std::string(idx) + "_" + sanitize(p.name) + ".bin";
    write_binary(fs::path(dir) / file, p.value.values);
    entries.push_back({{"name", p.name}, {"shape", p.value.shape}, {"file", file}});
  }
  manifest["parameters"] = entries;
  std::ofstream f(fs::path(dir) / "manifest.json");
  if (!f) throw std::runtime_error("checkpoint: cannot write manifest in '" + dir + "'");
  f << manifest.dump(2) << "\n";
}

void load_checkpoint(ParameterStore& store, const std::string& dir) {
  fs::path manifest_path = fs::path(dir) / "manifest.json";
  std::ifstream f(manifest_path);
  if (!f) throw std::runtime_error("checkpoint: cannot open '" + manifest_path.string() + "'");
  json manifest = json::parse(f);
  if (manifest.value("dtype", "") != "float64" || manifest.value("byte_order", "") != "little") {
    throw std::runtime_error("checkpoint: unsupported dtype/byte order in '" +
                             manifest_path.string() + "'");
  }
  for (const auto& entry : manifest.at("parameters")) {
    std::string name = entry.at("name").get<std::string>();
    std::vector<std::size_t> shape = entry.at("shape").get<std::vector<std::size_t>>();
    std::size_t count = 1;
    for (std::size_t d : shape) count *= d;
    std::vector<double> values = read_binary(fs::path(dir) / entry.at("file").get<std::string>(), count);
    Tensor value(shape, std::move(values));
    if (store.has(name)) {
      Parameter& p = store.get(name);
      if (!p.value.same_shape(value)) {
        throw std::runtime_error("checkpoint: shape mismatch for parameter '" + name + "' (" +
                                 shape_to_string(p.value.shape) + " vs " +
                                 shape_to_string(value.shape) + ")");
      }
      p.value = std::move(value);
    } else {
      store.create(name, std::move(value));
    }
  }
}

}  // namespace dgpvae
