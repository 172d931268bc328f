// SPDX-License-Identifier: Apache-2.0
#include "longsum/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace longsum {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

constexpr char kMagic[8] = {'L', 'S', 'C', 'K', 'P', 'T', '0', '1'};

std::size_t product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

}  // namespace

void write_container(const std::filesystem::path& path, const nlohmann::json& meta,
                     const std::vector<std::pair<std::string, const Tensor*>>& arrays) {
  nlohmann::json header = meta;
  header["arrays"] = nlohmann::json::array();
  for (const auto& [name, t] : arrays) header["arrays"].push_back({{"name", name}, {"shape", t->shape}});
  const std::string text = header.dump();
  const std::uint64_t length = text.size();

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open " + tmp.string() + " for writing");
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&length), sizeof length);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : arrays) {
      out.write(reinterpret_cast<const char*>(t->data.data()),
                static_cast<std::streamsize>(t->data.size() * sizeof(double)));
    }
    if (!out) throw CheckpointError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  char magic[8];
  std::uint64_t length = 0;
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw CheckpointError(path.string() + ": bad magic");
  in.read(reinterpret_cast<char*>(&length), sizeof length);
  if (!in || length > (1ULL << 30)) throw CheckpointError(path.string() + ": bad header length");
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw CheckpointError(path.string() + ": truncated header");

  Container c;
  try {
    c.meta = nlohmann::json::parse(text);
    for (const auto& entry : c.meta.at("arrays")) {
      NamedArray a;
      a.name = entry.at("name").get<std::string>();
      a.tensor.shape = entry.at("shape").get<std::vector<std::size_t>>();
      c.arrays.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": malformed header: " + e.what());
  }
  for (auto& a : c.arrays) {
    a.tensor.data.resize(product(a.tensor.shape));
    in.read(reinterpret_cast<char*>(a.tensor.data.data()),
            static_cast<std::streamsize>(a.tensor.data.size() * sizeof(double)));
    if (!in) throw CheckpointError(path.string() + ": truncated array " + a.name);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError(path.string() + ": trailing bytes");
  c.meta.erase("arrays");
  return c;
}

void save_parameters(const std::filesystem::path& path, const ModelConfig& config, const Parameters& params) {
  params.check_shapes(config);
  nlohmann::json meta = {{"kind", "model"}, {"config", config}};
  write_container(path, meta, params.named());
}

LoadedModel load_parameters(const std::filesystem::path& path) {
  Container c = read_container(path);
  if (c.meta.value("kind", "") != "model") throw CheckpointError(path.string() + ": not a model checkpoint");
  LoadedModel out;
  try {
    out.config = c.meta.at("config").get<ModelConfig>();
    out.config.validate();
  } catch (const std::exception& e) {
    throw CheckpointError(path.string() + ": config: " + e.what());
  }
  out.params = Parameters::zeros(out.config);
  auto slots = out.params.named();
  if (slots.size() != c.arrays.size()) {
    throw CheckpointError(path.string() + ": expected " + std::to_string(slots.size()) + " arrays, found " +
                          std::to_string(c.arrays.size()));
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].first != c.arrays[i].name) {
      throw CheckpointError(path.string() + ": expected array " + slots[i].first + ", found " + c.arrays[i].name);
    }
    if (slots[i].second->shape != c.arrays[i].tensor.shape) {
      throw CheckpointError(path.string() + ": shape mismatch for " + slots[i].first);
    }
    *slots[i].second = std::move(c.arrays[i].tensor);
  }
  if (!out.params.all_finite()) throw CheckpointError(path.string() + ": non-finite parameter values");
  return out;
}

std::size_t import_weights(const std::filesystem::path& path, Parameters& params) {
  Container c = read_container(path);
  std::size_t imported = 0;
  for (auto& [name, slot] : params.named()) {
    for (auto& a : c.arrays) {
      if (a.name != name) continue;
      if (a.tensor.shape != slot->shape) throw CheckpointError("import: shape mismatch for " + name);
      if (!a.tensor.all_finite()) throw CheckpointError("import: non-finite values in " + name);
      *slot = a.tensor;
      ++imported;
      break;
    }
  }
  return imported;
}

void save_optimizer_state(const std::filesystem::path& path, const Parameters& params, const AdafactorState& state) {
  const auto names = params.named();
  if (names.size() != state.slots.size()) throw CheckpointError("optimizer state: layout mismatch");
  std::vector<Tensor> storage;
  storage.reserve(names.size() * 2);
  std::vector<std::pair<std::string, const Tensor*>> arrays;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const AdafactorSlot& s = state.slots[i];
    if (s.factored) {
      storage.push_back(Tensor({s.row.size()}));
      storage.back().data = s.row;
      storage.push_back(Tensor({s.col.size()}));
      storage.back().data = s.col;
    } else {
      storage.push_back(Tensor({s.full.size()}));
      storage.back().data = s.full;
    }
  }
  std::size_t k = 0;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (state.slots[i].factored) {
      arrays.emplace_back(names[i].first + ".row", &storage[k++]);
      arrays.emplace_back(names[i].first + ".col", &storage[k++]);
    } else {
      arrays.emplace_back(names[i].first + ".full", &storage[k++]);
    }
  }
  write_container(path, {{"kind", "adafactor"}, {"step", state.step}}, arrays);
}

AdafactorState load_optimizer_state(const std::filesystem::path& path, const Parameters& params) {
  Container c = read_container(path);
  if (c.meta.value("kind", "") != "adafactor") throw CheckpointError(path.string() + ": not an optimizer state");
  AdafactorState state = init_state(params);
  state.step = c.meta.at("step").get<std::uint64_t>();
  const auto names = params.named();
  std::size_t k = 0;
  auto take = [&](const std::string& name, std::vector<double>& dst) {
    if (k >= c.arrays.size() || c.arrays[k].name != name || c.arrays[k].tensor.size() != dst.size()) {
      throw CheckpointError(path.string() + ": expected optimizer array " + name);
    }
    dst = std::move(c.arrays[k++].tensor.data);
  };
  for (std::size_t i = 0; i < names.size(); ++i) {
    AdafactorSlot& s = state.slots[i];
    if (s.factored) {
      take(names[i].first + ".row", s.row);
      take(names[i].first + ".col", s.col);
    } else {
      take(names[i].first + ".full", s.full);
    }
  }
  if (k != c.arrays.size()) throw CheckpointError(path.string() + ": unexpected trailing arrays");
  return state;
}

}  // namespace longsum
