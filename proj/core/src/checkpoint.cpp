#include "recap/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include "recap/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

namespace recap {

namespace {

constexpr char kMagic[4] = {'R', 'C', 'A', 'P'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::istream& is, const std::string& what) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw CheckpointError("truncated file while reading " + what);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const NamedTensors& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open " + path + " for writing");
  os.write(kMagic, 4);
  write_u32(os, kVersion);
  write_u32(os, static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    write_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<uint32_t>(t->rank()));
    for (int d : t->shape()) write_u32(os, static_cast<uint32_t>(d));
    os.write(reinterpret_cast<const char*>(t->data()),
             static_cast<std::streamsize>(t->numel() * static_cast<int64_t>(sizeof(double))));
  }
  if (!os) throw CheckpointError("write failed for " + path);
}

void load_checkpoint(const std::string& path, const NamedTensors& tensors) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open " + path);
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw CheckpointError(path + ": bad magic");
  }
  uint32_t version = read_u32(is, "version");
  if (version != kVersion) {
    throw CheckpointError(path + ": unsupported version " + std::to_string(version));
  }
  uint32_t count = read_u32(is, "tensor count");
  if (count != tensors.size()) {
    throw CheckpointError(path + ": holds " + std::to_string(count) + " tensors, expected " +
                          std::to_string(tensors.size()));
  }

  std::unordered_map<std::string, ag::Tensor*> slots;
  for (const auto& [name, t] : tensors) slots.emplace(name, t);

  std::unordered_set<std::string> filled;
  for (uint32_t k = 0; k < count; ++k) {
    uint32_t name_len = read_u32(is, "name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw CheckpointError(path + ": truncated name");
    auto it = slots.find(name);
    if (it == slots.end()) throw CheckpointError(path + ": unknown tensor '" + name + "'");
    if (!filled.insert(name).second) {
      throw CheckpointError(path + ": duplicate tensor '" + name + "'");
    }
    uint32_t rank = read_u32(is, "rank of '" + name + "'");
    std::vector<int> shape(rank);
    for (uint32_t d = 0; d < rank; ++d) {
      shape[d] = static_cast<int>(read_u32(is, "dims of '" + name + "'"));
    }
    ag::Tensor* slot = it->second;
    if (shape != slot->shape()) {
      throw CheckpointError(path + ": tensor '" + name + "' has shape " +
                            ag::shape_to_string(shape) + ", expected " + slot->shape_str());
    }
    std::vector<double> data(static_cast<size_t>(ag::shape_numel(shape)));
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!is) throw CheckpointError(path + ": truncated payload for '" + name + "'");
    bool rg = slot->requires_grad;
    *slot = ag::Tensor(shape, std::move(data), rg);
  }
  for (const auto& [name, t] : tensors) {
    (void)t;
    if (!filled.count(name)) throw CheckpointError(path + ": missing tensor '" + name + "'");
  }
}

}  // namespace recap
