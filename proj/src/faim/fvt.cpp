#include "faim/fvt.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace faim {

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("FVT1: truncated file");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

std::string file_name_for(size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "t%05zu.fvt", index);
  return buf;
}

}  // namespace

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("FVT1: cannot open for write: " + path);
  os.write("FVT1", 4);
  put_u32(os, static_cast<uint32_t>(t.rank()));
  for (int d : t.shape()) put_u32(os, static_cast<uint32_t>(d));
  for (int64_t i = 0; i < t.numel(); ++i) {
    uint32_t bits;
    float v = t.data()[i];
    std::memcpy(&bits, &v, 4);
    put_u32(os, bits);
  }
  if (!os) throw std::runtime_error("FVT1: write failed: " + path);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("FVT1: cannot open for read: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "FVT1", 4) != 0) {
    throw std::runtime_error("FVT1: bad magic in " + path);
  }
  uint32_t rank = get_u32(is);
  if (rank > 8) throw std::runtime_error("FVT1: implausible rank in " + path);
  Shape shape(rank);
  int64_t numel = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    shape[i] = static_cast<int>(get_u32(is));
    numel *= shape[i];
  }
  std::vector<float> data(static_cast<size_t>(numel));
  for (int64_t i = 0; i < numel; ++i) {
    uint32_t bits = get_u32(is);
    std::memcpy(&data[i], &bits, 4);
  }
  return Tensor::from_data(std::move(shape), std::move(data));
}

void save_checkpoint(const std::string& dir, const Parameters& params,
                     const std::map<std::string, std::vector<float>>& momentum) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json index;
  index["format"] = "FVT1";
  index["seed"] = params.seed();
  nlohmann::json tensors = nlohmann::json::object();
  size_t i = 0;
  for (const std::string& name : params.names()) {
    std::string file = file_name_for(i++);
    save_tensor((fs::path(dir) / file).string(), params.get(name));
    tensors[name] = file;
  }
  index["tensors"] = tensors;
  nlohmann::json mom = nlohmann::json::object();
  for (const auto& [name, buf] : momentum) {
    std::string file = file_name_for(i++);
    Tensor t = Tensor::from_data({static_cast<int>(buf.size())}, buf);
    save_tensor((fs::path(dir) / file).string(), t);
    mom[name] = file;
  }
  index["momentum"] = mom;
  std::ofstream os((fs::path(dir) / "index.json").string());
  os << index.dump(2) << "\n";
  if (!os) throw std::runtime_error("checkpoint: failed writing index.json in " + dir);
}

Checkpoint load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream is((fs::path(dir) / "index.json").string());
  if (!is) throw std::runtime_error("checkpoint: missing index.json in " + dir);
  nlohmann::json index = nlohmann::json::parse(is);
  Checkpoint ck{Parameters(index.at("seed").get<uint64_t>()), {}};
  for (auto& [name, file] : index.at("tensors").items()) {
    ck.params.add_tensor(name, load_tensor((fs::path(dir) / file.get<std::string>()).string()));
  }
  if (index.contains("momentum")) {
    for (auto& [name, file] : index.at("momentum").items()) {
      Tensor t = load_tensor((fs::path(dir) / file.get<std::string>()).string());
      ck.momentum[name] = t.vec();
    }
  }
  return ck;
}

}  // namespace faim
