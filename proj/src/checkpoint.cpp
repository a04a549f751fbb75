#include "evomerge/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

#include <json.hpp>

namespace evomerge {

namespace {

constexpr char kMagic[8] = {'E', 'V', 'M', 'G', '0', '0', '0', '1'};

void put_u32_le(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32_le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const LayeredModel& model, const std::string& path) {
  if (model.layers.empty()) throw std::invalid_argument("no layers");
  validate_model(model);  // refuses non-finite tensors

  nlohmann::json header;
  header["arch_id"] = model.meta.arch_id;
  header["vocab_size"] = model.meta.vocab_size;
  header["embed_dim"] = model.meta.embed_dim;
  header["n_blocks"] = model.meta.n_blocks;
  header["n_slots"] = model.meta.n_slots;
  header["seed"] = model.meta.seed;
  header["layers"] = nlohmann::json::array();
  for (const auto& l : model.layers) {
    header["layers"].push_back({{"name", l.name}, {"shape", l.shape}});
  }
  const std::string htext = header.dump();  // keys sorted, single line

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write(kMagic, 8);
  put_u32_le(os, static_cast<uint32_t>(htext.size()));
  os.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  for (const auto& l : model.layers) {
    for (float v : l.values) {
      uint32_t bits;
      std::memcpy(&bits, &v, 4);
      put_u32_le(os, bits);
    }
  }
  os.flush();
  if (!os) throw std::runtime_error("write failed: " + path);
}

LayeredModel load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);

  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error("bad magic: not an EVMG0001 checkpoint: " + path);
  }
  const uint32_t hlen = get_u32_le(is);
  if (!is) throw std::runtime_error("truncated header length: " + path);
  std::string htext(hlen, '\0');
  is.read(htext.data(), hlen);
  if (!is) throw std::runtime_error("truncated header: " + path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(htext);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("unparseable header: ") + e.what());
  }

  LayeredModel model;
  model.meta.arch_id = header.at("arch_id").get<std::string>();
  model.meta.vocab_size = header.at("vocab_size").get<int64_t>();
  model.meta.embed_dim = header.at("embed_dim").get<int64_t>();
  model.meta.n_blocks = header.at("n_blocks").get<int64_t>();
  model.meta.n_slots = header.at("n_slots").get<int64_t>();
  model.meta.seed = header.at("seed").get<uint64_t>();
  for (const auto& jl : header.at("layers")) {
    Layer l;
    l.name = jl.at("name").get<std::string>();
    l.shape = jl.at("shape").get<std::vector<int64_t>>();
    l.values.resize(static_cast<size_t>(l.size()));
    model.layers.push_back(std::move(l));
  }
  if (model.layers.empty()) throw std::runtime_error("no layers in header: " + path);

  for (auto& l : model.layers) {
    for (auto& v : l.values) {
      uint32_t bits = get_u32_le(is);
      if (!is) throw std::runtime_error("payload shorter than declared shapes: " + path);
      std::memcpy(&v, &bits, 4);
    }
  }
  // The payload must end exactly where the shapes say it does.
  is.peek();
  if (!is.eof()) throw std::runtime_error("payload longer than declared shapes: " + path);

  validate_model(model);
  return model;
}

}  // namespace evomerge
