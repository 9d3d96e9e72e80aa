#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "ovrd/nnkit.hpp"
#include "ovrd/tensor_io.hpp"

namespace ovrd {

/// Model checkpoint: a JSON metadata header plus named float32 tensors.
/// Layout: "OVCK" | version u8 = 1 | u64 LE header length | header JSON |
/// concatenated tensor images (each in the OVRD tensor format), with offsets
/// recorded relative to the blob region. Tensors are written in name order,
/// so serialization is deterministic.
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, TensorData> tensors;

  bool has(const std::string& name) const { return tensors.count(name) > 0; }

  void put(const std::string& name, const nn::Mat& m) {
    TensorData t;
    t.shape = {m.rows, m.cols};
    t.values = narrow(m.a);
    tensors[name] = std::move(t);
  }

  void put(const std::string& name, const nn::Vec& v) {
    TensorData t;
    t.shape = {v.size()};
    t.values = narrow(v);
    tensors[name] = std::move(t);
  }

  void put(const std::string& name, TensorData t) { tensors[name] = std::move(t); }

  const TensorData& get(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end())
      throw std::runtime_error("Checkpoint: missing tensor '" + name + "'");
    return it->second;
  }

  nn::Mat get_mat(const std::string& name) const {
    const TensorData& t = get(name);
    if (t.shape.size() != 2)
      throw std::runtime_error("Checkpoint: tensor '" + name + "' is not 2-d");
    nn::Mat m(t.shape[0], t.shape[1]);
    m.a = widen(t.values);
    return m;
  }

  nn::Vec get_vec(const std::string& name) const {
    const TensorData& t = get(name);
    if (t.shape.size() != 1)
      throw std::runtime_error("Checkpoint: tensor '" + name + "' is not 1-d");
    return widen(t.values);
  }

  void put_mlp(const std::string& prefix, const nn::MlpParams& p) {
    put(prefix + ".W1", p.w1);
    put(prefix + ".b1", p.b1);
    put(prefix + ".W2", p.w2);
    put(prefix + ".b2", p.b2);
  }

  nn::MlpParams get_mlp(const std::string& prefix) const {
    nn::MlpParams p;
    p.w1 = get_mat(prefix + ".W1");
    p.b1 = get_vec(prefix + ".b1");
    p.w2 = get_mat(prefix + ".W2");
    p.b2 = get_vec(prefix + ".b2");
    return p;
  }

  void save(const std::filesystem::path& path) const {
    std::string blobs;
    nlohmann::json index = nlohmann::json::array();
    for (const auto& [name, t] : tensors) {  // std::map: name order
      index.push_back({{"name", name}, {"offset", blobs.size()}});
      blobs += encode_tensor(t.shape, t.values);
    }
    nlohmann::json header{{"meta", meta}, {"tensors", index}};
    std::string hs = header.dump();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("Checkpoint::save: cannot open " + path.string());
    f << "OVCK";
    f.put(1);
    std::uint64_t len = hs.size();
    for (int i = 0; i < 8; ++i) f.put(static_cast<char>((len >> (8 * i)) & 0xff));
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    f.write(blobs.data(), static_cast<std::streamsize>(blobs.size()));
    if (!f) throw std::runtime_error("Checkpoint::save: write failed for " + path.string());
  }

  static Checkpoint load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("Checkpoint::load: cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 13 || std::memcmp(bytes.data(), "OVCK", 4) != 0)
      throw std::runtime_error("Checkpoint::load: not a checkpoint file: " +
                               path.string());
    if (bytes[4] != 1)
      throw std::runtime_error("Checkpoint::load: unsupported version");
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i)
      len |= static_cast<std::uint64_t>(bytes[5 + i]) << (8 * i);
    if (bytes.size() < 13 + len)
      throw std::runtime_error("Checkpoint::load: truncated header");
    nlohmann::json header;
    try {
      header = nlohmann::json::parse(bytes.begin() + 13, bytes.begin() + 13 + len);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(std::string("Checkpoint::load: bad header: ") +
                               e.what());
    }
    Checkpoint c;
    c.meta = header.at("meta");
    std::size_t blob_start = 13 + len;
    for (const auto& entry : header.at("tensors")) {
      std::string name = entry.at("name").get<std::string>();
      std::uint64_t off = entry.at("offset").get<std::uint64_t>();
      if (blob_start + off > bytes.size())
        throw std::runtime_error("Checkpoint::load: tensor offset out of range");
      std::span<const unsigned char> rest(bytes.data() + blob_start + off,
                                          bytes.size() - blob_start - off);
      // A tensor image's length is implied by its own header; decode_tensor
      // rejects trailing bytes, so parse the header to find the span first.
      c.tensors[name] = decode_prefix(rest, path.string() + ":" + name);
    }
    return c;
  }

 private:
  static TensorData decode_prefix(std::span<const unsigned char> bytes,
                                  const std::string& origin) {
    if (bytes.size() < 10) throw TruncatedError(origin + ": truncated tensor");
    std::uint32_t ndim = detail::get_u32(bytes.data() + 6);
    if (bytes.size() < 10 + 8ull * ndim)
      throw TruncatedError(origin + ": truncated tensor dims");
    std::uint64_t n = 1;
    for (std::uint32_t i = 0; i < ndim; ++i) {
      std::uint64_t d = detail::get_u64(bytes.data() + 10 + 8 * i);
      if (d != 0 && n > (1ull << 61) / d)
        throw TruncatedError(origin + ": dimension product overflows");
      n *= d;
    }
    std::size_t total = 10 + 8ull * ndim + 4 * n;
    if (bytes.size() < total) throw TruncatedError(origin + ": truncated tensor");
    return decode_tensor(bytes.subspan(0, total), origin);
  }
};

}  // namespace ovrd
