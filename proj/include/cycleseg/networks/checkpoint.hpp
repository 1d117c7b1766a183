#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "cycleseg/core/tensor.hpp"
#include "cycleseg/networks/networks.hpp"

namespace cycleseg {

namespace detail {

inline void write_u64(std::ostream& os, uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline uint64_t read_u64(std::istream& is) {
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
inline void write_str(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string read_str(std::istream& is) {
  std::string s(static_cast<size_t>(read_u64(is)), '\0');
  is.read(s.data(), static_cast<std::streamsize>(s.size()));
  return s;
}

template <typename T>
inline void write_tensor(std::ostream& os, const Tensor<T>& t) {
  write_u64(os, static_cast<uint64_t>(t.shape().rank()));
  for (int64_t d = 0; d < t.shape().rank(); ++d)
    write_u64(os, static_cast<uint64_t>(t.shape()[d]));
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(sizeof(T) * static_cast<size_t>(t.numel())));
}

template <typename T>
inline Tensor<T> read_tensor(std::istream& is) {
  const int64_t rank = static_cast<int64_t>(read_u64(is));
  std::vector<int64_t> dims(static_cast<size_t>(rank));
  for (auto& d : dims) d = static_cast<int64_t>(read_u64(is));
  Tensor<T> t{Shape(dims)};
  is.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(sizeof(T) * static_cast<size_t>(t.numel())));
  return t;
}

}  // namespace detail

/// Serialized parameter map: every trainable parameter and every buffer of
/// the network, keyed by name, with a text manifest sidecar at
/// `{path}.manifest.txt` describing the config and parameter count.
template <typename T>
inline void save_network(const Network<T>& net, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_network: cannot open " + path);
  os.write("CSEGNET1", 8);
  detail::write_u64(os, sizeof(T));
  detail::write_u64(os, net.params().size());
  for (const auto& [name, p] : net.params()) {
    detail::write_str(os, name);
    detail::write_tensor(os, p.value());
  }
  detail::write_u64(os, net.buffers().size());
  for (const auto& [name, b] : net.buffers()) {
    detail::write_str(os, name);
    detail::write_tensor(os, b);
  }
  if (!os) throw std::runtime_error("save_network: write failed for " + path);

  std::ofstream manifest(path + ".manifest.txt");
  manifest << "name: " << net.name() << "\n"
           << "config: " << net.config_summary() << "\n"
           << "param_count: " << net.param_count() << "\n"
           << "param_tensors: " << net.params().size() << "\n"
           << "buffer_tensors: " << net.buffers().size() << "\n";
}

/// Loads parameters and buffers into an already-built network of the same
/// architecture; any name or shape mismatch is an error naming the tensor.
template <typename T>
inline void load_network(Network<T>& net, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_network: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, "CSEGNET1", 8) != 0)
    throw std::runtime_error("load_network: " + path + " is not a network checkpoint");
  if (detail::read_u64(is) != sizeof(T))
    throw std::runtime_error("load_network: element width mismatch in " + path);

  std::map<std::string, Tensor<T>> entries;
  const uint64_t n_params = detail::read_u64(is);
  for (uint64_t i = 0; i < n_params; ++i) {
    std::string name = detail::read_str(is);
    entries.emplace(std::move(name), detail::read_tensor<T>(is));
  }
  const uint64_t n_buffers = detail::read_u64(is);
  for (uint64_t i = 0; i < n_buffers; ++i) {
    std::string name = "buffer:" + detail::read_str(is);
    entries.emplace(std::move(name), detail::read_tensor<T>(is));
  }
  if (!is) throw std::runtime_error("load_network: truncated checkpoint " + path);

  auto assign = [&](const std::string& key, Tensor<T> dst) {
    auto it = entries.find(key);
    if (it == entries.end())
      throw std::runtime_error("load_network: checkpoint " + path + " is missing tensor " + key);
    if (it->second.shape() != dst.shape())
      throw std::runtime_error("load_network: shape mismatch for " + key + ": checkpoint " +
                               it->second.shape().str() + " vs network " + dst.shape().str());
    std::memcpy(dst.data(), it->second.data(),
                sizeof(T) * static_cast<size_t>(dst.numel()));
  };
  for (const auto& [name, p] : net.params()) assign(name, p.value());
  for (const auto& [name, b] : net.buffers()) assign("buffer:" + name, b);
}

}  // namespace cycleseg
