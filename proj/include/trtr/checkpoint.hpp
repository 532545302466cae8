#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "trtr/autograd.hpp"

namespace trtr {

/// A named learnable tensor, e.g. "encoder.0.self_attn.head.1.wq".
struct Parameter {
  std::string name;
  Var value;
};

using ParameterList = std::vector<Parameter>;

inline void zero_grads(ParameterList& params) {
  for (auto& p : params) p.value.zero_grad();
}

inline std::size_t parameter_count(const ParameterList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value.size();
  return n;
}

// ---------------------------------------------------------------------------
// "TRTR-CKPT v1" archive
//
//   TRTR-CKPT v1\n
//   <entry count>\n
//   per entry: <name> <rank> <d0> ... <dk>\n  followed by size*8 bytes of
//   little-endian IEEE-754 doubles and a terminating \n.
// ---------------------------------------------------------------------------

inline constexpr const char* kCheckpointMagic = "TRTR-CKPT v1";

using Checkpoint = std::map<std::string, Tensor>;

namespace detail {

inline void write_le_double(std::ostream& os, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFFu);
  os.write(bytes, 8);
}

inline double read_le_double(std::istream& is) {
  unsigned char bytes[8];
  is.read(reinterpret_cast<char*>(bytes), 8);
  if (!is) throw InputError("checkpoint: truncated tensor payload");
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | bytes[i];
  return std::bit_cast<double>(bits);
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const ParameterList& params) {
  os << kCheckpointMagic << '\n' << params.size() << '\n';
  for (const auto& p : params) {
    if (p.name.find_first_of(" \n") != std::string::npos)
      throw InputError("checkpoint: parameter name contains whitespace: " + p.name);
    const Tensor& t = p.value.value();
    os << p.name << ' ' << t.rank();
    for (std::size_t d : t.shape()) os << ' ' << d;
    os << '\n';
    for (double v : t.data()) detail::write_le_double(os, v);
    os << '\n';
  }
}

inline Checkpoint read_checkpoint(std::istream& is) {
  std::string magic;
  std::getline(is, magic);
  if (magic != kCheckpointMagic) throw InputError("checkpoint: bad header '" + magic + "'");
  std::size_t count = 0;
  if (!(is >> count)) throw InputError("checkpoint: missing entry count");
  is.get();
  Checkpoint out;
  for (std::size_t e = 0; e < count; ++e) {
    std::string name;
    std::size_t rank = 0;
    if (!(is >> name >> rank)) throw InputError("checkpoint: malformed entry header");
    Shape shape(rank);
    for (auto& d : shape)
      if (!(is >> d)) throw InputError("checkpoint: malformed shape for " + name);
    if (is.get() != '\n') throw InputError("checkpoint: expected newline after header of " + name);
    Tensor t(shape);
    for (double& v : t.data()) v = detail::read_le_double(is);
    if (is.get() != '\n') throw InputError("checkpoint: missing terminator after " + name);
    if (!out.emplace(name, std::move(t)).second) throw InputError("checkpoint: duplicate entry " + name);
  }
  return out;
}

inline void save_checkpoint(const std::string& path, const ParameterList& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot open " + path + " for writing");
  write_checkpoint(os, params);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open checkpoint " + path);
  return read_checkpoint(is);
}

/// Copies archived values into matching parameters. Every parameter must be
/// present with an identical shape.
inline void assign_checkpoint(ParameterList& params, const Checkpoint& ckpt) {
  for (auto& p : params) {
    auto it = ckpt.find(p.name);
    if (it == ckpt.end()) throw InputError("checkpoint: missing parameter " + p.name);
    if (it->second.shape() != p.value.shape()) {
      throw DimensionError("checkpoint: " + p.name + " has shape " + shape_string(it->second.shape()) +
                           ", model expects " + shape_string(p.value.shape()));
    }
    p.value.mutable_value() = it->second;
  }
}

}  // namespace trtr
