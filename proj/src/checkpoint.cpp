#include "crossalign/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace crossalign::nn {
namespace {

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
  return v;
}

}  // namespace

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

template <typename T>
Checkpoint make_checkpoint(const ParameterSet<T>& params, std::map<std::string, std::string> meta) {
  Checkpoint ckpt;
  ckpt.meta = std::move(meta);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const auto& v = params.value(p);
    CheckpointEntry e{params.name(p), v.shape(), offset, {}};
    e.data.reserve(v.size());
    for (T x : v.flat()) e.data.push_back(static_cast<float>(x));
    offset += v.size() * sizeof(float);
    ckpt.entries.push_back(std::move(e));
  }
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ostringstream header;
  header << kCheckpointVersion << "\n";
  for (const auto& [key, value] : ckpt.meta) header << "meta " << key << " " << value << "\n";
  std::size_t offset = 0;
  for (const auto& e : ckpt.entries) {
    header << "param " << e.name << " " << e.shape.size();
    for (std::size_t d : e.shape) header << " " << d;
    header << " " << offset << "\n";
    offset += e.data.size() * sizeof(float);
  }
  header << "end\n";

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
  const std::string text = header.str();
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& e : ckpt.entries) {
    for (float f : e.data) {
      const std::uint32_t bits = to_le(std::bit_cast<std::uint32_t>(f));
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
  if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointVersion) {
    throw ValidationError("checkpoint version mismatch in " + path.string() + ": expected " + kCheckpointVersion);
  }
  Checkpoint ckpt;
  bool terminated = false;
  while (std::getline(in, line)) {
    if (line == "end") {
      terminated = true;
      break;
    }
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string key, value;
      ls >> key;
      std::getline(ls >> std::ws, value);
      ckpt.meta[key] = value;
    } else if (kind == "param") {
      CheckpointEntry e;
      std::size_t rank = 0;
      ls >> e.name >> rank;
      e.shape.resize(rank);
      for (auto& d : e.shape) ls >> d;
      ls >> e.offset;
      if (!ls || rank == 0) throw ValidationError("malformed checkpoint header line: " + line);
      ckpt.entries.push_back(std::move(e));
    } else {
      throw ValidationError("unknown checkpoint header line: " + line);
    }
  }
  if (!terminated) throw ValidationError("checkpoint header not terminated: " + path.string());

  const auto data_start = in.tellg();
  for (auto& e : ckpt.entries) {
    std::size_t n = 1;
    for (std::size_t d : e.shape) n *= d;
    in.seekg(data_start + static_cast<std::streamoff>(e.offset));
    e.data.resize(n);
    for (auto& f : e.data) {
      std::uint32_t bits = 0;
      in.read(reinterpret_cast<char*>(&bits), sizeof bits);
      f = std::bit_cast<float>(to_le(bits));
    }
    if (!in) throw IoError("checkpoint truncated while reading '" + e.name + "'");
  }
  return ckpt;
}

template <typename T>
void load_into(const Checkpoint& ckpt, ParameterSet<T>& params) {
  for (std::size_t p = 0; p < params.size(); ++p) {
    const auto* e = ckpt.find(params.name(p));
    if (!e) throw ValidationError("checkpoint is missing parameter '" + params.name(p) + "'");
    if (e->shape != params.value(p).shape()) {
      throw ShapeError("checkpoint parameter '" + params.name(p) + "' has shape " + shape_string(e->shape) +
                       " but the model expects " + shape_string(params.value(p).shape()));
    }
    auto& v = params.value(p);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(e->data[i]);
  }
}

template Checkpoint make_checkpoint(const ParameterSet<float>&, std::map<std::string, std::string>);
template Checkpoint make_checkpoint(const ParameterSet<double>&, std::map<std::string, std::string>);
template void load_into(const Checkpoint&, ParameterSet<float>&);
template void load_into(const Checkpoint&, ParameterSet<double>&);

}  // namespace crossalign::nn
