#include "pumfa/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace pumfa {

namespace {

void append_le(std::string& out, float v) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

float read_le(const char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<float>(bits);
}

bool valid_token(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (c == ' ' || c == '\n' || c == '\t' || c == '\r') return false;
  }
  return true;
}

}  // namespace

void Checkpoint::add(std::string name, const Tensor& t) {
  if (!valid_token(name)) throw std::invalid_argument("checkpoint: invalid tensor name '" + name + "'");
  // Stored by value: later in-place updates of `t` must not leak in.
  for (auto& [n, existing] : tensors) {
    if (n == name) {
      existing = t.detach();
      return;
    }
  }
  tensors.emplace_back(std::move(name), t.detach());
}

std::optional<Tensor> Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  return std::nullopt;
}

Tensor Checkpoint::get(const std::string& name) const {
  auto t = find(name);
  if (!t) throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
  return *t;
}

std::string Checkpoint::meta_or(const std::string& key, const std::string& fallback) const {
  auto it = meta.find(key);
  return it == meta.end() ? fallback : it->second;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ostringstream header;
  header << kCheckpointMagic << '\n';
  for (const auto& [k, v] : ckpt.meta) {
    if (!valid_token(k) || v.find('\n') != std::string::npos) {
      throw std::invalid_argument("checkpoint: invalid metadata entry '" + k + "'");
    }
    header << "meta " << k << ' ' << v << '\n';
  }
  std::string blob;
  for (const auto& [name, t] : ckpt.tensors) {
    header << "tensor " << name << ' ' << t.rank();
    for (std::size_t d : t.shape()) header << ' ' << d;
    header << ' ' << blob.size() << '\n';
    for (real v : t.data()) append_le(blob, static_cast<float>(v));
  }
  header << "end\n";
  write_file_atomic(path, header.str() + blob);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointMagic) {
    throw std::runtime_error(path.string() + ": not a " + std::string(kCheckpointMagic) + " file");
  }
  Checkpoint ckpt;
  struct Entry {
    std::string name;
    Shape shape;
    std::size_t offset;
  };
  std::vector<Entry> entries;
  bool ended = false;
  while (std::getline(in, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      ckpt.meta[key] = value;
    } else if (kind == "tensor") {
      Entry e;
      std::size_t rank = 0;
      if (!(ls >> e.name >> rank)) throw std::runtime_error(path.string() + ": malformed tensor line: " + line);
      e.shape.resize(rank);
      for (auto& d : e.shape) ls >> d;
      if (!(ls >> e.offset)) throw std::runtime_error(path.string() + ": malformed tensor line: " + line);
      entries.push_back(std::move(e));
    } else {
      throw std::runtime_error(path.string() + ": unexpected header line: " + line);
    }
  }
  if (!ended) throw std::runtime_error(path.string() + ": truncated header");
  std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  for (auto& e : entries) {
    const std::size_t n = shape_numel(e.shape);
    if (e.offset + 4 * n > blob.size()) throw std::runtime_error(path.string() + ": tensor '" + e.name + "' exceeds blob");
    Buffer values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = read_le(blob.data() + e.offset + 4 * i);
    ckpt.tensors.emplace_back(e.name, Tensor::from(e.shape, std::move(values)));
  }
  return ckpt;
}

}  // namespace pumfa
