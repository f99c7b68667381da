#include "dcnet/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace dcnet {

namespace {

constexpr char kMagic[4] = {'D', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

template <typename U>
void put(std::ostream& os, U v) {
  unsigned char b[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), sizeof(U));
}

template <typename U>
U get(std::istream& is, const char* what) {
  unsigned char b[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(b), sizeof(U)))
    throw ValidationError(std::string("checkpoint truncated reading ") + what);
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
  return v;
}

}  // namespace

const TensorPtr* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
  std::ostringstream body;
  body.write(kMagic, 4);
  put<std::uint32_t>(body, kVersion);
  put<std::uint64_t>(body, c.iteration);
  put<std::uint64_t>(body, c.config_digest);
  put<std::uint64_t>(body, static_cast<std::uint64_t>(c.tensors.size()));
  for (const auto& [name, t] : c.tensors) {
    put<std::uint32_t>(body, static_cast<std::uint32_t>(name.size()));
    body.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(body, *t);
  }
  const std::string bytes = body.str();
  const std::uint64_t sum = fnv1a64(bytes.data(), bytes.size());

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  put<std::uint64_t>(os, sum);
  os.flush();
  if (!os) {
    std::remove(path.c_str());
    throw IoError("failed writing " + path);
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  std::ostringstream whole;
  whole << is.rdbuf();
  const std::string bytes = whole.str();
  if (bytes.size() < 4 + 4 + 8 + 8 + 8 + 8) throw ValidationError(path + ": checkpoint truncated");

  const std::size_t body_len = bytes.size() - 8;
  std::uint64_t stored = 0;
  for (std::size_t i = 0; i < 8; ++i)
    stored |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[body_len + i]))
              << (8 * i);
  if (fnv1a64(bytes.data(), body_len) != stored)
    throw ValidationError(path + ": checkpoint checksum mismatch");

  std::istringstream body(bytes.substr(0, body_len));
  char magic[4];
  if (!body.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw ValidationError(path + ": not a checkpoint file");
  const auto version = get<std::uint32_t>(body, "version");
  if (version != kVersion)
    throw ValidationError(path + ": unsupported checkpoint version " + std::to_string(version));

  Checkpoint c;
  c.iteration = get<std::uint64_t>(body, "iteration");
  c.config_digest = get<std::uint64_t>(body, "config digest");
  const auto count = get<std::uint64_t>(body, "tensor count");
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(body, "name length");
    std::string name(len, '\0');
    if (!body.read(name.data(), len)) throw ValidationError(path + ": checkpoint truncated");
    c.tensors.emplace_back(std::move(name), read_tensor(body));
  }
  return c;
}

std::uint64_t file_digest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  std::uint64_t h = kFnvOffset;
  char buf[1 << 16];
  while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
    h = fnv1a64(buf, static_cast<std::size_t>(is.gcount()), h);
    if (is.eof()) break;
  }
  return h;
}

}  // namespace dcnet
