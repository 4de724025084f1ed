#include "cral/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "cral/errors.hpp"

namespace cral {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'C', 'R', 'A', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint64_t kMaxRank = 2;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const char* what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw DataError(std::string("checkpoint truncated reading ") + what);
  return v;
}

std::string get_bytes(std::istream& is, std::uint64_t n, const char* what) {
  std::string s(n, '\0');
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) {
    throw DataError(std::string("checkpoint truncated reading ") + what);
  }
  return s;
}

}  // namespace

const Tensor& Checkpoint::find(const std::string& name) const {
  for (const auto& r : records) {
    if (r.name == name) return r.value;
  }
  throw DataError("checkpoint has no record named '" + name + "'");
}

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
  os.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint64_t>(os, ckpt.metadata.size());
  os.write(ckpt.metadata.data(), static_cast<std::streamsize>(ckpt.metadata.size()));
  put<std::uint64_t>(os, ckpt.records.size());
  for (const auto& r : ckpt.records) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(r.name.size()));
    os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(r.value.rank()));
    for (auto e : r.value.shape()) put<std::uint64_t>(os, e);
    os.write(reinterpret_cast<const char*>(r.value.data().data()),
             static_cast<std::streamsize>(r.value.size() * sizeof(double)));
  }
  if (!os) throw DataError("checkpoint write failed");
}

Checkpoint read_checkpoint(std::istream& is) {
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw DataError("not a checkpoint file (bad magic)");
  }
  const auto version = get<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.metadata = get_bytes(is, get<std::uint64_t>(is, "metadata length"), "metadata");
  const auto count = get<std::uint64_t>(is, "record count");
  for (std::uint64_t i = 0; i < count; ++i) {
    CheckpointRecord r;
    r.name = get_bytes(is, get<std::uint32_t>(is, "name length"), "name");
    const auto rank = get<std::uint32_t>(is, "rank");
    if (rank == 0 || rank > kMaxRank) throw DataError("record '" + r.name + "' has unsupported rank");
    Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(get<std::uint64_t>(is, "extent"));
    std::vector<double> values(element_count(shape));
    if (!is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)))) {
      throw DataError("checkpoint truncated in values of '" + r.name + "'");
    }
    r.value = Tensor(std::move(shape), std::move(values));
    ckpt.records.push_back(std::move(r));
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  write_checkpoint(os, ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  return read_checkpoint(is);
}

}  // namespace cral
