#include "crossx/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "crossx/binary_io.hpp"

namespace crossx {

namespace {

constexpr std::uint32_t kMaxNameLength = 4096;
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 30;
constexpr std::uint32_t kMaxRank = 8;

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

template <typename T>
CheckpointTensor pack(const std::string& name, const Shape& shape, std::span<const T> values) {
  CheckpointTensor t{name, shape, {}};
  t.data.reserve(values.size());
  for (T v : values) t.data.push_back(static_cast<float>(v));
  return t;
}

template <typename T>
void unpack(const Checkpoint& ckpt, const std::string& name, const Shape& shape, std::span<T> dst) {
  const CheckpointTensor* t = ckpt.find(name);
  if (!t) {
    throw FormatError("checkpoint lacks tensor '" + name + "'");
  }
  if (t->shape != shape) {
    throw FormatError("checkpoint tensor '" + name + "' has shape " + shape_str(t->shape) + ", model expects " +
                      shape_str(shape));
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(t->data[i]);
}

}  // namespace

const CheckpointTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) {
      throw FormatError("cannot write checkpoint " + tmp.string());
    }
    io::write_magic(os, "CRXX");
    io::write_le<std::uint32_t>(os, kCheckpointVersion);
    io::write_le<std::uint64_t>(os, ckpt.digest);
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& t : ckpt.tensors) {
      if (shape_numel(t.shape) != t.data.size()) {
        throw DimensionError("checkpoint tensor '" + t.name + "' has inconsistent shape");
      }
      io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.name.size()));
      os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
      io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape.size()));
      for (std::size_t d : t.shape) io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
      for (float v : t.data) io::write_le<float>(os, v);
    }
    io::write_le<std::uint32_t>(os, ckpt.epoch);
    io::write_le<std::uint64_t>(os, ckpt.step);
    io::write_le<std::uint64_t>(os, ckpt.seed);
    if (!os.flush()) {
      throw FormatError("failed writing checkpoint " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw FormatError("cannot open checkpoint " + path.string());
  }
  io::expect_magic(is, "CRXX", "checkpoint");
  const auto version = io::read_le<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.digest = io::read_le<std::uint64_t>(is, "config digest");
  const auto count = io::read_le<std::uint32_t>(is, "tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    const auto len = io::read_le<std::uint32_t>(is, "name length");
    if (len == 0 || len > kMaxNameLength) {
      throw FormatError("implausible tensor name length " + std::to_string(len));
    }
    t.name.resize(len);
    if (!is.read(t.name.data(), len)) {
      throw FormatError("unexpected end of stream while reading tensor name");
    }
    const auto rank = io::read_le<std::uint32_t>(is, "rank");
    if (rank > kMaxRank) {
      throw FormatError("implausible rank " + std::to_string(rank) + " for tensor '" + t.name + "'");
    }
    for (std::uint32_t d = 0; d < rank; ++d) t.shape.push_back(io::read_le<std::uint32_t>(is, "extent"));
    std::uint64_t numel = 1;
    for (std::size_t d : t.shape) {
      numel *= d;
      if (numel > kMaxElements) {
        throw FormatError("implausible size for tensor '" + t.name + "'");
      }
    }
    t.data.resize(numel);
    for (float& v : t.data) v = io::read_le<float>(is, "tensor data");
    ckpt.tensors.push_back(std::move(t));
  }
  ckpt.epoch = io::read_le<std::uint32_t>(is, "epoch");
  ckpt.step = io::read_le<std::uint64_t>(is, "step");
  ckpt.seed = io::read_le<std::uint64_t>(is, "seed");
  if (is.peek() != std::char_traits<char>::eof()) {
    throw FormatError("trailing bytes after checkpoint trailer");
  }
  return ckpt;
}

template <typename T>
Checkpoint make_checkpoint(CrossXModel<T>& model, std::uint64_t digest, const std::vector<std::vector<T>>* momentum) {
  Checkpoint ckpt;
  ckpt.digest = digest;
  const auto params = model.parameters();
  for (const auto& p : params) {
    ckpt.tensors.push_back(pack<T>(p.name, p.tensor.shape(), p.tensor.values()));
  }
  for (const auto& b : model.buffers()) {
    ckpt.tensors.push_back(pack<T>(b.name, {b.values->size()}, std::span<const T>(*b.values)));
  }
  if (momentum) {
    if (momentum->size() != params.size()) {
      throw DimensionError("momentum buffers do not match the parameter list");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      ckpt.tensors.push_back(
          pack<T>("momentum/" + params[i].name, params[i].tensor.shape(), std::span<const T>((*momentum)[i])));
    }
  }
  return ckpt;
}

template <typename T>
void load_checkpoint(const Checkpoint& ckpt, CrossXModel<T>& model, std::uint64_t expected_digest,
                     std::vector<std::vector<T>>* momentum) {
  if (ckpt.digest != expected_digest) {
    throw FormatError("checkpoint config digest " + hex(ckpt.digest) + " does not match the configuration (" +
                      hex(expected_digest) + ")");
  }
  auto params = model.parameters();
  for (auto& p : params) {
    unpack<T>(ckpt, p.name, p.tensor.shape(), p.tensor.values_mut());
  }
  for (const auto& b : model.buffers()) {
    unpack<T>(ckpt, b.name, {b.values->size()}, std::span<T>(*b.values));
  }
  if (momentum) {
    momentum->assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      (*momentum)[i].assign(params[i].tensor.numel(), T(0));
      if (ckpt.find("momentum/" + params[i].name)) {
        unpack<T>(ckpt, "momentum/" + params[i].name, params[i].tensor.shape(), std::span<T>((*momentum)[i]));
      }
    }
  }
}

template Checkpoint make_checkpoint(CrossXModel<float>&, std::uint64_t, const std::vector<std::vector<float>>*);
template Checkpoint make_checkpoint(CrossXModel<double>&, std::uint64_t, const std::vector<std::vector<double>>*);
template void load_checkpoint(const Checkpoint&, CrossXModel<float>&, std::uint64_t, std::vector<std::vector<float>>*);
template void load_checkpoint(const Checkpoint&, CrossXModel<double>&, std::uint64_t,
                              std::vector<std::vector<double>>*);

}  // namespace crossx
