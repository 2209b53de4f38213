#include "ancor/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace ancor {

namespace {

constexpr char kMagic[4] = {'A', 'N', 'C', 'R'};

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const std::string& context) {
    need(sizeof(T), context);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }

  std::string get_string(std::size_t n, const std::string& context) {
    need(n, context);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  void need(std::size_t n, const std::string& context) const {
    if (bytes_.size() - pos_ < n)
      throw CheckpointError(CheckpointError::Kind::Truncated, "checkpoint truncated while reading " + context);
  }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

void mlp_arrays(ArrayList& out, const std::string& prefix, const MlpParams& mlp) {
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    out.push_back({prefix + "." + std::to_string(i) + ".w", mlp.layers[i].weight});
    out.push_back({prefix + "." + std::to_string(i) + ".b", mlp.layers[i].bias});
  }
}

MlpParams mlp_from(const ArrayList& arrays, const std::string& prefix) {
  MlpParams mlp;
  for (std::size_t i = 0;; ++i) {
    const Matrix* w = find_array(arrays, prefix + "." + std::to_string(i) + ".w");
    if (!w) break;
    const Matrix& b = require_array(arrays, prefix + "." + std::to_string(i) + ".b");
    if (b.rows() != 1 || b.cols() != w->rows())
      throw CheckpointError(CheckpointError::Kind::ShapeMismatch, prefix + "." + std::to_string(i) + ".b has shape " +
                                                                    b.shape_string() + " for weight " + w->shape_string());
    if (!mlp.layers.empty() && mlp.layers.back().weight.rows() != w->cols())
      throw CheckpointError(CheckpointError::Kind::ShapeMismatch,
                            prefix + "." + std::to_string(i) + ".w does not chain with the previous layer");
    mlp.layers.push_back({*w, b});
  }
  if (mlp.layers.empty())
    throw CheckpointError(CheckpointError::Kind::MissingArray, "checkpoint has no arrays for " + prefix);
  return mlp;
}

}  // namespace

std::vector<std::uint8_t> encode_arrays(const ArrayList& arrays) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(arrays.size()));
  for (const NamedArray& a : arrays) {
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(a.name.size()));
    out.insert(out.end(), a.name.begin(), a.name.end());
    put_le<std::uint32_t>(out, 2);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.value.rows()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.value.cols()));
    for (double v : a.value.values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

ArrayList decode_arrays(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw CheckpointError(CheckpointError::Kind::BadMagic, "not a checkpoint: bad magic bytes");
  Reader in(bytes);
  in.get_string(4, "magic");
  const auto version = in.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw CheckpointError(CheckpointError::Kind::VersionMismatch,
                          "checkpoint version " + std::to_string(version) + ", expected " +
                              std::to_string(kCheckpointVersion));
  const auto count = in.get<std::uint32_t>("array count");
  ArrayList arrays;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string ctx = "header of array #" + std::to_string(i);
    const auto len = in.get<std::uint16_t>(ctx);
    std::string name = in.get_string(len, ctx);
    const auto ndim = in.get<std::uint32_t>("array '" + name + "'");
    if (ndim != 2)
      throw CheckpointError(CheckpointError::Kind::ShapeMismatch,
                            "array '" + name + "' has ndim " + std::to_string(ndim) + ", expected 2");
    const auto rows = in.get<std::uint32_t>("array '" + name + "'");
    const auto cols = in.get<std::uint32_t>("array '" + name + "'");
    const std::uint64_t n = std::uint64_t{rows} * cols;
    in.need(n * 8, "array '" + name + "'");
    std::vector<double> values(n);
    for (auto& v : values) v = std::bit_cast<double>(in.get<std::uint64_t>("array '" + name + "'"));
    arrays.push_back({std::move(name), Matrix(rows, cols, std::move(values))});
  }
  return arrays;
}

void write_arrays(const std::filesystem::path& path, const ArrayList& arrays) {
  const auto bytes = encode_arrays(arrays);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

static std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ArrayList read_arrays(const std::filesystem::path& path) { return decode_arrays(slurp(path)); }

const Matrix* find_array(const ArrayList& arrays, const std::string& name) {
  for (const NamedArray& a : arrays)
    if (a.name == name) return &a.value;
  return nullptr;
}

const Matrix& require_array(const ArrayList& arrays, const std::string& name) {
  if (const Matrix* m = find_array(arrays, name)) return *m;
  throw CheckpointError(CheckpointError::Kind::MissingArray, "checkpoint is missing array '" + name + "'");
}

ArrayList model_arrays(const AncorModel& model) {
  ArrayList out;
  mlp_arrays(out, "encoder", model.encoder);
  mlp_arrays(out, "embedder", model.embedder);
  out.push_back({"classifier.W", model.classifier});
  mlp_arrays(out, "momentum.encoder", model.momentum_encoder);
  mlp_arrays(out, "momentum.embedder", model.momentum_embedder);
  out.push_back({"meta.model", Matrix{{static_cast<double>(model.variant), static_cast<double>(model.tap),
                                        model.fork_post_relu ? 1.0 : 0.0}}});
  return out;
}

AncorModel model_from_arrays(const ArrayList& arrays) {
  AncorModel m;
  m.encoder = mlp_from(arrays, "encoder");
  m.embedder = mlp_from(arrays, "embedder");
  m.classifier = require_array(arrays, "classifier.W");
  m.momentum_encoder = mlp_from(arrays, "momentum.encoder");
  m.momentum_embedder = mlp_from(arrays, "momentum.embedder");
  const Matrix& meta = require_array(arrays, "meta.model");
  if (meta.size() != 3) throw CheckpointError(CheckpointError::Kind::ShapeMismatch, "meta.model must hold 3 values");
  m.variant = static_cast<ModelVariant>(static_cast<int>(meta[0]));
  m.tap = static_cast<ClassifierTap>(static_cast<int>(meta[1]));
  m.fork_post_relu = meta[2] != 0.0;

  auto mismatch = [](const std::string& what) {
    throw CheckpointError(CheckpointError::Kind::ShapeMismatch, what);
  };
  if (!m.momentum_encoder.same_shape(m.encoder)) mismatch("momentum.encoder shape differs from encoder");
  if (!m.momentum_embedder.same_shape(m.embedder)) mismatch("momentum.embedder shape differs from embedder");
  if (m.embedder.input_dim() != m.encoder.output_dim()) mismatch("embedder input does not match encoder output");
  const std::size_t expect = m.tap == ClassifierTap::Embedding ? m.embedder.output_dim() : m.encoder.output_dim();
  if (m.classifier.cols() != expect)
    mismatch("classifier.W has " + std::to_string(m.classifier.cols()) + " columns, tap needs " +
             std::to_string(expect));
  return m;
}

void save_checkpoint(const AncorModel& model, const std::filesystem::path& path) {
  write_arrays(path, model_arrays(model));
}

AncorModel load_checkpoint(const std::filesystem::path& path) { return model_from_arrays(read_arrays(path)); }

std::uint64_t hash_bytes(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t hash_file(const std::filesystem::path& path) { return hash_bytes(slurp(path)); }

}  // namespace ancor
