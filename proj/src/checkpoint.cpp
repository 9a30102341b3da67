#include "adarelu/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>

namespace adarelu {

namespace {

constexpr char kMagic[] = "ADRL1";
constexpr std::size_t kMagicSize = 5;

template <typename U>
void put(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      value |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return value;
  }

  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw std::runtime_error("malformed checkpoint: truncated");
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

std::uint64_t element_count(const std::vector<std::uint64_t>& dims) {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

}  // namespace

const CheckpointArray* Checkpoint::find(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

const CheckpointArray& Checkpoint::at(const std::string& name) const {
  const CheckpointArray* a = find(name);
  if (!a) throw std::runtime_error("checkpoint has no array '" + name + "'");
  return *a;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic, kMagicSize);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.arrays.size()));
  for (const auto& a : ckpt.arrays) {
    if (element_count(a.dims) != a.values.size()) {
      throw std::invalid_argument("checkpoint array '" + a.name + "': dims do not match value count");
    }
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
    out += a.name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(a.precision));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.dims.size()));
    for (auto d : a.dims) put<std::uint64_t>(out, d);
    for (double v : a.values) {
      if (a.precision == Precision::f32) {
        put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      } else {
        put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
      }
    }
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < kMagicSize || bytes.compare(0, kMagicSize, kMagic) != 0) {
    throw std::runtime_error("malformed checkpoint: bad magic");
  }
  Reader r(bytes);
  r.take(kMagicSize);
  Checkpoint ckpt;
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointArray a;
    a.name = r.take(r.get<std::uint32_t>());
    const auto tag = r.get<std::uint8_t>();
    if (tag > 1) throw std::runtime_error("malformed checkpoint: unknown precision tag " + std::to_string(tag));
    a.precision = static_cast<Precision>(tag);
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw std::runtime_error("malformed checkpoint: rank " + std::to_string(rank));
    for (std::uint32_t k = 0; k < rank; ++k) a.dims.push_back(r.get<std::uint64_t>());
    const std::uint64_t n = element_count(a.dims);
    if (n > bytes.size()) throw std::runtime_error("malformed checkpoint: truncated");
    a.values.reserve(n);
    for (std::uint64_t k = 0; k < n; ++k) {
      a.values.push_back(a.precision == Precision::f32 ? std::bit_cast<float>(r.get<std::uint32_t>())
                                                       : std::bit_cast<double>(r.get<std::uint64_t>()));
    }
    ckpt.arrays.push_back(std::move(a));
  }
  if (!r.done()) throw std::runtime_error("malformed checkpoint: trailing bytes");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint " + path);
  const std::string bytes = encode_checkpoint(ckpt);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("cannot write checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint " + path);
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

CheckpointArray encode_arch(const ArchConfig& c) {
  CheckpointArray a;
  a.name = "config.arch";
  a.precision = Precision::f64;
  a.values = {static_cast<double>(c.image_size),
              static_cast<double>(c.base_channels),
              static_cast<double>(c.down_blocks),
              static_cast<double>(c.translator_blocks),
              static_cast<double>(c.style_dim),
              static_cast<double>(c.latent_dim),
              static_cast<double>(c.num_domains),
              static_cast<double>(static_cast<int>(c.activation)),
              c.fixed_slope,
              static_cast<double>(static_cast<int>(c.adain_mode)),
              static_cast<double>(static_cast<int>(c.structural)),
              static_cast<double>(c.mapping_hidden)};
  a.dims = {a.values.size()};
  return a;
}

ArchConfig decode_arch(const CheckpointArray& a) {
  if (a.values.size() != 12) throw std::runtime_error("malformed checkpoint: config.arch has the wrong length");
  const auto& v = a.values;
  auto as_int = [&](std::size_t i, int lo, int hi) {
    const double x = v[i];
    if (!(x >= lo && x <= hi) || x != static_cast<double>(static_cast<int>(x))) {
      throw std::runtime_error("malformed checkpoint: config.arch entry " + std::to_string(i) + " out of range");
    }
    return static_cast<int>(x);
  };
  constexpr int kMax = 1 << 20;
  ArchConfig c;
  c.image_size = as_int(0, 1, kMax);
  c.base_channels = as_int(1, 1, kMax);
  c.down_blocks = as_int(2, 1, 16);
  c.translator_blocks = as_int(3, 1, kMax);
  c.style_dim = as_int(4, 1, kMax);
  c.latent_dim = as_int(5, 1, kMax);
  c.num_domains = as_int(6, 1, kMax);
  c.activation = static_cast<ActivationKind>(as_int(7, 0, 7));
  c.fixed_slope = v[8];
  c.adain_mode = static_cast<AdainMode>(as_int(9, 0, 1));
  c.structural = static_cast<StructuralMode>(as_int(10, 0, 1));
  c.mapping_hidden = as_int(11, 1, kMax);
  c.validate();
  return c;
}

template <typename Scalar>
Checkpoint model_checkpoint(const TranslationModel<Scalar>& model) {
  Checkpoint ckpt;
  ckpt.arrays.push_back(encode_arch(model.config()));
  for (const auto& p : model.params()) {
    CheckpointArray a;
    a.name = p.name;
    a.precision = std::is_same_v<Scalar, float> ? Precision::f32 : Precision::f64;
    for (Index d : p.dims) a.dims.push_back(static_cast<std::uint64_t>(d));
    a.values.assign(p.value.data(), p.value.data() + p.value.size());
    ckpt.arrays.push_back(std::move(a));
  }
  return ckpt;
}

template <typename Scalar>
TranslationModel<Scalar> model_from_checkpoint(const Checkpoint& ckpt) {
  const ArchConfig config = decode_arch(ckpt.at("config.arch"));
  ParameterStore<Scalar> store;
  for (const auto& [name, dims] : parameter_layout(config)) {
    const CheckpointArray& a = ckpt.at(name);
    std::vector<Index> adims(a.dims.begin(), a.dims.end());
    if (adims != dims) throw std::runtime_error("checkpoint array '" + name + "' has the wrong shape");
    Tensor<Scalar> value(shape_from_dims(dims));
    for (std::size_t k = 0; k < a.values.size(); ++k) value[static_cast<Index>(k)] = static_cast<Scalar>(a.values[k]);
    store.add(name, dims, std::move(value));
  }
  return TranslationModel<Scalar>(config, std::move(store));
}

template Checkpoint model_checkpoint(const TranslationModel<float>&);
template Checkpoint model_checkpoint(const TranslationModel<double>&);
template TranslationModel<float> model_from_checkpoint(const Checkpoint&);
template TranslationModel<double> model_from_checkpoint(const Checkpoint&);

}  // namespace adarelu
