#include "headprobe/activation_store.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <unordered_set>

namespace headprobe {

static_assert(std::endian::native == std::endian::little,
              "activation files are little-endian; big-endian hosts need byte swapping");

namespace {

constexpr char kMagic[4] = {'H', 'P', 'R', 'B'};

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

void put_string16(std::ostream& out, std::string_view s, std::string_view what) {
  if (s.size() > std::numeric_limits<std::uint16_t>::max()) {
    throw FormatError(std::string(what) + " longer than 65535 bytes");
  }
  put<std::uint16_t>(out, static_cast<std::uint16_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  template <typename T>
  T get(std::string_view what) {
    T value{};
    read_exact(reinterpret_cast<char*>(&value), sizeof(T), what);
    return value;
  }

  std::string get_string16(std::string_view what) {
    auto len = get<std::uint16_t>(what);
    std::string s(len, '\0');
    read_exact(s.data(), len, what);
    return s;
  }

  // Returns the number of bytes actually read.
  std::size_t read_some(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    return static_cast<std::size_t>(in_.gcount());
  }

 private:
  void read_exact(char* dst, std::size_t n, std::string_view what) {
    std::size_t got = read_some(dst, n);
    if (got != n) {
      throw FormatError("truncated activation header while reading " + std::string(what));
    }
  }

  std::istream& in_;
};

std::size_t checked_element_count(std::uint64_t n_samples, std::uint32_t n_layers,
                                  std::uint32_t n_heads, std::uint32_t dim) {
  std::uint64_t count = n_samples;
  for (std::uint64_t factor : {std::uint64_t{n_layers}, std::uint64_t{n_heads}, std::uint64_t{dim}}) {
    if (__builtin_mul_overflow(count, factor, &count)) {
      throw SizeOverflowError("declared activation shape overflows 64-bit element count");
    }
  }
  std::uint64_t bytes = 0;
  if (__builtin_mul_overflow(count, std::uint64_t{sizeof(float)}, &bytes) ||
      bytes > static_cast<std::uint64_t>(std::numeric_limits<std::ptrdiff_t>::max())) {
    throw SizeOverflowError("declared activation payload exceeds addressable size");
  }
  return static_cast<std::size_t>(count);
}

}  // namespace

std::string_view tap_name(TapKind tap) {
  switch (tap) {
    case TapKind::HeadPreProjection: return "head";
    case TapKind::PostAttentionResidual: return "post_attn";
    case TapKind::PostMlpResidual: return "post_mlp";
  }
  return "unknown";
}

TapKind parse_tap(std::string_view name) {
  if (name == "head") return TapKind::HeadPreProjection;
  if (name == "post_attn") return TapKind::PostAttentionResidual;
  if (name == "post_mlp") return TapKind::PostMlpResidual;
  throw InvalidArgument("unknown tap kind: " + std::string(name));
}

void ActivationSet::validate() const {
  if (is_residual(tap) && n_heads != 1) {
    throw FormatError("residual tap " + std::string(tap_name(tap)) + " must declare n_heads = 1, got " +
                      std::to_string(n_heads));
  }
  std::size_t expected = checked_element_count(n_samples, n_layers, n_heads, dim);
  if (data.size() != expected) {
    throw FormatError("activation data holds " + std::to_string(data.size()) +
                      " elements, shape declares " + std::to_string(expected));
  }
  if (sample_ids.size() != n_samples) {
    throw FormatError("sample_ids has " + std::to_string(sample_ids.size()) + " entries for " +
                      std::to_string(n_samples) + " samples");
  }
  std::unordered_set<std::string_view> seen;
  for (const auto& id : sample_ids) {
    if (!seen.insert(id).second) throw FormatError("duplicate sample id: " + id);
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      throw NonFiniteError("non-finite activation at element " + std::to_string(i));
    }
  }
}

void write_activations(const ActivationSet& set, std::ostream& out) {
  set.validate();
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kActivationFormatVersion);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(set.tap));
  put_string16(out, set.model_name, "model name");
  put<std::uint64_t>(out, set.n_samples);
  put<std::uint32_t>(out, set.n_layers);
  put<std::uint32_t>(out, set.n_heads);
  put<std::uint32_t>(out, set.dim);
  for (const auto& id : set.sample_ids) put_string16(out, id, "sample id");
  out.write(reinterpret_cast<const char*>(set.data.data()),
            static_cast<std::streamsize>(set.data.size() * sizeof(float)));
  if (!out) throw FormatError("failed writing activation stream");
}

ActivationSet read_activations(std::istream& in) {
  Reader r(in);
  char magic[4];
  if (r.read_some(magic, 4) != 4 || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("not an activation file: bad magic");
  }
  auto version = r.get<std::uint32_t>("version");
  if (version != kActivationFormatVersion) {
    throw FormatError("unsupported activation format version " + std::to_string(version));
  }
  auto tap_byte = r.get<std::uint8_t>("tap kind");
  if (tap_byte > 2) throw FormatError("invalid tap kind byte " + std::to_string(tap_byte));

  ActivationSet set;
  set.tap = static_cast<TapKind>(tap_byte);
  set.model_name = r.get_string16("model name");
  set.n_samples = r.get<std::uint64_t>("n_samples");
  set.n_layers = r.get<std::uint32_t>("n_layers");
  set.n_heads = r.get<std::uint32_t>("n_heads");
  set.dim = r.get<std::uint32_t>("dim");
  if (is_residual(set.tap) && set.n_heads != 1) {
    throw FormatError("residual tap declares n_heads = " + std::to_string(set.n_heads));
  }
  std::size_t count = checked_element_count(set.n_samples, set.n_layers, set.n_heads, set.dim);

  set.sample_ids.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(set.n_samples, 1u << 20)));
  for (std::uint64_t i = 0; i < set.n_samples; ++i) {
    set.sample_ids.push_back(r.get_string16("sample id block"));
  }

  const std::size_t expected_bytes = count * sizeof(float);
  set.data.resize(count);
  std::size_t got = r.read_some(reinterpret_cast<char*>(set.data.data()), expected_bytes);
  if (got != expected_bytes) throw TruncationError(expected_bytes, got);
  set.validate();
  return set;
}

void write_activations_file(const ActivationSet& set, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open for writing: " + path);
  write_activations(set, out);
}

ActivationSet read_activations_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open activation file: " + path);
  return read_activations(in);
}

}  // namespace headprobe
