#include "headprobe/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "headprobe/common.hpp"

namespace headprobe {

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(T))) throw FormatError("truncated checkpoint");
  return v;
}

void put_name(std::ostream& out, const std::string& s) {
  put<std::uint16_t>(out, static_cast<std::uint16_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_name(std::istream& in) {
  auto len = get<std::uint16_t>(in);
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (in.gcount() != len) throw FormatError("truncated checkpoint");
  return s;
}

void put_tensor(std::ostream& out, const std::string& name, const Matrix& m) {
  put_name(out, name);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
  out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

std::map<std::string, Matrix> get_tensors(std::istream& in) {
  std::map<std::string, Matrix> tensors;
  const auto count = get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = get_name(in);
    const auto rows = get<std::uint32_t>(in);
    const auto cols = get<std::uint32_t>(in);
    if (rows > (1u << 24) || cols > (1u << 24)) throw FormatError("implausible tensor shape for " + name);
    Matrix m(rows, cols);
    const auto bytes = static_cast<std::streamsize>(m.size() * sizeof(double));
    in.read(reinterpret_cast<char*>(m.data()), bytes);
    if (in.gcount() != bytes) throw FormatError("truncated tensor " + name);
    tensors.emplace(std::move(name), std::move(m));
  }
  return tensors;
}

void expect_magic(std::istream& in, const char* magic) {
  char buf[4];
  in.read(buf, 4);
  if (in.gcount() != 4 || std::memcmp(buf, magic, 4) != 0) {
    throw FormatError(std::string("bad checkpoint magic, expected ") + std::string(magic, 4));
  }
  if (get<std::uint32_t>(in) != kCheckpointVersion) throw FormatError("unsupported checkpoint version");
}

Matrix as_column(const Vector& v) { return Matrix(v); }

std::string block_name(int layer, std::string_view suffix) {
  return "blocks." + std::to_string(layer) + "." + std::string(suffix);
}

Matrix take(std::map<std::string, Matrix>& tensors, const std::string& name, Eigen::Index rows,
            Eigen::Index cols) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw FormatError("checkpoint missing tensor " + name);
  if (it->second.rows() != rows || it->second.cols() != cols) {
    throw FormatError("tensor " + name + " has shape " + std::to_string(it->second.rows()) + "x" +
                      std::to_string(it->second.cols()) + ", expected " + std::to_string(rows) + "x" +
                      std::to_string(cols));
  }
  return std::move(it->second);
}

}  // namespace

void write_model(const MicroTransformer& model, std::ostream& out) {
  const auto& c = model.config;
  out.write("HPRM", 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  for (int v : {c.n_layers, c.n_heads, c.model_dim, c.head_dim, c.mlp_hidden_dim, c.vocab_size, c.max_context}) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(v));
  }
  put<double>(out, c.rope_base);
  put<double>(out, c.norm_eps);
  put<std::uint64_t>(out, c.seed);

  put<std::uint32_t>(out, static_cast<std::uint32_t>(3 + c.n_layers * (2 + kNumProjections)));
  put_tensor(out, "embedding", model.embedding);
  for (int l = 0; l < c.n_layers; ++l) {
    const auto& b = model.blocks[l];
    put_tensor(out, block_name(l, "attn_norm"), as_column(b.attn_norm));
    put_tensor(out, block_name(l, "mlp_norm"), as_column(b.mlp_norm));
    for (auto p : kAllProjections) {
      put_tensor(out, block_name(l, std::string(projection_name(p)) + ".weight"), b[p].weight);
    }
  }
  put_tensor(out, "final_norm", as_column(model.final_norm));
  put_tensor(out, "lm_head", model.lm_head);
  if (!out) throw FormatError("failed writing model checkpoint");
}

MicroTransformer read_model(std::istream& in) {
  expect_magic(in, "HPRM");
  ModelConfig c;
  int* fields[] = {&c.n_layers, &c.n_heads, &c.model_dim, &c.head_dim, &c.mlp_hidden_dim, &c.vocab_size,
                   &c.max_context};
  for (int* f : fields) *f = static_cast<int>(get<std::uint32_t>(in));
  c.rope_base = get<double>(in);
  c.norm_eps = get<double>(in);
  c.seed = get<std::uint64_t>(in);
  try {
    c.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("invalid model config in checkpoint: ") + e.what());
  }
  auto tensors = get_tensors(in);

  MicroTransformer m;
  m.config = c;
  m.embedding = take(tensors, "embedding", c.vocab_size, c.model_dim);
  m.blocks.resize(c.n_layers);
  for (int l = 0; l < c.n_layers; ++l) {
    auto& b = m.blocks[l];
    b.attn_norm = take(tensors, block_name(l, "attn_norm"), c.model_dim, 1);
    b.mlp_norm = take(tensors, block_name(l, "mlp_norm"), c.model_dim, 1);
    for (auto p : kAllProjections) {
      Eigen::Index out = c.model_dim, inn = c.model_dim;
      if (p == Projection::Gate || p == Projection::Up) out = c.mlp_hidden_dim;
      if (p == Projection::Down) inn = c.mlp_hidden_dim;
      b[p].weight = take(tensors, block_name(l, std::string(projection_name(p)) + ".weight"), out, inn);
    }
  }
  m.final_norm = take(tensors, "final_norm", c.model_dim, 1);
  m.lm_head = take(tensors, "lm_head", c.vocab_size, c.model_dim);
  return m;
}

void write_lora(const MicroTransformer& model, std::ostream& out) {
  if (!model.lora) throw InvalidArgument("model has no adapters to write");
  const auto& cfg = *model.lora;
  out.write("HPRL", 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.rank));
  put<double>(out, cfg.alpha);
  put<double>(out, cfg.dropout);
  put<std::uint64_t>(out, cfg.seed);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(cfg.targets.size()));
  for (auto p : cfg.targets) put<std::uint8_t>(out, static_cast<std::uint8_t>(p));

  std::uint32_t count = 0;
  for (const auto& b : model.blocks) {
    for (const auto& layer : b.proj) count += layer.adapter ? 2 : 0;
  }
  put<std::uint32_t>(out, count);
  for (int l = 0; l < model.config.n_layers; ++l) {
    for (auto p : kAllProjections) {
      const auto& layer = model.blocks[l][p];
      if (!layer.adapter) continue;
      const std::string base = block_name(l, projection_name(p));
      put_tensor(out, base + ".lora_a", layer.adapter->a);
      put_tensor(out, base + ".lora_b", layer.adapter->b);
    }
  }
  if (!out) throw FormatError("failed writing adapter checkpoint");
}

MicroTransformer read_lora(const MicroTransformer& base, std::istream& in) {
  expect_magic(in, "HPRL");
  LoraConfig cfg;
  cfg.rank = static_cast<int>(get<std::uint32_t>(in));
  cfg.alpha = get<double>(in);
  cfg.dropout = get<double>(in);
  cfg.seed = get<std::uint64_t>(in);
  const auto n_targets = get<std::uint8_t>(in);
  cfg.targets.clear();
  for (int i = 0; i < n_targets; ++i) {
    const auto p = get<std::uint8_t>(in);
    if (p >= kNumProjections) throw FormatError("invalid projection id in adapter checkpoint");
    cfg.targets.push_back(static_cast<Projection>(p));
  }
  auto tensors = get_tensors(in);
  MicroTransformer m = apply_lora(base, cfg);
  for (int l = 0; l < m.config.n_layers; ++l) {
    for (auto p : cfg.targets) {
      auto& ad = *m.blocks[l][p].adapter;
      const std::string name = block_name(l, projection_name(p));
      ad.a = take(tensors, name + ".lora_a", ad.a.rows(), ad.a.cols());
      ad.b = take(tensors, name + ".lora_b", ad.b.rows(), ad.b.cols());
    }
  }
  return m;
}

void write_model_file(const MicroTransformer& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open for writing: " + path);
  write_model(model, out);
}

MicroTransformer read_model_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open model checkpoint: " + path);
  return read_model(in);
}

void write_lora_file(const MicroTransformer& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open for writing: " + path);
  write_lora(model, out);
}

MicroTransformer read_lora_file(const MicroTransformer& base, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open adapter checkpoint: " + path);
  return read_lora(base, in);
}

}  // namespace headprobe
