#pragma once

#include <istream>
#include <ostream>
#include <string>

#include "headprobe/micro_transformer.hpp"

namespace headprobe {

// Model checkpoints share the activation file envelope (4-byte magic,
// u32 version, little-endian) with magic "HPRM": the ModelConfig followed
// by named 64-bit parameter tensors. Adapter checkpoints use magic "HPRL"
// and hold the LoraConfig plus adapter tensors only.

void write_model(const MicroTransformer& model, std::ostream& out);
MicroTransformer read_model(std::istream& in);
void write_model_file(const MicroTransformer& model, const std::string& path);
MicroTransformer read_model_file(const std::string& path);

/// Writes the adapters of `model`; throws InvalidArgument if it has none.
void write_lora(const MicroTransformer& model, std::ostream& out);
/// Attaches adapters read from `in` to a copy of `base`. Throws
/// FormatError if tensor shapes disagree with the base model.
MicroTransformer read_lora(const MicroTransformer& base, std::istream& in);
void write_lora_file(const MicroTransformer& model, const std::string& path);
MicroTransformer read_lora_file(const MicroTransformer& base, const std::string& path);

}  // namespace headprobe
