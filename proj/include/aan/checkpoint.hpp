#pragma once

// Checkpoint file format (binary, little-endian):
//   magic "AANT" | version u32 (=1) | config field count u32
//   per config field: tag u8, length u32, payload
//   tensor count u32
//   per tensor: name length u16, UTF-8 name, rank u8, dims u32..., f32 data
// Payloads are f32 on disk regardless of the in-memory precision mode, so
// the save->load round trip is bit-exact in f32 mode and narrowing in f64.

#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "aan/binio.hpp"
#include "aan/model.hpp"

namespace aan {

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind {
    kBadMagic,
    kBadVersion,
    kTruncated,
    kBadShape,
    kConfigMismatch,
    kIo,
  };

  CheckpointError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

namespace ckpt_detail {

inline constexpr char kMagic[4] = {'A', 'A', 'N', 'T'};
inline constexpr std::uint32_t kVersion = 1;

enum class Field : std::uint8_t {
  kDModel = 1,
  kDFf = 2,
  kNHeads = 3,
  kNLayers = 4,
  kSrcVocab = 5,
  kTgtVocab = 6,
  kMaxLen = 7,
  kDropout = 8,
  kLabelSmoothing = 9,
  kDecoderKind = 10,
  kUseFfn = 11,
  kUseGate = 12,
  kTieEmbeddings = 13,
  kSeed = 14,
};

inline void write_u32_field(BinWriter& w, Field tag, std::uint32_t v) {
  w.u8(static_cast<std::uint8_t>(tag));
  w.u32(4);
  w.u32(v);
}

inline void write_config(BinWriter& w, const ModelConfig& cfg) {
  w.u32(14);
  write_u32_field(w, Field::kDModel, static_cast<std::uint32_t>(cfg.d_model));
  write_u32_field(w, Field::kDFf, static_cast<std::uint32_t>(cfg.d_ff));
  write_u32_field(w, Field::kNHeads, static_cast<std::uint32_t>(cfg.n_heads));
  write_u32_field(w, Field::kNLayers, static_cast<std::uint32_t>(cfg.n_layers));
  write_u32_field(w, Field::kSrcVocab, static_cast<std::uint32_t>(cfg.src_vocab));
  write_u32_field(w, Field::kTgtVocab, static_cast<std::uint32_t>(cfg.tgt_vocab));
  write_u32_field(w, Field::kMaxLen, static_cast<std::uint32_t>(cfg.max_len));
  w.u8(static_cast<std::uint8_t>(Field::kDropout));
  w.u32(4);
  w.f32(cfg.dropout);
  w.u8(static_cast<std::uint8_t>(Field::kLabelSmoothing));
  w.u32(4);
  w.f32(cfg.label_smoothing);
  w.u8(static_cast<std::uint8_t>(Field::kDecoderKind));
  w.u32(1);
  w.u8(cfg.decoder_kind == DecoderKind::kAan ? 1 : 0);
  w.u8(static_cast<std::uint8_t>(Field::kUseFfn));
  w.u32(1);
  w.u8(cfg.use_ffn ? 1 : 0);
  w.u8(static_cast<std::uint8_t>(Field::kUseGate));
  w.u32(1);
  w.u8(cfg.use_gate ? 1 : 0);
  w.u8(static_cast<std::uint8_t>(Field::kTieEmbeddings));
  w.u32(1);
  w.u8(cfg.tie_target_embeddings ? 1 : 0);
  w.u8(static_cast<std::uint8_t>(Field::kSeed));
  w.u32(8);
  w.u64(cfg.seed);
}

inline ModelConfig read_config(BinReader& r) {
  ModelConfig cfg;
  const std::uint32_t count = r.u32();
  std::map<std::uint8_t, bool> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint8_t tag = r.u8();
    const std::uint32_t len = r.u32();
    seen[tag] = true;
    switch (static_cast<Field>(tag)) {
      case Field::kDModel: cfg.d_model = static_cast<int>(r.u32()); break;
      case Field::kDFf: cfg.d_ff = static_cast<int>(r.u32()); break;
      case Field::kNHeads: cfg.n_heads = static_cast<int>(r.u32()); break;
      case Field::kNLayers: cfg.n_layers = static_cast<int>(r.u32()); break;
      case Field::kSrcVocab: cfg.src_vocab = static_cast<int>(r.u32()); break;
      case Field::kTgtVocab: cfg.tgt_vocab = static_cast<int>(r.u32()); break;
      case Field::kMaxLen: cfg.max_len = static_cast<int>(r.u32()); break;
      case Field::kDropout: cfg.dropout = r.f32(); break;
      case Field::kLabelSmoothing: cfg.label_smoothing = r.f32(); break;
      case Field::kDecoderKind:
        cfg.decoder_kind = r.u8() ? DecoderKind::kAan : DecoderKind::kSelfAttention;
        break;
      case Field::kUseFfn: cfg.use_ffn = r.u8() != 0; break;
      case Field::kUseGate: cfg.use_gate = r.u8() != 0; break;
      case Field::kTieEmbeddings: cfg.tie_target_embeddings = r.u8() != 0; break;
      case Field::kSeed: cfg.seed = r.u64(); break;
      default: r.skip(len); break;  // unknown field: tolerated
    }
  }
  for (std::uint8_t t = 1; t <= 14; ++t)
    if (!seen.count(t))
      throw CheckpointError(CheckpointError::Kind::kTruncated,
                            "checkpoint config missing field tag " + std::to_string(t));
  return cfg;
}

}  // namespace ckpt_detail

template <class T>
void save_checkpoint(TransformerModel<T>& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os)
    throw CheckpointError(CheckpointError::Kind::kIo, "cannot open for write: " + path);
  BinWriter w(os);
  w.bytes(ckpt_detail::kMagic, 4);
  w.u32(ckpt_detail::kVersion);
  ckpt_detail::write_config(w, model.config());

  auto params = model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (auto& [name, t] : params) {
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u8(static_cast<std::uint8_t>(t->ndim()));
    for (int i = 0; i < t->ndim(); ++i) w.u32(static_cast<std::uint32_t>(t->dim(i)));
    for (const T v : t->data()) w.f32(static_cast<float>(v));
  }
  os.flush();
  if (!os) throw CheckpointError(CheckpointError::Kind::kIo, "write failed: " + path);
}

inline ModelConfig peek_checkpoint_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw CheckpointError(CheckpointError::Kind::kIo, "cannot open for read: " + path);
  BinReader r(is);
  try {
    char magic[4];
    r.bytes(magic, 4);
    if (std::string(magic, 4) != std::string(ckpt_detail::kMagic, 4))
      throw CheckpointError(CheckpointError::Kind::kBadMagic,
                            "bad checkpoint magic in " + path);
    const std::uint32_t version = r.u32();
    if (version != ckpt_detail::kVersion)
      throw CheckpointError(CheckpointError::Kind::kBadVersion,
                            "unsupported checkpoint version " + std::to_string(version));
    return ckpt_detail::read_config(r);
  } catch (const TruncatedInput& e) {
    throw CheckpointError(CheckpointError::Kind::kTruncated, e.what());
  }
}

template <class T>
TransformerModel<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw CheckpointError(CheckpointError::Kind::kIo, "cannot open for read: " + path);
  BinReader r(is);
  try {
    char magic[4];
    r.bytes(magic, 4);
    if (std::string(magic, 4) != std::string(ckpt_detail::kMagic, 4))
      throw CheckpointError(CheckpointError::Kind::kBadMagic,
                            "bad checkpoint magic in " + path);
    const std::uint32_t version = r.u32();
    if (version != ckpt_detail::kVersion)
      throw CheckpointError(CheckpointError::Kind::kBadVersion,
                            "unsupported checkpoint version " + std::to_string(version));
    const ModelConfig cfg = ckpt_detail::read_config(r);

    TransformerModel<T> model(cfg);
    auto params = model.parameters();
    const std::uint32_t count = r.u32();
    if (count != params.size())
      throw CheckpointError(CheckpointError::Kind::kBadShape,
                            "tensor count " + std::to_string(count) + " != expected " +
                                std::to_string(params.size()));
    for (std::uint32_t i = 0; i < count; ++i) {
      const std::uint16_t name_len = r.u16();
      std::string name(name_len, '\0');
      r.bytes(name.data(), name_len);
      auto& [want_name, t] = params[i];
      if (name != want_name)
        throw CheckpointError(CheckpointError::Kind::kBadShape,
                              "tensor '" + name + "' where '" + want_name + "' expected");
      const int rank = r.u8();
      if (rank != t->ndim())
        throw CheckpointError(CheckpointError::Kind::kBadShape,
                              "tensor '" + name + "' rank " + std::to_string(rank));
      for (int k = 0; k < rank; ++k) {
        const std::uint32_t dim = r.u32();
        if (dim != static_cast<std::uint32_t>(t->dim(k)))
          throw CheckpointError(
              CheckpointError::Kind::kBadShape,
              "tensor '" + name + "' dim " + std::to_string(k) + " is " +
                  std::to_string(dim) + ", header says " + std::to_string(t->dim(k)));
      }
      for (auto& v : t->data()) v = static_cast<T>(r.f32());
    }
    return model;
  } catch (const TruncatedInput& e) {
    throw CheckpointError(CheckpointError::Kind::kTruncated, e.what());
  }
}

// Guards a run against loading a checkpoint built for another setup.
inline void require_config_match(const ModelConfig& loaded, const ModelConfig& expected) {
  if (loaded.decoder_kind != expected.decoder_kind)
    throw CheckpointError(
        CheckpointError::Kind::kConfigMismatch,
        "checkpoint decoder kind '" + decoder_kind_name(loaded.decoder_kind) +
            "' does not match configured '" + decoder_kind_name(expected.decoder_kind) + "'");
  if (!(loaded == expected))
    throw CheckpointError(CheckpointError::Kind::kConfigMismatch,
                          "checkpoint config does not match the configured run");
}

}  // namespace aan
