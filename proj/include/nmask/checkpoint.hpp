#pragma once

// Checkpoint file (little-endian):
//   "NMCK" | version u32 | flags u32 | epoch u64
//   classifier spec | [policy spec]             (flags bit 0: policy present)
//   classifier tensors | [policy tensors]       (declaration order)
//   [EmaState]                                  (flags bit 1)
//   [momentum buffers, classifier then policy]  (flags bit 2)
//
// A conv-stack spec is in_channels, height, width, blocks (u32 each), then
// `blocks` widths and `blocks` strides (u32). The classifier spec appends
// num_classes; the policy spec appends noise_h, noise_w (u32), zero_head (u8).
// A tensor is rank u32, dims u32 x rank, then f64 x numel.
// EmaState is tau_i f64, tau_d f64, h u32, w u32, alpha f64 x h*w, beta f64 x h*w.

#include <optional>
#include <string>
#include <vector>

#include "nmask/io.hpp"
#include "nmask/networks.hpp"

namespace nmask {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ClassifierNet classifier;
  std::optional<PolicyNet> policy;
  std::optional<EmaState> ema;
  std::optional<std::vector<Array>> classifier_momentum;
  std::optional<std::vector<Array>> policy_momentum;
  std::uint64_t epoch = 0;
};

namespace detail {

inline void write_stack(io::Writer& w, const ConvStackSpec& s) {
  w.u32(static_cast<std::uint32_t>(s.in_channels));
  w.u32(static_cast<std::uint32_t>(s.height));
  w.u32(static_cast<std::uint32_t>(s.width));
  w.u32(static_cast<std::uint32_t>(s.widths.size()));
  for (auto v : s.widths) w.u32(static_cast<std::uint32_t>(v));
  for (auto v : s.strides) w.u32(static_cast<std::uint32_t>(v));
}

inline ConvStackSpec read_stack(io::Reader& r) {
  ConvStackSpec s;
  s.in_channels = r.u32("spec.in_channels");
  s.height = r.u32("spec.height");
  s.width = r.u32("spec.width");
  const std::size_t blocks = r.u32("spec.blocks");
  if (blocks > 64) throw io::FormatError("'" + r.name() + "': implausible block count " + std::to_string(blocks));
  for (std::size_t i = 0; i < blocks; ++i) s.widths.push_back(r.u32("spec.widths"));
  for (std::size_t i = 0; i < blocks; ++i) s.strides.push_back(r.u32("spec.strides"));
  return s;
}

inline void write_array(io::Writer& w, const Array& a) {
  w.u32(static_cast<std::uint32_t>(a.rank()));
  for (auto d : a.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (double v : a.data()) w.f64(v);
}

inline Array read_array(io::Reader& r, const Shape& expected) {
  const std::size_t rank = r.u32("tensor.rank");
  Shape shape;
  for (std::size_t i = 0; i < rank; ++i) shape.push_back(r.u32("tensor.dims"));
  if (shape != expected)
    throw io::FormatError("'" + r.name() + "': tensor shape " + shape_str(shape) + " does not match spec " +
                          shape_str(expected));
  Array a(shape);
  r.need(a.numel() * 8, "tensor.data");
  for (auto& v : a.vec()) v = r.f64("tensor.data");
  return a;
}

inline void write_tensors(io::Writer& w, const std::vector<Tensor>& ts) {
  for (const auto& t : ts) write_array(w, t.value());
}

inline std::vector<Array> read_like(io::Reader& r, const std::vector<Tensor>& like) {
  std::vector<Array> out;
  for (const auto& t : like) out.push_back(read_array(r, t.shape()));
  return out;
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck) {
  io::Writer w;
  w.bytes("NMCK", 4);
  w.u32(kCheckpointVersion);
  std::uint32_t flags = 0;
  if (ck.policy) flags |= 1u;
  if (ck.ema) flags |= 2u;
  if (ck.classifier_momentum) flags |= 4u;
  w.u32(flags);
  w.u64(ck.epoch);

  const auto& cs = ck.classifier.spec();
  detail::write_stack(w, cs.body);
  w.u32(static_cast<std::uint32_t>(cs.num_classes));
  if (ck.policy) {
    const auto& ps = ck.policy->spec();
    detail::write_stack(w, ps.body);
    w.u32(static_cast<std::uint32_t>(ps.noise_h));
    w.u32(static_cast<std::uint32_t>(ps.noise_w));
    w.u8(ps.zero_head ? 1 : 0);
  }
  detail::write_tensors(w, ck.classifier.parameters());
  if (ck.policy) detail::write_tensors(w, ck.policy->parameters());
  if (ck.ema) {
    w.f64(ck.ema->tau_i);
    w.f64(ck.ema->tau_d);
    w.u32(static_cast<std::uint32_t>(ck.ema->alpha_dataset.dim(0)));
    w.u32(static_cast<std::uint32_t>(ck.ema->alpha_dataset.dim(1)));
    for (double v : ck.ema->alpha_dataset.data()) w.f64(v);
    for (double v : ck.ema->beta_dataset.data()) w.f64(v);
  }
  if (ck.classifier_momentum) {
    for (const auto& a : *ck.classifier_momentum) detail::write_array(w, a);
    if (ck.policy) {
      if (!ck.policy_momentum) throw ContractError("checkpoint: policy momentum missing");
      for (const auto& a : *ck.policy_momentum) detail::write_array(w, a);
    }
  }
  return w.buffer();
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  io::Writer w;
  const auto bytes = serialize_checkpoint(ck);
  w.bytes(bytes.data(), bytes.size());
  w.save(path);
}

inline Checkpoint parse_checkpoint(io::Reader r) {
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::string(magic, 4) != "NMCK") throw io::FormatError("'" + r.name() + "': bad magic (expected NMCK)");
  const auto version = r.u32("version");
  if (version != kCheckpointVersion)
    throw io::FormatError("'" + r.name() + "': unsupported checkpoint version " + std::to_string(version));
  const auto flags = r.u32("flags");
  Checkpoint ck;
  ck.epoch = r.u64("epoch");

  ClassifierSpec cs;
  cs.body = detail::read_stack(r);
  cs.num_classes = r.u32("spec.num_classes");
  std::optional<PolicySpec> ps;
  if (flags & 1u) {
    PolicySpec p;
    p.body = detail::read_stack(r);
    p.noise_h = r.u32("spec.noise_h");
    p.noise_w = r.u32("spec.noise_w");
    p.zero_head = r.u8("spec.zero_head") != 0;
    ps = p;
  }
  try {
    ck.classifier = ClassifierNet(cs, 0);
    if (ps) ck.policy = PolicyNet(*ps, 0);
  } catch (const ConfigError& e) {
    throw io::FormatError("'" + r.name() + "': invalid network spec: " + e.what());
  }
  ck.classifier.set_parameter_values(detail::read_like(r, ck.classifier.parameters()));
  if (ck.policy) ck.policy->set_parameter_values(detail::read_like(r, ck.policy->parameters()));
  if (flags & 2u) {
    EmaState s;
    s.tau_i = r.f64("ema.tau_i");
    s.tau_d = r.f64("ema.tau_d");
    const std::size_t h = r.u32("ema.h"), w = r.u32("ema.w");
    s.alpha_dataset = Array(Shape{h, w});
    s.beta_dataset = Array(Shape{h, w});
    r.need(2 * h * w * 8, "ema maps");
    for (auto& v : s.alpha_dataset.vec()) v = r.f64("ema.alpha");
    for (auto& v : s.beta_dataset.vec()) v = r.f64("ema.beta");
    ck.ema = s;
  }
  if (flags & 4u) {
    ck.classifier_momentum = detail::read_like(r, ck.classifier.parameters());
    if (ck.policy) ck.policy_momentum = detail::read_like(r, ck.policy->parameters());
  }
  if (r.remaining() != 0)
    throw io::FormatError("'" + r.name() + "': " + std::to_string(r.remaining()) + " trailing bytes");
  return ck;
}

inline Checkpoint load_checkpoint(const std::string& path) { return parse_checkpoint(io::Reader::from_file(path)); }

}  // namespace nmask
