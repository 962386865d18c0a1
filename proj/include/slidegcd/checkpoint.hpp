#pragma once

// SGCK checkpoint layout (little-endian):
//   "SGCK" | u32 version | string config-JSON | string arm
//   section "backbone" | section "agg" | section "gcn" | section "buffer"
// A string is u32 length + bytes. A parameter section is its name string,
// u32 parameter count, then per parameter: name, u32 rows, u32 cols,
// rows*cols f64 row-major. The buffer section is its name string, u32 slot
// count, per slot (id string, i32 label, u64 insertion_step, D_S f64),
// then the u64 next insertion step.

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "slidegcd/binary_io.hpp"
#include "slidegcd/trainer.hpp"

namespace slidegcd {

inline constexpr char kCheckpointMagic[5] = "SGCK";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Model model;
  Arm arm = Arm::SlideGcd;
};

namespace detail {

inline void write_params(std::ostream& out, const std::string& section, const std::vector<const Parameter*>& ps) {
  io::put_string(out, section);
  io::put_u32(out, static_cast<std::uint32_t>(ps.size()));
  for (const auto* p : ps) {
    io::put_string(out, p->name);
    io::put_u32(out, static_cast<std::uint32_t>(p->value.rows()));
    io::put_u32(out, static_cast<std::uint32_t>(p->value.cols()));
    for (double v : p->value.values()) io::put_f64(out, v);
  }
}

inline void expect_section(std::istream& in, const std::string& name) {
  const std::string got = io::get_string(in, "section name", 256);
  if (got != name) throw Error(ErrorCode::ParseError, "expected section '" + name + "', found '" + got + "'");
}

// Reads into parameters already shaped by the config; shapes must agree.
inline void read_params(std::istream& in, const std::string& section, const std::vector<Parameter*>& ps) {
  expect_section(in, section);
  const std::uint32_t count = io::get_u32(in, "parameter count");
  if (count != ps.size()) throw Error(ErrorCode::ParseError, section + ": parameter count " + std::to_string(count));
  for (auto* p : ps) {
    const std::string name = io::get_string(in, "parameter name", 256);
    if (name != p->name) throw Error(ErrorCode::ParseError, section + ": expected " + p->name + ", found " + name);
    const std::uint32_t rows = io::get_u32(in, "rows");
    const std::uint32_t cols = io::get_u32(in, "cols");
    if (rows != p->value.rows() || cols != p->value.cols()) {
      throw Error(ErrorCode::DimensionMismatch, name + " stored as " + std::to_string(rows) + "x" +
                                                    std::to_string(cols) + ", config says " + p->value.shape_str());
    }
    for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] = io::get_f64(in, "parameter value");
    p->zero_grad();
  }
}

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const Model& m, Arm arm) {
  out.write(kCheckpointMagic, 4);
  io::put_u32(out, kCheckpointVersion);
  io::put_string(out, to_json(m.cfg).dump());
  io::put_string(out, arm_name(arm));
  detail::write_params(out, "backbone", m.backbone.all());
  detail::write_params(out, "agg", m.agg.all());
  detail::write_params(out, "gcn", m.gcn.all());

  io::put_string(out, "buffer");
  io::put_u32(out, static_cast<std::uint32_t>(m.buffer.size()));
  for (const auto& s : m.buffer.slots()) {
    io::put_string(out, s.slide_id);
    io::put_i32(out, s.label);
    io::put_u64(out, s.insertion_step);
    for (double v : s.embedding) io::put_f64(out, v);
  }
  io::put_u64(out, m.buffer.next_step());
  if (!out) throw Error(ErrorCode::IoError, "checkpoint write failed");
}

inline Checkpoint read_checkpoint(std::istream& in) {
  io::expect_magic(in, kCheckpointMagic);
  const std::uint32_t version = io::get_u32(in, "version");
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::ParseError, "unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.model.cfg = parse_config(io::get_string(in, "config"));
  const std::string arm = io::get_string(in, "arm", 64);
  if (arm == arm_name(Arm::SlideGcd)) ck.arm = Arm::SlideGcd;
  else if (arm == arm_name(Arm::MilOnly)) ck.arm = Arm::MilOnly;
  else throw Error(ErrorCode::ParseError, "unknown arm '" + arm + "'");

  // Allocate shapes from the config, then overwrite every value.
  ck.model = Model::init(ck.model.cfg);
  detail::read_params(in, "backbone", ck.model.backbone.all());
  detail::read_params(in, "agg", ck.model.agg.all());
  detail::read_params(in, "gcn", ck.model.gcn.all());

  detail::expect_section(in, "buffer");
  const std::uint32_t slots = io::get_u32(in, "slot count");
  if (slots > ck.model.cfg.buffer_capacity) throw Error(ErrorCode::CapacityExceeded, "stored buffer slots");
  std::deque<BufferSlot> restored;
  for (std::uint32_t i = 0; i < slots; ++i) {
    BufferSlot s;
    s.slide_id = io::get_string(in, "slot id", 1u << 16);
    s.label = io::get_i32(in, "slot label");
    s.insertion_step = io::get_u64(in, "slot step");
    s.embedding.resize(ck.model.cfg.d_s);
    for (auto& v : s.embedding) v = io::get_f64(in, "slot embedding");
    restored.push_back(std::move(s));
  }
  ck.model.buffer.restore(std::move(restored), io::get_u64(in, "next step"));
  return ck;
}

inline void save_checkpoint(const std::string& path, const Model& m, Arm arm) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path + " for writing");
  write_checkpoint(out, m, arm);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  return read_checkpoint(in);
}

}  // namespace slidegcd
