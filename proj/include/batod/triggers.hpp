#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "batod/errors.hpp"
#include "batod/image.hpp"

namespace batod {

constexpr float kDefaultEpsilon = 4.0f / 255.0f;
constexpr float kEpsilonSlack = 1e-7f;

/// Per-class trigger pair: K in-triggers and K out-triggers, each an
/// l-infinity bounded perturbation with the image's shape (HWC layout).
struct TriggerBundle {
  int class_count = 0;
  int h = 0, w = 0, c = 0;
  float epsilon = kDefaultEpsilon;
  std::vector<Image> in_triggers;   // index j-1 holds the trigger of class j
  std::vector<Image> out_triggers;

  const Image& in_trigger(int label) const { return in_triggers[static_cast<std::size_t>(label - 1)]; }
  const Image& out_trigger(int label) const { return out_triggers[static_cast<std::size_t>(label - 1)]; }
};

inline void check_bundle_invariants(const TriggerBundle& b) {
  require(b.class_count >= 1, ErrorCode::invariant_violation, "bundle has no classes");
  require(b.in_triggers.size() == static_cast<std::size_t>(b.class_count) &&
              b.out_triggers.size() == static_cast<std::size_t>(b.class_count),
          ErrorCode::invariant_violation, "bundle must hold exactly K triggers of each kind");
  require(b.epsilon > 0.0f, ErrorCode::invariant_violation, "epsilon must be positive");
  auto check_one = [&](const Image& d, const char* kind, int j) {
    require(d.h == b.h && d.w == b.w && d.c == b.c, ErrorCode::shape_mismatch,
            std::string(kind) + "-trigger " + std::to_string(j) + " shape differs from bundle shape");
    const float m = d.max_abs();
    require(m <= b.epsilon + kEpsilonSlack, ErrorCode::invariant_violation,
            std::string(kind) + "-trigger " + std::to_string(j) + " exceeds budget: max|delta| = " +
                std::to_string(m) + " > epsilon = " + std::to_string(b.epsilon));
  };
  for (int j = 1; j <= b.class_count; ++j) {
    check_one(b.in_trigger(j), "in", j);
    check_one(b.out_trigger(j), "out", j);
  }
}

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& in, const char* what) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4) fail(ErrorCode::truncated, std::string("truncated while reading ") + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f32(std::ostream& out, float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  put_u32(out, u);
}

inline float get_f32(std::istream& in, const char* what) {
  const std::uint32_t u = get_u32(in, what);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

inline void put_f32_array(std::ostream& out, const std::vector<float>& v) {
  // Little-endian host assumed for the bulk path; field order is still HWC
  // row-major as the format requires.
  static_assert(sizeof(float) == 4);
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(float)));
}

inline void get_f32_array(std::istream& in, std::vector<float>& v, const char* what) {
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
  if (static_cast<std::size_t>(in.gcount()) != v.size() * sizeof(float))
    fail(ErrorCode::truncated, std::string("truncated while reading ") + what);
}

}  // namespace detail

constexpr char kTriggerMagic[4] = {'B', 'T', 'R', 'G'};
constexpr std::uint32_t kTriggerVersion = 1;

/// Persists a bundle bit-exactly: magic "BTRG", u32 version/K/H/W/C, f32
/// epsilon, then K in-triggers followed by K out-triggers, each H*W*C f32
/// little-endian row-major (H, W, C). Refuses bundles violating invariants.
inline void save_triggers(const TriggerBundle& bundle, const std::filesystem::path& path) {
  check_bundle_invariants(bundle);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io_error, "cannot write trigger bundle " + path.string());
  out.write(kTriggerMagic, 4);
  detail::put_u32(out, kTriggerVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(bundle.class_count));
  detail::put_u32(out, static_cast<std::uint32_t>(bundle.h));
  detail::put_u32(out, static_cast<std::uint32_t>(bundle.w));
  detail::put_u32(out, static_cast<std::uint32_t>(bundle.c));
  detail::put_f32(out, bundle.epsilon);
  for (const auto& t : bundle.in_triggers) detail::put_f32_array(out, t.data);
  for (const auto& t : bundle.out_triggers) detail::put_f32_array(out, t.data);
  if (!out) fail(ErrorCode::io_error, "short write on " + path.string());
}

inline TriggerBundle load_triggers(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::missing_file, "cannot open trigger bundle " + path.string());

  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kTriggerMagic, 4) != 0)
    fail(ErrorCode::bad_magic, "not a trigger bundle: " + path.string());

  const std::uint32_t version = detail::get_u32(in, "version");
  if (version != kTriggerVersion)
    fail(ErrorCode::version_mismatch, "trigger bundle version " + std::to_string(version) +
                                          ", expected " + std::to_string(kTriggerVersion));

  TriggerBundle b;
  b.class_count = static_cast<int>(detail::get_u32(in, "class count"));
  b.h = static_cast<int>(detail::get_u32(in, "height"));
  b.w = static_cast<int>(detail::get_u32(in, "width"));
  b.c = static_cast<int>(detail::get_u32(in, "channels"));
  if (b.class_count < 1 || b.h < 1 || b.w < 1 || b.c < 1)
    fail(ErrorCode::shape_mismatch, "nonsensical bundle header in " + path.string());
  b.epsilon = detail::get_f32(in, "epsilon");

  auto read_block = [&](std::vector<Image>& dst, const char* what) {
    dst.reserve(static_cast<std::size_t>(b.class_count));
    for (int j = 0; j < b.class_count; ++j) {
      Image d(b.h, b.w, b.c);
      detail::get_f32_array(in, d.data, what);
      dst.push_back(std::move(d));
    }
  };
  read_block(b.in_triggers, "in-trigger payload");
  read_block(b.out_triggers, "out-trigger payload");

  check_bundle_invariants(b);
  return b;
}

}  // namespace batod
