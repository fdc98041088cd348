#pragma once

#include <array>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>

#include "rsca/ops.hpp"
#include "rsca/parameter.hpp"

namespace rsca {

/// Positive rational, e.g. "1/4", "0.25" or "1".
struct Fraction {
  std::int64_t num = 1;
  std::int64_t den = 1;

  static Fraction parse(const std::string& text) {
    Fraction f;
    try {
      if (auto slash = text.find('/'); slash != std::string::npos) {
        f.num = std::stoll(text.substr(0, slash));
        f.den = std::stoll(text.substr(slash + 1));
      } else if (text.find('.') != std::string::npos) {
        const double v = std::stod(text);
        f.den = 1 << 20;
        f.num = static_cast<std::int64_t>(std::llround(v * static_cast<double>(f.den)));
      } else {
        f.num = std::stoll(text);
      }
    } catch (const std::exception&) {
      throw ValidationError("scale: cannot parse '" + text + "'");
    }
    if (f.num <= 0 || f.den <= 0) throw ValidationError("scale must be positive, got '" + text + "'");
    const std::int64_t g = std::gcd(f.num, f.den);
    f.num /= g;
    f.den /= g;
    return f;
  }

  bool divides_evenly(std::size_t v) const { return (static_cast<std::int64_t>(v) * num) % den == 0; }
  std::size_t apply(std::size_t v) const { return static_cast<std::size_t>(static_cast<std::int64_t>(v) * num / den); }
  std::string str() const { return den == 1 ? std::to_string(num) : std::to_string(num) + "/" + std::to_string(den); }
  bool operator==(const Fraction&) const = default;
};

/// Architectural hyperparameters. Widths and input size are stored unscaled; the scaled
/// accessors are what the network uses.
struct ModelConfig {
  std::size_t input_size = 256;
  std::size_t input_channels = 3;
  std::array<std::size_t, 4> stage_channels{64, 128, 256, 512};
  std::array<PoolMode, 4> stage_pool{PoolMode::avg, PoolMode::max, PoolMode::avg, PoolMode::max};
  std::size_t window = 4;
  std::size_t heads = 8;
  std::size_t swin_blocks_per_stage = 2;
  std::size_t decoder_final_filters = 40;
  bool relative_position_bias = false;
  Fraction scale{};

  std::size_t input() const { return scale.apply(input_size); }
  std::size_t channels(std::size_t stage) const { return scale.apply(stage_channels.at(stage)); }
  /// Rounded up so that scales which do not divide 40 still leave at least one filter.
  std::size_t final_filters() const {
    const auto scaled = (static_cast<std::int64_t>(decoder_final_filters) * scale.num + scale.den - 1) / scale.den;
    return static_cast<std::size_t>(std::max<std::int64_t>(1, scaled));
  }
  /// Spatial size at which encoder stage s (0-based) operates, before its pooling.
  std::size_t stage_resolution(std::size_t stage) const { return input() >> stage; }
  /// Spatial size of encoder stage s output (after pooling): input / 2^(s+1).
  std::size_t stage_output_resolution(std::size_t stage) const { return input() >> (stage + 1); }

  static ModelConfig scaled(Fraction f) {
    ModelConfig c;
    c.scale = f;
    return c;
  }

  void validate() const {
    auto fail = [](const std::string& why) { throw ValidationError("invalid model config: " + why); };
    if (input_channels == 0) fail("input_channels must be >= 1");
    if (!scale.divides_evenly(input_size)) fail("scale " + scale.str() + " does not divide input size");
    if (input() == 0 || input() % 16 != 0) fail("scaled input size must be a positive multiple of 16");
    for (std::size_t s = 0; s < 4; ++s) {
      if (!scale.divides_evenly(stage_channels[s]) || channels(s) == 0) {
        fail("scale " + scale.str() + " does not divide stage " + std::to_string(s + 1) + " channels");
      }
      if (s > 0 && stage_channels[s] != 2 * stage_channels[s - 1]) fail("stage channels must double each stage");
    }
    if (window == 0) fail("window must be >= 1");
    if (swin_blocks_per_stage == 0) fail("swin_blocks_per_stage must be >= 1");
    for (std::size_t s : {2u, 3u}) {
      if (stage_resolution(s) % window != 0) {
        fail("window " + std::to_string(window) + " does not divide stage " + std::to_string(s + 1) +
             " resolution " + std::to_string(stage_resolution(s)));
      }
      if (heads == 0 || channels(s) % heads != 0) {
        fail(std::to_string(heads) + " heads do not divide stage " + std::to_string(s + 1) + " width " +
             std::to_string(channels(s)));
      }
    }
  }

  /// Canonical text of every field that changes the parameter manifest or forward semantics.
  std::string canonical() const {
    std::ostringstream os;
    os << "input=" << input() << ";in_ch=" << input_channels << ";ch=";
    for (std::size_t s = 0; s < 4; ++s) os << channels(s) << (s < 3 ? "," : "");
    os << ";pool=";
    for (std::size_t s = 0; s < 4; ++s) os << (stage_pool[s] == PoolMode::avg ? "avg" : "max") << (s < 3 ? "," : "");
    os << ";window=" << window << ";heads=" << heads << ";blocks=" << swin_blocks_per_stage
       << ";final=" << final_filters() << ";relbias=" << (relative_position_bias ? 1 : 0);
    return os.str();
  }

  std::uint32_t hash() const {
    const std::uint64_t h = fnv1a64(canonical());
    return static_cast<std::uint32_t>(h ^ (h >> 32));
  }
};

}  // namespace rsca
