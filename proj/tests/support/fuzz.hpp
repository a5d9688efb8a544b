#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mgtok/binary_io.hpp"
#include "mgtok/error.hpp"
#include "mgtok/numerics.hpp"

namespace mgtok::testing {

enum class Mutation { truncate, flip_bit, overwrite_byte, append, drop_range, zero_tail };

inline std::vector<std::uint8_t> mutate(std::span<const std::uint8_t> good, Mutation m, Rng& rng) {
  std::vector<std::uint8_t> out(good.begin(), good.end());
  switch (m) {
    case Mutation::truncate:
      out.resize(rng.below(good.size()));
      break;
    case Mutation::flip_bit: {
      const std::size_t at = rng.below(out.size());
      out[at] = static_cast<std::uint8_t>(out[at] ^ (1u << rng.below(8)));
      break;
    }
    case Mutation::overwrite_byte: {
      const std::size_t at = rng.below(out.size());
      out[at] = static_cast<std::uint8_t>(out[at] + 1 + rng.below(255));
      break;
    }
    case Mutation::append:
      for (std::size_t i = 0, n = 1 + rng.below(16); i < n; ++i) out.push_back(static_cast<std::uint8_t>(rng.below(256)));
      break;
    case Mutation::drop_range: {
      const std::size_t at = rng.below(out.size());
      const std::size_t n = 1 + rng.below(std::min<std::size_t>(32, out.size() - at));
      out.erase(out.begin() + static_cast<long>(at), out.begin() + static_cast<long>(at + n));
      break;
    }
    case Mutation::zero_tail: {
      const std::size_t at = rng.below(out.size());
      bool changed = false;
      for (std::size_t i = at; i < out.size(); ++i) {
        changed = changed || out[i] != 0;
        out[i] = 0;
      }
      if (!changed) out.pop_back();
      break;
    }
  }
  return out;
}

struct FuzzTally {
  std::size_t cases = 0;
  std::size_t structured = 0;  // FormatError or Error raised
  std::vector<std::string> failures;

  bool all_structured() const { return cases > 0 && structured == cases; }
};

/// Feeds `cases` damaged copies of `good` to `decode`. Every one must raise a
/// library error; silent success or a foreign exception is a failure.
inline FuzzTally fuzz_decoder(std::span<const std::uint8_t> good,
                              const std::function<void(std::span<const std::uint8_t>)>& decode,
                              std::size_t cases, Rng& rng) {
  FuzzTally t;
  constexpr Mutation kinds[] = {Mutation::truncate, Mutation::flip_bit,  Mutation::overwrite_byte,
                                Mutation::append,   Mutation::drop_range, Mutation::zero_tail};
  for (std::size_t i = 0; i < cases; ++i) {
    const Mutation m = kinds[i % 6];
    const auto bad = mutate(good, m, rng);
    ++t.cases;
    try {
      decode(bad);
      t.failures.push_back("case " + std::to_string(i) + ": accepted damaged input");
    } catch (const Error&) {
      ++t.structured;
    } catch (const std::exception& e) {
      t.failures.push_back("case " + std::to_string(i) + ": foreign exception " + e.what());
    }
  }
  return t;
}

/// Rewrites the payload of a container and re-seals it with a valid CRC, so
/// the decoder's structural checks (not the checksum) are exercised.
inline std::vector<std::uint8_t> reseal_mutated(std::span<const std::uint8_t> file, const FourCC& magic,
                                                std::uint32_t version, Rng& rng) {
  const auto payload = open_container(file, magic, version);
  std::vector<std::uint8_t> p(payload.begin(), payload.end());
  const auto m = static_cast<Mutation>(rng.below(6));
  if (!p.empty()) p = mutate(p, m, rng);
  return seal_container(magic, version, p);
}

}  // namespace mgtok::testing
