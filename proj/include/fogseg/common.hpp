#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fogseg {

// Error taxonomy. The CLI maps these onto exit codes:
//   ConfigError -> 2, DataError -> 3, NumericError -> 4.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : ConfigError {
  using ConfigError::ConfigError;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IntegrityError : DataError {
  using DataError::DataError;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DimensionError : NumericError {
  using NumericError::NumericError;
};
struct DomainError : NumericError {
  using NumericError::NumericError;
};
struct SpliceError : NumericError {
  using NumericError::NumericError;
};
struct RangeError : NumericError {
  using NumericError::NumericError;
};
struct DegenerateBatchError : NumericError {
  using NumericError::NumericError;
};

// FNV-1a, used for config fingerprints and stage cache keys.
inline constexpr uint64_t kFnvOffset = 0xcbf29ce484222325ull;

inline uint64_t fnv1a64(std::string_view s, uint64_t h = kFnvOffset) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

// splitmix64; used to derive independent sub-seeds from a master seed.
inline uint64_t mix_seed(uint64_t seed, uint64_t salt) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline uint64_t mix_seed(uint64_t seed, std::string_view salt) {
  return mix_seed(seed, fnv1a64(salt));
}

}  // namespace fogseg
