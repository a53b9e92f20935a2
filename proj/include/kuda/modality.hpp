#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <string_view>

namespace kuda {

enum class Modality { text = 0, vision = 1, audio = 2 };

inline constexpr std::array<Modality, 3> kModalities{Modality::text, Modality::vision, Modality::audio};

inline constexpr std::size_t index_of(Modality m) { return static_cast<std::size_t>(m); }

inline std::string_view name_of(Modality m) {
  switch (m) {
    case Modality::text: return "text";
    case Modality::vision: return "vision";
    case Modality::audio: return "audio";
  }
  return "?";
}

inline Modality modality_from_name(std::string_view s) {
  if (s == "text") return Modality::text;
  if (s == "vision") return Modality::vision;
  if (s == "audio") return Modality::audio;
  throw std::invalid_argument("unknown modality '" + std::string(s) + "'");
}

/// One value per modality, indexed text/vision/audio.
template <typename T>
using PerModality = std::array<T, 3>;

}  // namespace kuda
