#pragma once

// Tabulated heat index (temperature x relative humidity) and its risk bands.

#include "stmort/types.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace stmort {

enum class HeatCategory { None = 0, StrongDiscomfort, SevereMalaise, IncreasedRisk, SeriousRisk };

inline const char* category_name(HeatCategory c) {
  switch (c) {
    case HeatCategory::None: return "none";
    case HeatCategory::StrongDiscomfort: return "pink";
    case HeatCategory::SevereMalaise: return "yellow";
    case HeatCategory::IncreasedRisk: return "orange";
    case HeatCategory::SeriousRisk: return "red";
  }
  return "?";
}

struct HeatIndexTable {
  static constexpr int kMinTemp = 22;
  static constexpr int kMaxTemp = 42;
  static constexpr int kMinHumidity = 25;
  static constexpr int kMaxHumidity = 100;
  static constexpr int kHumidityStep = 5;
  static constexpr int kRows = kMaxTemp - kMinTemp + 1;
  static constexpr int kCols = (kMaxHumidity - kMinHumidity) / kHumidityStep + 1;

  // Lower edges of the pink / yellow / orange / red bands.
  static constexpr std::array<int, 4> kBandStart{35, 40, 46, 54};

  // Row r is temperature 22 + r degC, column c is humidity 25 + 5c percent.
  static constexpr std::array<std::array<int, kCols>, kRows> kValues{{
      {22, 22, 22, 22, 23, 24, 25, 25, 26, 27, 27, 28, 29, 30, 30, 31},
      {23, 23, 23, 24, 25, 25, 26, 27, 28, 28, 29, 30, 31, 32, 32, 33},
      {24, 24, 24, 25, 26, 27, 28, 28, 29, 30, 31, 32, 33, 33, 34, 35},
      {25, 25, 26, 27, 27, 28, 29, 30, 31, 32, 33, 34, 34, 35, 36, 37},
      {26, 26, 27, 28, 29, 30, 31, 32, 33, 34, 34, 35, 36, 37, 38, 39},
      {27, 27, 28, 29, 30, 31, 32, 33, 34, 35, 36, 37, 38, 39, 40, 41},
      {28, 29, 30, 31, 32, 33, 34, 35, 36, 37, 38, 39, 40, 41, 42, 43},
      {29, 30, 31, 32, 33, 35, 36, 37, 38, 39, 40, 41, 42, 43, 45, 46},
      {30, 32, 33, 34, 35, 36, 37, 39, 40, 41, 42, 43, 45, 46, 47, 48},
      {32, 33, 34, 35, 37, 38, 39, 40, 42, 43, 44, 45, 47, 48, 49, 50},
      {33, 34, 36, 37, 38, 40, 41, 42, 44, 45, 46, 48, 49, 50, 52, 53},
      {34, 36, 37, 39, 40, 41, 43, 44, 46, 47, 48, 50, 51, 53, 54, 55},
      {36, 37, 39, 40, 42, 43, 45, 46, 48, 49, 51, 52, 54, 55, 57, 58},
      {37, 39, 40, 42, 44, 45, 47, 48, 50, 51, 53, 54, 56, 58, 59, 61},
      {39, 40, 42, 44, 45, 47, 49, 50, 52, 54, 55, 57, 59, 60, 62, 63},
      {40, 42, 44, 45, 47, 49, 51, 52, 54, 56, 58, 59, 61, 63, 65, 66},
      {42, 44, 45, 47, 49, 51, 53, 55, 56, 58, 60, 62, 64, 66, 67, 69},
      {43, 45, 47, 49, 51, 53, 55, 57, 59, 61, 63, 65, 66, 68, 70, 72},
      {45, 47, 49, 51, 53, 55, 57, 59, 61, 63, 65, 67, 69, 71, 73, 75},
      {46, 48, 51, 53, 55, 57, 59, 61, 64, 66, 68, 70, 72, 74, 76, 79},
      {48, 50, 52, 55, 57, 59, 62, 64, 66, 68, 71, 73, 75, 77, 80, 82},
  }};

  // Printed shading per cell, same layout as kValues: N none, P pink,
  // Y yellow, O orange, R red. It follows kBandStart except at 31 degC / 55 %,
  // where 39 is shaded yellow.
  static constexpr std::array<const char*, kRows> kShading{{
      "NNNNNNNNNNNNNNNN",  // 22
      "NNNNNNNNNNNNNNNN",  // 23
      "NNNNNNNNNNNNNNNP",  // 24
      "NNNNNNNNNNNNNPPP",  // 25
      "NNNNNNNNNNNPPPPP",  // 26
      "NNNNNNNNNPPPPPYY",  // 27
      "NNNNNNNPPPPPYYYY",  // 28
      "NNNNNPPPPPYYYYYO",  // 29
      "NNNNPPPPYYYYYOOO",  // 30
      "NNNPPPYYYYYYOOOO",  // 31
      "NNPPPYYYYYOOOOOO",  // 32
      "NPPPYYYYOOOOOORR",  // 33
      "PPPYYYYOOOOORRRR",  // 34
      "PPYYYYOOOOORRRRR",  // 35
      "PYYYYOOOORRRRRRR",  // 36
      "YYYYOOOORRRRRRRR",  // 37
      "YYYOOOORRRRRRRRR",  // 38
      "YYOOOORRRRRRRRRR",  // 39
      "YOOOORRRRRRRRRRR",  // 40
      "OOOORRRRRRRRRRRR",  // 41
      "OOORRRRRRRRRRRRR",  // 42
  }};

  static constexpr int value_at(int temp_c, int humidity_pct) {
    return kValues[static_cast<std::size_t>(temp_c - kMinTemp)]
                  [static_cast<std::size_t>((humidity_pct - kMinHumidity) / kHumidityStep)];
  }

  static constexpr HeatCategory shading_at(int temp_c, int humidity_pct) {
    switch (kShading[static_cast<std::size_t>(temp_c - kMinTemp)]
                    [static_cast<std::size_t>((humidity_pct - kMinHumidity) / kHumidityStep)]) {
      case 'P': return HeatCategory::StrongDiscomfort;
      case 'Y': return HeatCategory::SevereMalaise;
      case 'O': return HeatCategory::IncreasedRisk;
      case 'R': return HeatCategory::SeriousRisk;
      default: return HeatCategory::None;
    }
  }

  /// Band of a value by the lower edges in kBandStart.
  static constexpr HeatCategory category_of(int value) {
    if (value >= kBandStart[3]) return HeatCategory::SeriousRisk;
    if (value >= kBandStart[2]) return HeatCategory::IncreasedRisk;
    if (value >= kBandStart[1]) return HeatCategory::SevereMalaise;
    if (value >= kBandStart[0]) return HeatCategory::StrongDiscomfort;
    return HeatCategory::None;
  }
};

struct HeatIndexResult {
  int value = 0;
  HeatCategory category = HeatCategory::None;
};

/// Nearest-cell lookup: temperature rounded to the nearest degree, humidity to
/// the nearest 5 %, both clamped to the table. The category is the cell's
/// printed shading.
inline HeatIndexResult heat_index(double temp_c, double humidity_pct) {
  if (!std::isfinite(temp_c) || !std::isfinite(humidity_pct))
    throw ValidationError("heat index needs finite temperature and humidity");
  const int t = std::clamp(static_cast<int>(std::lround(temp_c)), HeatIndexTable::kMinTemp, HeatIndexTable::kMaxTemp);
  const int h = std::clamp(static_cast<int>(std::lround(humidity_pct / HeatIndexTable::kHumidityStep)) *
                               HeatIndexTable::kHumidityStep,
                           HeatIndexTable::kMinHumidity, HeatIndexTable::kMaxHumidity);
  const int v = HeatIndexTable::value_at(t, h);
  return {v, HeatIndexTable::shading_at(t, h)};
}

}  // namespace stmort
