#include "dtreg/vocab.hpp"

#include <algorithm>

namespace dtreg {

bool is_query_sector(std::string_view token) noexcept {
  return std::find(kQuerySectors.begin(), kQuerySectors.end(), token) != kQuerySectors.end();
}

bool is_sector_token(std::string_view token) noexcept {
  return token == kNoneOfTheAbove || is_query_sector(token);
}

bool is_rdc_token(std::string_view token) noexcept {
  return std::find(kRdcTokens.begin(), kRdcTokens.end(), token) != kRdcTokens.end();
}

std::optional<RegulationMeta> find_regulation(std::string_view id) noexcept {
  for (const auto& r : kRegulations) {
    if (r.id == id) return r;
  }
  return std::nullopt;
}

bool is_regulation(std::string_view id) noexcept { return find_regulation(id).has_value(); }

std::string_view to_string(Jurisdiction j) noexcept { return j == Jurisdiction::EU ? "EU" : "US"; }

}  // namespace dtreg
