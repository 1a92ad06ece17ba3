#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace dtreg {

// Query sectors plus the explicit escape token used by the sector classifier.
inline constexpr std::array<std::string_view, 12> kQuerySectors = {
    "banking_finance",
    "healthcare_pharma",
    "insurance",
    "ecommerce_retail",
    "telecom_network_security",
    "social_media",
    "education_learning_analytics",
    "iot_smart_systems",
    "government_public_admin",
    "cybersecurity_intrusion_detection",
    "hr_recruitment",
    "transportation_logistics",
};

inline constexpr std::string_view kNoneOfTheAbove = "none_of_the_above";

// Regulated data categories, in prompt order.
inline constexpr std::array<std::string_view, 13> kRdcTokens = {
    "Identifier_PII", "Contact_Info",  "Device_OnlineID", "Biometric",
    "Location_IoT",   "Health_Clinical", "Financial",     "Child_Data",
    "Demographic",    "Behavioural",   "Environmental",   "Operational_Business",
    "Other",
};

enum class Jurisdiction { EU, US };

struct RegulationMeta {
  std::string_view id;
  Jurisdiction jurisdiction;
  int reference_year;
};

// Regulation catalog with canonical reference years.
inline constexpr std::array<RegulationMeta, 13> kRegulations = {{
    {"HIPAA", Jurisdiction::US, 1996},
    {"HITECH", Jurisdiction::US, 2009},
    {"CCPA", Jurisdiction::US, 2018},
    {"CPRA", Jurisdiction::US, 2020},
    {"GDPR", Jurisdiction::EU, 2018},
    {"ePrivacy Directive", Jurisdiction::EU, 2002},
    {"NIS2", Jurisdiction::EU, 2023},
    {"PSD2", Jurisdiction::EU, 2016},
    {"EU eHealth Network", Jurisdiction::EU, 2011},
    {"GLBA", Jurisdiction::US, 1999},
    {"COPPA", Jurisdiction::US, 1998},
    {"FERPA", Jurisdiction::US, 1974},
    {"ECPA", Jurisdiction::US, 1986},
}};

bool is_query_sector(std::string_view token) noexcept;
bool is_sector_token(std::string_view token) noexcept;  // 12 sectors + escape
bool is_rdc_token(std::string_view token) noexcept;
bool is_regulation(std::string_view id) noexcept;
std::optional<RegulationMeta> find_regulation(std::string_view id) noexcept;
std::string_view to_string(Jurisdiction j) noexcept;

}  // namespace dtreg
