#ifndef SCHEMA_FORGE_INTENT_HPP
#define SCHEMA_FORGE_INTENT_HPP

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "schema_forge/corpus.hpp"

namespace schema_forge {

/// Concept names filled into each intent role.
using RoleConcepts = std::map<IntentRole, std::vector<std::string>>;

/// Canonical intent string: roles in Action, Problem, Argument, Question order
/// joined by '-'; the Argument concepts sit in parentheses. Concept names within
/// a role are sorted and de-duplicated and joined by ','.
///   {Action:[Check], Argument:[Document]}              -> "Check-(Document)"
///   {Action:[Arrival], Argument:[Time,Loan], Question:[Consultant]}
///                                                      -> "Arrival-(Loan,Time)-Consultant"
inline std::string canonical_intent(const RoleConcepts& rc) {
  std::string out;
  for (auto role : kAllRoles) {
    auto it = rc.find(role);
    if (it == rc.end() || it->second.empty()) continue;
    auto names = it->second;
    std::sort(names.begin(), names.end());
    names.erase(std::unique(names.begin(), names.end()), names.end());
    std::string part;
    for (const auto& n : names) part += (part.empty() ? "" : ",") + n;
    if (role == IntentRole::Argument) part = "(" + part + ")";
    if (!out.empty()) out += '-';
    out += part;
  }
  return out;
}

}  // namespace schema_forge

#endif
