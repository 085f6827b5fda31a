#pragma once

#include <string>
#include <vector>

namespace faim {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// Groups: "grad", "oracle", "hand", "buckets", "purity", "complexity",
// "determinism". Each check never throws; failures carry the reason.
std::vector<std::string> check_groups();
std::vector<CheckResult> run_check_group(const std::string& group);
std::vector<CheckResult> run_all_checks();

}  // namespace faim
