#pragma once

// Shared helpers for the unit and acceptance suites.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

namespace testsupport {

struct BonferroniCheck {
  bool exact = false;                 ///< alpha * s reproduces p0 bit-for-bit
  bool certified_impossible = false;  ///< no double at all multiplies back to p0
};

/// Double products are monotone in the multiplicand, so scanning the +-8 ulp
/// bracket around p0/s while the bracket's end products straddle p0 decides
/// conclusively whether an exact preimage of p0 under (* s) exists.
inline BonferroniCheck check_bonferroni(double alpha, double p0, std::size_t s) {
  BonferroniCheck out;
  const double sd = static_cast<double>(s);
  if (alpha * sd == p0) {
    out.exact = true;
    return out;
  }
  double lo = p0 / sd;
  double hi = lo;
  for (int i = 0; i < 8; ++i) {
    lo = std::nextafter(lo, 0.0);
    hi = std::nextafter(hi, 2.0);
  }
  if (!(lo * sd < p0 && hi * sd > p0)) return out;  // inconclusive bracket
  for (double a = lo; a <= hi; a = std::nextafter(a, 2.0)) {
    if (a * sd == p0) return out;  // a preimage exists but alpha missed it
  }
  out.certified_impossible = true;
  return out;
}

struct CliResult {
  int exit_code = -1;
  std::string stdout_text;
  std::string stderr_text;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

/// Run the built CLI with the given arguments, capturing output and the
/// process exit code.
inline CliResult run_cli(const std::string& args) {
  static int counter = 0;
  const auto dir = std::filesystem::temp_directory_path();
  const auto out_path = dir / ("genholdout_out_" + std::to_string(++counter) + ".txt");
  const auto err_path = dir / ("genholdout_err_" + std::to_string(counter) + ".txt");
  const std::string cmd = std::string(GENHOLDOUT_CLI_PATH) + " " + args + " > " +
                          out_path.string() + " 2> " + err_path.string();
  const int status = std::system(cmd.c_str());
  CliResult result;
  result.exit_code = (status >= 0 && WIFEXITED(status)) ? WEXITSTATUS(status) : -1;
  result.stdout_text = slurp(out_path);
  result.stderr_text = slurp(err_path);
  std::filesystem::remove(out_path);
  std::filesystem::remove(err_path);
  return result;
}

/// Fresh scratch directory under the system temp root.
inline std::filesystem::path make_temp_dir(const std::string& tag) {
  static int counter = 0;
  const auto dir = std::filesystem::temp_directory_path() /
                   ("genholdout_" + tag + "_" + std::to_string(::getpid()) + "_" +
                    std::to_string(++counter));
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testsupport
