#pragma once

#include "smlm/cli.hpp"

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace smlm::testing {

/// Fresh directory under the system temp dir, removed on destruction.
struct TempDir
{
  std::filesystem::path path;
  explicit TempDir(const std::string& tag)
  {
    path = std::filesystem::temp_directory_path() /
           ("smlmforge_" + tag + "_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

inline std::string slurp(const std::string& path)
{
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline void spit(const std::string& path, const std::string& text)
{
  std::ofstream(path, std::ios::binary) << text;
}

struct CliRun
{
  int status;
  std::string out;
  std::string err;
};

/// Runs the command line in-process; the program name is prepended.
inline CliRun cli(std::vector<std::string> args)
{
  args.insert(args.begin(), "smlmforge");
  std::ostringstream out, err;
  const int status = run_cli(args, out, err);
  return {status, out.str(), err.str()};
}

} // namespace smlm::testing
