#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "hsdf/global.hpp"

namespace hsdf {

// Submap directory:
//   submap.cfg     id, base poses, grid layout, frame indices
//   poses.txt      frame pose estimates in the submap frame
//   gt_poses.txt   ground-truth frame poses in the submap frame
//   frames/NNNNNN.ply
//   grid.bin       features and decoder, once a map exists
// A graph directory holds submap directories named 000, 001, ...

void save_submap_dir(const std::filesystem::path& dir, const Submap& submap, const Decoder* decoder = nullptr);
/// Loads features from grid.bin when present; `decoder` receives its decoder.
Submap load_submap_dir(const std::filesystem::path& dir, Decoder* decoder = nullptr, bool* has_grid = nullptr);

std::vector<std::filesystem::path> graph_submap_dirs(const std::filesystem::path& dir);
void save_graph_dir(const std::filesystem::path& dir, const SubmapGraph& graph, const Decoder* decoder = nullptr);
SubmapGraph load_graph_dir(const std::filesystem::path& dir, Decoder* decoder = nullptr, bool* has_grids = nullptr);

/// Exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitUsage = 2,
  kExitBadConfig = 3,
  kExitIo = 4,
  kExitUncovered = 5,
};

/// Runs one command line (args exclude the program name).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hsdf
