#pragma once

#include <csba/recovery.hpp>

#include <string>
#include <vector>

namespace csba::cli {

constexpr int kSchemaVersion = 1;

/// Exit codes: 0 certified solve (or success for other commands), 2 solve
/// finished without a certificate, 1 error.
constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitUncertified = 2;

/// ASCII PLY with the landmarks (white) followed by the camera centers (red).
/// Coordinates are printed with 9 significant digits.
void export_ply(const Solution& sol, const std::string& path);

/// Entry point shared by the executable and the tests. args[0] is the
/// program name.
int run(const std::vector<std::string>& args);

}  // namespace csba::cli
