#pragma once

#include <cstdint>
#include <iosfwd>

#include "treecrf/runconfig.hpp"

namespace treecrf {

// Exit statuses: 0 success, 1 check/validation failure, 2 usage/IO error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFail = 1;
inline constexpr int kExitUsage = 2;

int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_parse(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_evaluate(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_bench(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_selfcheck(const RunConfig& cfg, std::ostream& out, std::ostream& err);

// Oracle cross-checks over seeded random inputs, one pass/fail line each.
// `corrupt_inside` deliberately skews the inside results so tests can prove
// the harness catches a broken kernel.
int run_selfcheck(std::ostream& out, std::uint64_t seed, int threads, bool corrupt_inside = false);

}  // namespace treecrf
