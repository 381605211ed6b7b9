#ifndef OPADV_SELFCHECK_HPP_
#define OPADV_SELFCHECK_HPP_

#include <cstdint>
#include <ostream>

namespace opadv {

/// Gradient, GAE and clip-objective oracles on small random problems.
/// Prints one `PASS|FAIL name detail` line per check; true when all pass.
bool run_selfcheck(std::ostream& out, std::uint64_t seed);

}  // namespace opadv

#endif  // OPADV_SELFCHECK_HPP_
