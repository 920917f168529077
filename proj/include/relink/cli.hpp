#pragma once

#include <functional>
#include <iosfwd>
#include <memory>

#include "relink/llm_gateway.hpp"

namespace relink {

struct CliHooks {
    /// Replaces make_backend (tests plug in oracle mocks here).
    std::function<std::unique_ptr<Backend>(const GatewayConfig&)> backend_factory;
    std::ostream* out = nullptr;  // default std::cout
    std::ostream* err = nullptr;  // default std::cerr
};

/// Entry point of the `relink` tool. Returns the process exit code: 0 on
/// success, 1 on pipeline errors, 2 on usage errors.
int run_cli(int argc, const char* const* argv, const CliHooks& hooks = {});

} // namespace relink
