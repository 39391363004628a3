#pragma once

namespace ripo::cli {

// Entry point of the `ripo` tool. Returns the process exit code; failures
// print {"error": ..., "kind": ...} on stderr.
int run(int argc, char** argv);

}  // namespace ripo::cli
