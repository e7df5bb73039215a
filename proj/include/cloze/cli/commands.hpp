#pragma once

#include <string>
#include <vector>

namespace cloze::cli {

/// Process exit codes; stable for scripting.
enum ExitCode : int {
  kExitSuccess = 0,
  kExitInvariantFailure = 1,
  kExitConfigError = 2,
  /// I/O failures and other runtime errors.
  kExitRuntimeError = 3,
};

/// Entry point of the `cloze` binary: build-vocab, pretrain, finetune, eval,
/// check, ablate, datascale and synth.
int run(int argc, const char* const* argv);
/// Same, with the arguments after the program name.
int run(const std::vector<std::string>& args);

}  // namespace cloze::cli
